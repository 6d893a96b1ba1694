use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use clarity_stein_cli::{RunManifest, RunStatus, MANIFEST_FILE, SUMMARY_FILE, TRACE_FILE};

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_clarity-stein"));
    c.env_remove("CLARITY_STEIN_THREADS");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn manifest(dir: &Path) -> RunManifest {
    RunManifest::read(&dir.join(MANIFEST_FILE)).unwrap()
}

#[test]
fn run_happy_path_writes_trace_and_manifest() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("r");
    let o = run(&["run", "--env", "1", "--seed", "7", "--duration", "2", "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let csv = fs::read_to_string(out.join(TRACE_FILE)).unwrap();
    assert!(csv.starts_with("t,px,py,vx,vy,ux,uy,mean_deficit,committed_cost,safe_candidates,in_collision\n"));
    assert_eq!(csv.lines().count(), 22);
    let m = manifest(&out);
    assert_eq!(m.status, RunStatus::Complete);
    assert_eq!(m.seed, Some(7));
    assert_eq!(m.env_id, Some(1));
    assert_eq!(m.plan_seconds.len(), 4);
    let cfg = m.config.unwrap();
    assert_eq!(cfg.episode.seed, 7);
    assert_eq!(cfg.episode.duration, 2.0);
    let summary: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join(SUMMARY_FILE)).unwrap()).unwrap();
    assert_eq!(summary["seed"], 7);
    assert_eq!(summary["audit"]["failures"], 0);
}

#[test]
fn rerun_from_manifest_is_byte_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    let o = run(&["run", "--env", "14", "--seed", "3", "--duration", "3", "--out", a.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let m = a.join(MANIFEST_FILE);
    let o = run(&["run", "--manifest", m.to_str().unwrap(), "--out", b.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert_eq!(fs::read(a.join(TRACE_FILE)).unwrap(), fs::read(b.join(TRACE_FILE)).unwrap());
    assert_eq!(manifest(&a).config, manifest(&b).config);
}

#[test]
fn exported_catalog_file_runs_like_the_catalog_id() {
    let tmp = tempfile::tempdir().unwrap();
    let cat = tmp.path().join("cat");
    let o = run(&["catalog", "--export", "--out", cat.to_str().unwrap()]);
    assert_eq!(code(&o), 0);
    let listing = String::from_utf8(o.stdout).unwrap();
    assert_eq!(listing.lines().count(), 16);
    assert_eq!(manifest(&cat).outputs.len(), 16);

    let by_id = tmp.path().join("id");
    let by_path = tmp.path().join("path");
    let file = cat.join("env_08.toml");
    for (env, out) in [("8", &by_id), (file.to_str().unwrap(), &by_path)] {
        let o = run(&["run", "--env", env, "--seed", "2", "--duration", "2", "--out", out.to_str().unwrap()]);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
    }
    assert_eq!(fs::read(by_id.join(TRACE_FILE)).unwrap(), fs::read(by_path.join(TRACE_FILE)).unwrap());
}

#[test]
fn lawnmower_and_ungated_flags_are_recorded() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("lm");
    let o = run(&["run", "--env", "13", "--planner", "lawnmower", "--no-gatekeeper", "--duration", "2", "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let cfg = manifest(&out).config.unwrap();
    assert!(!cfg.gatekeeper.enabled);
    assert_eq!(cfg.episode.planner, clarity_stein::config::PlannerKind::Lawnmower);
    let csv = fs::read_to_string(out.join(TRACE_FILE)).unwrap();
    assert!(csv.lines().skip(1).all(|l| l.split(',').nth(8) == Some("NaN")));
}

#[test]
fn snapshots_are_dumped_on_request() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("s");
    let o = run(&["run", "--env", "6", "--duration", "1", "--snapshot-every", "5", "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let text = fs::read_to_string(out.join("clarity_snapshots.csv")).unwrap();
    let rows: Vec<&str> = text.lines().skip(1).collect();
    assert_eq!(rows.len(), 3);
    assert_eq!(rows[0].split(',').nth(2).unwrap().split(' ').count(), 100);
}

#[test]
fn config_errors_exit_2_and_name_the_key() {
    let tmp = tempfile::tempdir().unwrap();
    let cat = tmp.path().join("cat");
    assert_eq!(code(&run(&["catalog", "--export", "--out", cat.to_str().unwrap()])), 0);
    let base = fs::read_to_string(cat.join("env_01.toml")).unwrap();

    let unknown = tmp.path().join("unknown.toml");
    fs::write(&unknown, base.replacen("[grid]\n", "[grid]\ncolour = 3\n", 1)).unwrap();
    let o = run(&["run", "--env", unknown.to_str().unwrap(), "--out", tmp.path().join("x").to_str().unwrap()]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("colour"), "{}", stderr(&o));
    assert!(!tmp.path().join("x").exists());

    let padding = tmp.path().join("padding.toml");
    fs::write(&padding, base.replacen("padding = 0.1", "padding = 0.01", 1)).unwrap();
    let o = run(&["run", "--env", padding.to_str().unwrap(), "--out", tmp.path().join("x").to_str().unwrap()]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("padding"), "{}", stderr(&o));

    let missing = tmp.path().join("nope.toml");
    let o = run(&["run", "--env", missing.to_str().unwrap(), "--out", tmp.path().join("x").to_str().unwrap()]);
    assert_eq!(code(&o), 2);

    let o = run(&["run", "--env", "0", "--out", tmp.path().join("x").to_str().unwrap()]);
    assert_eq!(code(&o), 2);

    let o = run(&["trials", "--n", "1", "--out", tmp.path().join("x").to_str().unwrap()]);
    assert_eq!(code(&o), 2, "seed is mandatory");
}

#[test]
fn unattainable_target_names_the_region() {
    let tmp = tempfile::tempdir().unwrap();
    let cat = tmp.path().join("cat");
    assert_eq!(code(&run(&["catalog", "--export", "--out", cat.to_str().unwrap()])), 0);
    // high decay caps clarity near 0.9 in this environment
    let base = fs::read_to_string(cat.join("env_06.toml")).unwrap();
    let bad = tmp.path().join("bad.toml");
    let pos = base.find("[[target_regions]]").unwrap();
    let (head, tail) = base.split_at(pos);
    fs::write(&bad, format!("{head}{}", tail.replacen("value = 0.8", "value = 0.95", 1))).unwrap();
    let o = run(&["run", "--env", bad.to_str().unwrap(), "--out", tmp.path().join("x").to_str().unwrap()]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("target_regions[0]"), "{}", stderr(&o));
}

#[test]
fn io_failure_after_manifest_exits_3_and_marks_failure() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("r");
    fs::create_dir_all(out.join(TRACE_FILE)).unwrap();
    let o = run(&["run", "--env", "2", "--duration", "1", "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 3, "{}", stderr(&o));
    let m = manifest(&out);
    assert_eq!(m.status, RunStatus::Failed);
    assert!(m.error.unwrap().contains(TRACE_FILE));
}

#[test]
fn bad_thread_override_is_a_config_error() {
    let o = bin().env("CLARITY_STEIN_THREADS", "many").args(["catalog", "--out", tempfile::tempdir().unwrap().path().to_str().unwrap()]).output().unwrap();
    assert_eq!(code(&o), 2);
}

#[test]
fn grad_check_passes_and_reports_worst_seed_on_failure() {
    let tmp = tempfile::tempdir().unwrap();
    let ok = tmp.path().join("ok");
    let o = run(&["grad-check", "--cases", "20", "--tol", "1e-4", "--out", ok.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert_eq!(manifest(&ok).status, RunStatus::Complete);

    let bad = tmp.path().join("bad");
    let o = run(&["grad-check", "--cases", "4", "--tol", "0", "--out", bad.to_str().unwrap()]);
    assert_eq!(code(&o), 4);
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(bad.join("grad_check.json")).unwrap()).unwrap();
    let seed = report["worst_seed"].as_u64().unwrap();
    assert!(stderr(&o).contains(&format!("seed {seed}")), "{}", stderr(&o));
}

#[test]
fn small_trials_study_writes_a_summary() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("t");
    let o = run(&["trials", "--envs", "13,16", "--n", "2", "--seed", "5", "--duration", "2", "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let table = String::from_utf8(o.stdout).unwrap();
    assert!(table.contains("with gating") && table.contains("without gating"));
    let s: clarity_stein::sim::TrialSummary = serde_json::from_str(&fs::read_to_string(out.join(SUMMARY_FILE)).unwrap()).unwrap();
    assert_eq!(s.records.len(), 4);
    assert_eq!(s.arm(true).unwrap().mean_violation, 0.0);
    let m = manifest(&out);
    assert_eq!(m.trials.unwrap().configs.len(), 2);
}
