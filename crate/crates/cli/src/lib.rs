//! Command-line driver: single episodes, randomized safety trials, the
//! environment catalog and the gradient oracle check.

pub mod manifest;

use std::fmt::Write as _;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use clarity_stein::config::{read_config, ConfigFile, PlannerKind};
use clarity_stein::gradcheck::run_grad_check;
use clarity_stein::sim::catalog::{catalog_file, describe};
use clarity_stein::sim::episode::write_csv;
use clarity_stein::sim::{run_episode_with, run_trials, EpisodeOptions, TrialSpec, TrialSummary, CATALOG_SIZE};
use serde::Serialize;

pub use manifest::{GradCheckRecord, RunManifest, RunStatus, TrialsRecord, MANIFEST_FILE};

pub const THREADS_ENV: &str = "CLARITY_STEIN_THREADS";
pub const TRACE_FILE: &str = "trace.csv";
pub const SUMMARY_FILE: &str = "summary.json";
pub const CONFIG_FILE: &str = "config.toml";
pub const SNAPSHOT_FILE: &str = "clarity_snapshots.csv";
pub const GRADCHECK_FILE: &str = "grad_check.json";

#[derive(Debug, Parser)]
#[command(name = "clarity-stein", version, about = "Clarity-aware Stein planner with a safety gatekeeper")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run one closed-loop episode.
    Run(RunArgs),
    /// Randomized paired trials with the gatekeeper on and off.
    Trials(TrialsArgs),
    /// List the built-in environments.
    Catalog(CatalogArgs),
    /// Compare the adjoint cost gradient with finite differences.
    GradCheck(GradCheckArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PlannerArg {
    Stein,
    Lawnmower,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    /// Catalog id (1-16) or path to a TOML config file.
    #[arg(long, required_unless_present = "manifest", conflicts_with = "manifest")]
    pub env: Option<String>,
    /// Rerun the configuration recorded in a manifest.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub no_gatekeeper: bool,
    #[arg(long, value_enum)]
    pub planner: Option<PlannerArg>,
    /// Episode length in seconds.
    #[arg(long)]
    pub duration: Option<f64>,
    /// Dump the clarity field every K steps.
    #[arg(long, value_name = "K")]
    pub snapshot_every: Option<usize>,
}

#[derive(Debug, Args)]
pub struct TrialsArgs {
    #[arg(long, value_delimiter = ',', default_values_t = [13u32, 14, 15, 16])]
    pub envs: Vec<u32>,
    /// Trials per arm.
    #[arg(long, default_value_t = 100)]
    pub n: usize,
    #[arg(long)]
    pub seed: u64,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Episode length in seconds.
    #[arg(long, default_value_t = 60.0)]
    pub duration: f64,
}

#[derive(Debug, Args)]
pub struct CatalogArgs {
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Also write env_XX.toml for every environment.
    #[arg(long)]
    pub export: bool,
}

#[derive(Debug, Args)]
pub struct GradCheckArgs {
    #[arg(long, default_value_t = 20)]
    pub cases: usize,
    #[arg(long, default_value_t = 1e-4)]
    pub tol: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("runtime error: {0}")]
    Runtime(String),
    #[error("verification failed: {0}")]
    Verification(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Runtime(_) => 3,
            CliError::Verification(_) => 4,
        }
    }
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Runtime(format!("{}: {e}", path.display()))
}

/// Thread count requested through the environment, if any.
pub fn threads_from_env() -> Result<Option<usize>, CliError> {
    match std::env::var(THREADS_ENV) {
        Err(_) => Ok(None),
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n >= 1 => Ok(Some(n)),
            _ => Err(CliError::Config(format!("{THREADS_ENV} must be a positive integer, got {v:?}"))),
        },
    }
}

/// Installs the global worker pool, capped by `CLARITY_STEIN_THREADS`.
pub fn configure_threads() -> Result<(), CliError> {
    if let Some(n) = threads_from_env()? {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Runtime(format!("thread pool: {e}")))?;
    }
    Ok(())
}

pub fn execute(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Run(a) => cmd_run(&a),
        Command::Trials(a) => cmd_trials(&a).map(|_| ()),
        Command::Catalog(a) => cmd_catalog(&a),
        Command::GradCheck(a) => cmd_gradcheck(&a),
    }
}

fn out_dir(out: &Option<PathBuf>, sub: &str) -> Result<PathBuf, CliError> {
    let dir = out.clone().unwrap_or_else(|| Path::new("runs").join(sub));
    fs::create_dir_all(&dir).map_err(|e| io_err(&dir, e))?;
    Ok(dir)
}

/// Runs `body` with the manifest written as incomplete beforehand and
/// finalized afterwards, whatever the outcome.
fn with_manifest<T>(
    mut manifest: RunManifest,
    body: impl FnOnce(&mut RunManifest) -> Result<T, CliError>,
) -> Result<T, CliError> {
    let path = manifest.path();
    manifest.write().map_err(|e| io_err(&path, e))?;
    let start = Instant::now();
    let result = body(&mut manifest);
    manifest.wall_seconds = Some(start.elapsed().as_secs_f64());
    match &result {
        Ok(_) => manifest.status = RunStatus::Complete,
        Err(e) => {
            manifest.status = RunStatus::Failed;
            manifest.error = Some(e.to_string());
        }
    }
    manifest.write().map_err(|e| io_err(&path, e))?;
    result
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| io_err(path, e))?;
    text.push('\n');
    fs::write(path, text).map_err(|e| io_err(path, e))
}

/// Resolves `--env` to a configuration file and its catalog id, if any.
pub fn load_env(env: &str) -> Result<(ConfigFile, Option<u32>, Option<String>), CliError> {
    if let Ok(id) = env.parse::<u32>() {
        let file = catalog_file(id).map_err(|e| CliError::Config(e.to_string()))?;
        return Ok((file, Some(id), None));
    }
    let path = Path::new(env);
    let file = read_config(path).map_err(|e| CliError::Config(e.to_string()))?;
    Ok((file, None, Some(path.display().to_string())))
}

#[derive(Debug, Serialize)]
struct RunSummary<'a> {
    seed: u64,
    env_id: Option<u32>,
    planner: PlannerKind,
    gatekeeper: bool,
    steps: usize,
    summary: &'a clarity_stein::sim::episode::EpisodeSummary,
    audit: &'a clarity_stein::sim::episode::AuditReport,
}

pub fn cmd_run(args: &RunArgs) -> Result<(), CliError> {
    let (mut file, env_id, config_path) = match (&args.manifest, &args.env) {
        (Some(m), _) => {
            let recorded = RunManifest::read(m).map_err(CliError::Config)?;
            let file = recorded
                .config
                .ok_or_else(|| CliError::Config(format!("{}: manifest has no episode config", m.display())))?;
            (file, recorded.env_id, recorded.config_path)
        }
        (None, Some(env)) => load_env(env)?,
        (None, None) => return Err(CliError::Config("one of --env or --manifest is required".into())),
    };
    if let Some(s) = args.seed {
        file.episode.seed = s;
    }
    if args.no_gatekeeper {
        file.gatekeeper.enabled = false;
    }
    match args.planner {
        Some(PlannerArg::Stein) => file.episode.planner = PlannerKind::Stein,
        Some(PlannerArg::Lawnmower) => file.episode.planner = PlannerKind::Lawnmower,
        None => {}
    }
    if let Some(d) = args.duration {
        file.episode.duration = d;
    }
    let file = file.materialized();
    let cfg = file.resolve().map_err(|e| CliError::Config(e.to_string()))?;

    let dir = out_dir(&args.out, "run")?;
    let mut manifest = RunManifest::new("run", &dir);
    manifest.seed = Some(cfg.seed);
    manifest.env_id = env_id;
    manifest.config_path = config_path;
    manifest.config = Some(file.clone());

    with_manifest(manifest, |m| {
        let cfg_path = dir.join(CONFIG_FILE);
        fs::write(&cfg_path, file.to_toml_string()).map_err(|e| io_err(&cfg_path, e))?;
        m.outputs.push(CONFIG_FILE.into());

        let opts = EpisodeOptions {
            snapshot_every: args.snapshot_every,
            keep_commits: false,
        };
        let trace = run_episode_with(&cfg, &opts).map_err(|e| CliError::Runtime(e.to_string()))?;
        m.plan_seconds = trace.plan_seconds.clone();

        let trace_path = dir.join(TRACE_FILE);
        let f = fs::File::create(&trace_path).map_err(|e| io_err(&trace_path, e))?;
        let mut w = BufWriter::new(f);
        write_csv(&trace.rows, &mut w).map_err(|e| io_err(&trace_path, e))?;
        w.flush().map_err(|e| io_err(&trace_path, e))?;
        m.outputs.push(TRACE_FILE.into());

        if !trace.snapshots.is_empty() {
            let snap_path = dir.join(SNAPSHOT_FILE);
            let mut text = String::from("step,t,values\n");
            for (step, values) in &trace.snapshots {
                let vals: Vec<String> = values.iter().map(|v| v.to_string()).collect();
                let _ = writeln!(text, "{step},{},{}", *step as f64 * cfg.dt, vals.join(" "));
            }
            fs::write(&snap_path, text).map_err(|e| io_err(&snap_path, e))?;
            m.outputs.push(SNAPSHOT_FILE.into());
        }

        let gated = cfg.gatekeeper && cfg.planner == PlannerKind::Stein;
        write_json(
            &dir.join(SUMMARY_FILE),
            &RunSummary {
                seed: cfg.seed,
                env_id,
                planner: cfg.planner,
                gatekeeper: gated,
                steps: cfg.steps(),
                summary: &trace.summary,
                audit: &trace.audit,
            },
        )?;
        m.outputs.push(SUMMARY_FILE.into());

        println!(
            "mean deficit {:.6}  final deficit {:.6}  violations {:.3}%  replans {}  fallbacks {}",
            trace.summary.mean_deficit,
            trace.summary.final_deficit,
            trace.summary.violation_fraction,
            trace.summary.replans,
            trace.summary.fallbacks
        );
        println!("wrote {}", dir.display());
        if gated && !trace.audit.passed() {
            return Err(CliError::Verification(format!(
                "trace auditor: {}",
                trace.audit.first_failure.clone().unwrap_or_default()
            )));
        }
        Ok(())
    })
}

/// Table-1-shaped text rendering of a trial summary.
pub fn format_trials_table(s: &TrialSummary) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{:<18}{:>26}{:>18}", "", "mean safety violations (%)", "mean deficit");
    for arm in &s.arms {
        let name = if arm.gatekeeper { "with gating" } else { "without gating" };
        let _ = writeln!(out, "{:<18}{:>26.3}{:>18.4}", name, arm.mean_violation, arm.mean_deficit);
    }
    let _ = writeln!(out);
    let _ = writeln!(out, "{:<18}{:>8}{:>12}{:>12}{:>14}", "arm", "env", "episodes", "mean %", "max %");
    for arm in &s.arms {
        let name = if arm.gatekeeper { "with gating" } else { "without gating" };
        for e in &arm.per_env {
            let _ = writeln!(
                out,
                "{:<18}{:>8}{:>12}{:>12.3}{:>14.3}",
                name, e.env, e.episodes, e.mean_violation, e.max_violation
            );
        }
    }
    out
}

pub fn cmd_trials(args: &TrialsArgs) -> Result<TrialSummary, CliError> {
    if args.envs.is_empty() {
        return Err(CliError::Config("--envs must name at least one environment".into()));
    }
    if !(args.duration.is_finite() && args.duration > 0.0) {
        return Err(CliError::Config(format!("--duration must be positive, got {}", args.duration)));
    }
    let mut spec = TrialSpec::from_catalog(&args.envs, args.n, args.seed).map_err(|e| CliError::Config(e.to_string()))?;
    spec.duration = Some(args.duration);

    let dir = out_dir(&args.out, "trials")?;
    let mut manifest = RunManifest::new("trials", &dir);
    manifest.seed = Some(args.seed);
    manifest.trials = Some(TrialsRecord {
        envs: args.envs.clone(),
        n: args.n,
        duration: args.duration,
        configs: spec.envs.iter().map(|(id, f)| (*id, f.materialized())).collect(),
    });

    with_manifest(manifest, |m| {
        let summary = run_trials(&spec);
        write_json(&dir.join(SUMMARY_FILE), &summary)?;
        m.outputs.push(SUMMARY_FILE.into());
        print!("{}", format_trials_table(&summary));
        for (trial, why) in &summary.skipped {
            eprintln!("trial {trial} skipped: {why}");
        }
        let gated = summary.arm(true).expect("gated arm present");
        let bad_audit = summary.records.iter().filter(|r| r.gatekeeper && !r.audit_passed).count();
        if gated.mean_violation != 0.0 || bad_audit > 0 {
            return Err(CliError::Verification(format!(
                "gated arm: {:.3}% violations, {bad_audit} failed audits",
                gated.mean_violation
            )));
        }
        Ok(summary)
    })
}

pub fn cmd_catalog(args: &CatalogArgs) -> Result<(), CliError> {
    let dir = out_dir(&args.out, "catalog")?;
    let manifest = RunManifest::new("catalog", &dir);
    with_manifest(manifest, |m| {
        for id in 1..=CATALOG_SIZE {
            println!("{id:>3}  {}", describe(id).unwrap_or(""));
            if args.export {
                let name = format!("env_{id:02}.toml");
                let file = catalog_file(id).map_err(|e| CliError::Runtime(e.to_string()))?;
                let path = dir.join(&name);
                fs::write(&path, file.materialized().to_toml_string()).map_err(|e| io_err(&path, e))?;
                m.outputs.push(name);
            }
        }
        Ok(())
    })
}

pub fn cmd_gradcheck(args: &GradCheckArgs) -> Result<(), CliError> {
    if !(args.tol.is_finite() && args.tol >= 0.0) {
        return Err(CliError::Config(format!("--tol must be non-negative, got {}", args.tol)));
    }
    if args.cases == 0 {
        return Err(CliError::Config("--cases must be at least 1".into()));
    }
    let dir = out_dir(&args.out, "grad-check")?;
    let mut manifest = RunManifest::new("grad-check", &dir);
    manifest.seed = Some(args.seed);
    manifest.grad_check = Some(GradCheckRecord {
        cases: args.cases,
        tol: args.tol,
    });
    with_manifest(manifest, |m| {
        let report = run_grad_check(args.cases, args.seed, args.tol).map_err(|e| CliError::Runtime(e.to_string()))?;
        write_json(&dir.join(GRADCHECK_FILE), &report)?;
        m.outputs.push(GRADCHECK_FILE.into());
        println!("max relative error {:.3e} over {} cases (tol {:e})", report.worst_error, report.cases, report.tol);
        if report.passed() {
            Ok(())
        } else {
            Err(CliError::Verification(format!(
                "worst case seed {} has relative error {:e} > {:e}",
                report.worst_seed, report.worst_error, report.tol
            )))
        }
    })
}
