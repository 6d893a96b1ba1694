//! Randomized paired trials with the gatekeeper on and off.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::{ConfigFile, EpisodeConfig};
use crate::dynamics::RobotState;
use crate::par;
use crate::sim::catalog::catalog_file;
use crate::sim::episode::{replan_seed, run_episode};
use crate::Vec2;

/// Attempts at drawing a valid randomized configuration before a trial is
/// skipped.
pub const MAX_RETRIES: usize = 100;
/// Obstacle centres keep this distance from the walls.
pub const WALL_MARGIN: f64 = 1.0;
pub const RADIUS_RANGE: (f64, f64) = (0.5, 1.5);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Randomize {
    pub init_position: bool,
    pub obstacle_size: bool,
    pub obstacle_location: bool,
}

impl Randomize {
    pub const ALL: Randomize = Randomize {
        init_position: true,
        obstacle_size: true,
        obstacle_location: true,
    };
    pub const NONE: Randomize = Randomize {
        init_position: false,
        obstacle_size: false,
        obstacle_location: false,
    };
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrialSpec {
    /// Environment files cycled over trial indices.
    pub envs: Vec<(u32, ConfigFile)>,
    /// Trials per arm.
    pub n: usize,
    pub seed: u64,
    pub randomize: Randomize,
    /// Overrides the episode duration when set.
    pub duration: Option<f64>,
}

impl TrialSpec {
    pub fn from_catalog(ids: &[u32], n: usize, seed: u64) -> Result<Self, crate::DomainError> {
        let envs = ids
            .iter()
            .map(|&id| catalog_file(id).map(|f| (id, f)))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self {
            envs,
            n,
            seed,
            randomize: Randomize::ALL,
            duration: None,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub trial: usize,
    pub env: u32,
    pub gatekeeper: bool,
    pub seed: u64,
    pub x0: [f64; 2],
    pub obstacles: Vec<[f64; 3]>,
    pub violation_fraction: f64,
    pub mean_deficit: f64,
    pub audit_passed: bool,
    pub fallbacks: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvBreakdown {
    pub env: u32,
    pub episodes: usize,
    pub mean_violation: f64,
    pub max_violation: f64,
    pub mean_deficit: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmSummary {
    pub gatekeeper: bool,
    pub episodes: usize,
    pub mean_violation: f64,
    pub mean_deficit: f64,
    pub per_env: Vec<EnvBreakdown>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialSummary {
    pub seed: u64,
    pub n: usize,
    pub envs: Vec<u32>,
    pub arms: Vec<ArmSummary>,
    pub records: Vec<TrialRecord>,
    /// `(trial, reason)` for trials that could not be configured or run.
    pub skipped: Vec<(usize, String)>,
}

impl TrialSummary {
    pub fn arm(&self, gatekeeper: bool) -> Option<&ArmSummary> {
        self.arms.iter().find(|a| a.gatekeeper == gatekeeper)
    }
}

fn trial_seed(seed: u64, trial: usize) -> u64 {
    replan_seed(seed, 0x7472_6961_6c73, trial as u64)
}

/// Draws the randomized configuration file for trial `trial`, or the
/// reason it could not be drawn. The returned file has the gatekeeper on.
pub fn trial_config(spec: &TrialSpec, trial: usize) -> Result<(u32, ConfigFile), String> {
    let (env, base) = &spec.envs[trial % spec.envs.len()];
    let seed = trial_seed(spec.seed, trial);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut last_err = String::new();
    for _ in 0..MAX_RETRIES {
        let mut file = base.clone();
        file.gatekeeper.enabled = true;
        file.episode.seed = seed;
        if let Some(d) = spec.duration {
            file.episode.duration = d;
        }
        let ws = file.workspace.unwrap_or_else(|| file.grid_workspace());
        for o in file.obstacles.iter_mut() {
            if spec.randomize.obstacle_size {
                o.r = rng.gen_range(RADIUS_RANGE.0..=RADIUS_RANGE.1);
            }
            if spec.randomize.obstacle_location {
                o.cx = rng.gen_range(ws.xmin + WALL_MARGIN..=ws.xmax - WALL_MARGIN);
                o.cy = rng.gen_range(ws.ymin + WALL_MARGIN..=ws.ymax - WALL_MARGIN);
            }
        }
        if spec.randomize.init_position {
            let Ok(obs) = file.obstacle_set() else {
                last_err = "obstacle set rejected".into();
                continue;
            };
            let bc = file.backup_config();
            let mut found = false;
            for _ in 0..1000 {
                let p = Vec2::new(rng.gen_range(ws.xmin..=ws.xmax), rng.gen_range(ws.ymin..=ws.ymax));
                if obs.in_backup_set(&bc, &RobotState::at_rest(p)) {
                    file.robot.x0 = [p.x, p.y];
                    file.robot.v0 = [0.0, 0.0];
                    found = true;
                    break;
                }
            }
            if !found {
                last_err = "no free start position".into();
                continue;
            }
        }
        match file.resolve() {
            Ok(_) => return Ok((*env, file)),
            Err(e) => last_err = e.to_string(),
        }
    }
    Err(format!("gave up after {MAX_RETRIES} draws: {last_err}"))
}

fn arm_config(file: &ConfigFile, gatekeeper: bool) -> Result<EpisodeConfig, String> {
    let mut f = file.clone();
    f.gatekeeper.enabled = gatekeeper;
    f.resolve().map_err(|e| e.to_string())
}

/// Runs `n` trials per arm, both arms on the same randomized draws.
pub fn run_trials(spec: &TrialSpec) -> TrialSummary {
    let draws: Vec<Result<(u32, ConfigFile), String>> = (0..spec.n).map(|j| trial_config(spec, j)).collect();
    // trial-major, gated arm first
    let outcomes = par::map_indexed(2 * spec.n, |idx| {
        let trial = idx / 2;
        let gatekeeper = idx % 2 == 0;
        let (env, file) = draws[trial].clone()?;
        let cfg = arm_config(&file, gatekeeper)?;
        let trace = run_episode(&cfg).map_err(|e| e.to_string())?;
        Ok::<_, String>(TrialRecord {
            trial,
            env,
            gatekeeper,
            seed: cfg.seed,
            x0: file.robot.x0,
            obstacles: file.obstacles.iter().map(|o| [o.cx, o.cy, o.r]).collect(),
            violation_fraction: trace.summary.violation_fraction,
            mean_deficit: trace.summary.mean_deficit,
            audit_passed: trace.audit.passed(),
            fallbacks: trace.summary.fallbacks,
        })
    });
    let mut records = Vec::new();
    let mut skipped = Vec::new();
    for (idx, o) in outcomes.into_iter().enumerate() {
        match o {
            Ok(r) => records.push(r),
            Err(e) => {
                let trial = idx / 2;
                if !skipped.iter().any(|(t, _)| *t == trial) {
                    skipped.push((trial, e));
                }
            }
        }
    }
    let env_ids: Vec<u32> = spec.envs.iter().map(|(id, _)| *id).collect();
    let arms = [true, false]
        .into_iter()
        .map(|gk| summarize(&records, gk, &env_ids))
        .collect();
    TrialSummary {
        seed: spec.seed,
        n: spec.n,
        envs: env_ids,
        arms,
        records,
        skipped,
    }
}

fn mean(v: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = v.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        0.0
    } else {
        s / n as f64
    }
}

fn summarize(records: &[TrialRecord], gatekeeper: bool, envs: &[u32]) -> ArmSummary {
    let arm: Vec<&TrialRecord> = records.iter().filter(|r| r.gatekeeper == gatekeeper).collect();
    let mut seen = Vec::new();
    for e in envs {
        if !seen.contains(e) {
            seen.push(*e);
        }
    }
    let per_env = seen
        .into_iter()
        .map(|env| {
            let rs: Vec<&&TrialRecord> = arm.iter().filter(|r| r.env == env).collect();
            EnvBreakdown {
                env,
                episodes: rs.len(),
                mean_violation: mean(rs.iter().map(|r| r.violation_fraction)),
                max_violation: rs.iter().map(|r| r.violation_fraction).fold(0.0, f64::max),
                mean_deficit: mean(rs.iter().map(|r| r.mean_deficit)),
            }
        })
        .collect();
    ArmSummary {
        gatekeeper,
        episodes: arm.len(),
        mean_violation: mean(arm.iter().map(|r| r.violation_fraction)),
        mean_deficit: mean(arm.iter().map(|r| r.mean_deficit)),
        per_env,
    }
}
