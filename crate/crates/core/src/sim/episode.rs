//! Receding-horizon closed loop: plan, filter, commit, execute, log.

use std::io::{self, Write};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::clarity::{mean_clarity_deficit, propagate_clarity_in_place, ClarityField};
use crate::config::{EpisodeConfig, PlannerKind};
use crate::cost::{CostConfig, CostContext};
use crate::dynamics::{step, RobotState, Trajectory};
use crate::error::DomainError;
use crate::gatekeeper::{backup_controller, build_candidates, select, CommittedTrajectory};
use crate::sim::lawnmower::Lawnmower;
use crate::svgd::{plan, PlanResult};
use crate::Vec2;

pub const CSV_HEADER: &str =
    "t,px,py,vx,vy,ux,uy,mean_deficit,committed_cost,safe_candidates,in_collision";

#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    pub t: f64,
    pub position: Vec2,
    pub velocity: Vec2,
    /// Control applied from this row to the next; zero on the last row.
    pub control: Vec2,
    pub mean_deficit: f64,
    /// Cost of the trajectory being executed, NaN when none is committed.
    pub committed_cost: f64,
    /// Safe candidates found at the most recent planning call.
    pub safe_candidates: usize,
    pub in_collision: bool,
}

/// One accepted commitment, kept so its cost can be re-verified.
#[derive(Debug, Clone, PartialEq)]
pub struct CommitRecord {
    pub step: usize,
    pub cost: f64,
    pub path: Trajectory,
    pub clarity: ClarityField,
}

/// Trace auditor outcome: every executed state must either equal the
/// committed path state at that step, or lie in the backup set once the
/// committed path has run out.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AuditReport {
    pub checked: usize,
    pub failures: usize,
    pub first_failure: Option<String>,
}

impl AuditReport {
    pub fn passed(&self) -> bool {
        self.failures == 0
    }

    fn fail(&mut self, msg: impl FnOnce() -> String) {
        self.failures += 1;
        if self.first_failure.is_none() {
            self.first_failure = Some(msg());
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EpisodeSummary {
    /// Time average of the mean clarity deficit column.
    pub mean_deficit: f64,
    pub final_deficit: f64,
    /// Percentage of rows in collision.
    pub violation_fraction: f64,
    pub replans: usize,
    pub commits: usize,
    /// Planning calls where no candidate was safe.
    pub fallbacks: usize,
}

#[derive(Debug, Clone)]
pub struct EpisodeTrace {
    pub rows: Vec<TraceRow>,
    pub commits: Vec<CommitRecord>,
    pub audit: AuditReport,
    pub summary: EpisodeSummary,
    /// Wall-clock seconds per planning call. Not part of the trace bytes.
    pub plan_seconds: Vec<f64>,
    pub snapshots: Vec<(usize, Vec<f64>)>,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct EpisodeOptions {
    /// Keep a copy of the clarity field every this many steps.
    pub snapshot_every: Option<usize>,
    /// Keep the commit log.
    pub keep_commits: bool,
}

/// Seed of the `replan`-th planning call.
pub fn replan_seed(episode_seed: u64, planner_seed: u64, replan: u64) -> u64 {
    // splitmix64 finaliser over the mixed inputs
    let mut z = episode_seed
        ^ planner_seed.rotate_left(29)
        ^ replan.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn violation_fraction(rows: &[TraceRow]) -> f64 {
    if rows.is_empty() {
        return 0.0;
    }
    100.0 * rows.iter().filter(|r| r.in_collision).count() as f64 / rows.len() as f64
}

pub fn run_episode(cfg: &EpisodeConfig) -> Result<EpisodeTrace, DomainError> {
    run_episode_with(cfg, &EpisodeOptions::default())
}

enum Source {
    Committed { committed: CommittedTrajectory, start: usize },
    Nominal { controls: Vec<Vec2>, start: usize },
    Mower(Lawnmower),
}

pub fn run_episode_with(cfg: &EpisodeConfig, opts: &EpisodeOptions) -> Result<EpisodeTrace, DomainError> {
    let gated = cfg.gatekeeper && cfg.planner == PlannerKind::Stein;
    if cfg.gatekeeper && !cfg.obstacles.in_backup_set(&cfg.backup, &cfg.x0) {
        return Err(DomainError::new(
            "episode",
            "initial state is not in the backup set; the gatekeeper needs a safe start",
        ));
    }
    let cost_cfg = CostConfig {
        penalty: (!cfg.gatekeeper && cfg.obstacle_weight > 0.0 && !cfg.obstacles.discs().is_empty())
            .then(|| cfg.obstacles.penalty(cfg.obstacle_weight)),
        ..cfg.cost.clone()
    };
    let ctx = CostContext::new(&cfg.grid, &cfg.sensor, &cfg.model, &cost_cfg);
    let dt = cfg.dt;
    let steps = cfg.steps();
    let replan_every = cfg.replan_steps();

    let mut x = cfg.x0;
    let mut q = cfg.initial_clarity.clone();
    let mut rows = Vec::with_capacity(steps + 1);
    let mut commits = Vec::new();
    let mut audit = AuditReport::default();
    let mut summary = EpisodeSummary::default();
    let mut plan_seconds = Vec::new();
    let mut snapshots = Vec::new();
    let mut warm: Option<PlanResult> = None;
    let mut safe_count = 0usize;

    let mut source = match cfg.planner {
        PlannerKind::Lawnmower => Source::Mower(Lawnmower::new(&cfg.grid, &cfg.model, x.position)),
        PlannerKind::Stein if gated => {
            let hover = CommittedTrajectory::initial(&x, &cfg.backup, &cfg.model, 0.0, dt, 0.0);
            let cost = ctx.path_cost(&q, hover.path.positions().skip(1));
            let committed = CommittedTrajectory { cost, ..hover };
            if opts.keep_commits {
                commits.push(CommitRecord {
                    step: 0,
                    cost,
                    path: committed.path.clone(),
                    clarity: q.clone(),
                });
            }
            Source::Committed { committed, start: 0 }
        }
        PlannerKind::Stein => Source::Nominal {
            controls: Vec::new(),
            start: 0,
        },
    };

    for i in 0..=steps {
        let t = i as f64 * dt;
        if i < steps && i % replan_every == 0 && cfg.planner == PlannerKind::Stein {
            let seed = replan_seed(cfg.seed, cfg.svgd_seed, (i / replan_every) as u64);
            let clock = Instant::now();
            let shift = if warm.is_some() { replan_every } else { 0 };
            let result = plan(&ctx, &cfg.svgd, &x, &q, t, warm.as_ref(), shift, seed)?;
            summary.replans += 1;
            match &mut source {
                Source::Committed { committed, start } => {
                    let cands = build_candidates(&result, &q, &ctx, &cfg.backup, &cfg.obstacles)?;
                    safe_count = cands.iter().filter(|c| c.safe).count();
                    match select(&cands) {
                        Some(k) => {
                            let next = CommittedTrajectory::from_candidate(&cands[k], t);
                            if !next.path.is_consistent(&cfg.model) || next.path.states[0] != x {
                                audit.fail(|| format!("step {i}: committed path does not replay from the current state"));
                            }
                            if opts.keep_commits {
                                commits.push(CommitRecord {
                                    step: i,
                                    cost: next.cost,
                                    path: next.path.clone(),
                                    clarity: q.clone(),
                                });
                            }
                            *committed = next;
                            *start = i;
                            summary.commits += 1;
                        }
                        None => summary.fallbacks += 1,
                    }
                }
                Source::Nominal { controls, start } => {
                    *controls = result.nominals[result.best()].controls.clone();
                    *start = i;
                    safe_count = 0;
                }
                Source::Mower(_) => unreachable!("lawnmower does not replan"),
            }
            plan_seconds.push(clock.elapsed().as_secs_f64());
            warm = Some(result);
        }

        let (u, committed_cost) = match &source {
            Source::Committed { committed, start } => {
                let k = i - start;
                audit.checked += 1;
                if k < committed.path.states.len() {
                    if committed.path.states[k] != x {
                        audit.fail(|| format!("step {i}: state left the committed path"));
                    }
                } else if !cfg.obstacles.in_backup_set(&cfg.backup, &x) {
                    audit.fail(|| format!("step {i}: past the committed path outside the backup set"));
                }
                let u = match committed.path.controls.get(k) {
                    Some(u) => *u,
                    None => backup_controller(&x, &cfg.model, dt),
                };
                (u, committed.cost)
            }
            Source::Nominal { controls, start } => {
                let u = controls.get(i - start).copied().unwrap_or_else(Vec2::zeros);
                (u, f64::NAN)
            }
            Source::Mower(m) => (m.control(t, &x), f64::NAN),
        };
        let u = if i == steps { Vec2::zeros() } else { u };

        let in_collision = !cfg.obstacles.in_safe_set(&x);
        rows.push(TraceRow {
            t,
            position: x.position,
            velocity: x.velocity,
            control: u,
            mean_deficit: mean_clarity_deficit(&q, &cfg.grid),
            committed_cost,
            safe_candidates: safe_count,
            in_collision,
        });
        if let Some(every) = opts.snapshot_every {
            if every > 0 && i % every == 0 {
                snapshots.push((i, q.values().to_vec()));
            }
        }
        if i == steps {
            break;
        }
        x = step(&cfg.model, &x, &u, dt);
        propagate_clarity_in_place(&mut q, &x.position, &cfg.grid, &cfg.sensor, dt);
    }

    summary.mean_deficit = rows.iter().map(|r| r.mean_deficit).sum::<f64>() / rows.len() as f64;
    summary.final_deficit = rows.last().map(|r| r.mean_deficit).unwrap_or(0.0);
    summary.violation_fraction = violation_fraction(&rows);
    Ok(EpisodeTrace {
        rows,
        commits,
        audit,
        summary,
        plan_seconds,
        snapshots,
    })
}

/// Largest absolute difference between each logged commit cost and a
/// fresh evaluation of its path from the clarity field at commit time.
pub fn recheck_commit_costs(cfg: &EpisodeConfig, commits: &[CommitRecord]) -> f64 {
    let ctx = CostContext::new(&cfg.grid, &cfg.sensor, &cfg.model, &cfg.cost);
    commits
        .iter()
        .map(|c| (ctx.path_cost(&c.clarity, c.path.positions().skip(1)) - c.cost).abs())
        .fold(0.0, f64::max)
}

/// Writes the trace as CSV with [`CSV_HEADER`].
pub fn write_csv<W: Write>(rows: &[TraceRow], mut w: W) -> io::Result<()> {
    writeln!(w, "{CSV_HEADER}")?;
    for r in rows {
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{},{},{}",
            r.t,
            r.position.x,
            r.position.y,
            r.velocity.x,
            r.velocity.y,
            r.control.x,
            r.control.y,
            r.mean_deficit,
            r.committed_cost,
            r.safe_candidates,
            u8::from(r.in_collision)
        )?;
    }
    Ok(())
}

pub fn csv_string(rows: &[TraceRow]) -> String {
    let mut buf = Vec::new();
    write_csv(rows, &mut buf).expect("writing to memory");
    String::from_utf8(buf).expect("ascii output")
}

impl EpisodeTrace {
    pub fn final_state(&self) -> RobotState {
        let r = self.rows.last().expect("trace has rows");
        RobotState::new(r.position, r.velocity)
    }
}
