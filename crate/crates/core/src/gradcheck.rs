//! Reverse-mode cost gradient versus central finite differences on random
//! small instances.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::clarity::{ClarityField, EnvGrid, SensorModel};
use crate::cost::{max_relative_error, CostConfig, CostContext, ObstaclePenalty};
use crate::dynamics::{RobotKind, RobotModel, RobotState};
use crate::sim::episode::replan_seed;
use crate::{par, DomainError, Vec2};

/// Finite-difference step used by [`run_grad_check`].
pub const FD_STEP: f64 = 1e-5;

/// A random cost-evaluation problem: grid at most 5×5, horizon at most 20
/// steps.
#[derive(Debug, Clone)]
pub struct GradInstance {
    pub seed: u64,
    pub grid: EnvGrid,
    pub sensor: SensorModel,
    pub model: RobotModel,
    pub cost: CostConfig,
    pub controls: Vec<Vec2>,
    pub x0: RobotState,
    pub q0: ClarityField,
}

impl GradInstance {
    pub fn random(seed: u64, penalty: bool) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let nx = rng.gen_range(1..=5);
        let ny = rng.gen_range(1..=5);
        let n = nx * ny;
        let decay: Vec<f64> = (0..n).map(|_| if rng.gen_bool(0.5) { rng.gen_range(0.0..0.3) } else { 0.0 }).collect();
        let target: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..0.95)).collect();
        let grid = EnvGrid::new(nx, ny, 1.0, Vec2::zeros(), decay, target).expect("generated grid is valid");
        let s2 = rng.gen_range(0.2..1.0);
        let sensor = SensorModel::isotropic(rng.gen_range(0.5..2.0), s2, rng.gen_range(0.2..2.0)).expect("generated sensor is valid");
        let model = if rng.gen_bool(0.5) { RobotModel::double(1.0, 2.0) } else { RobotModel::single(1.0) };
        let steps = rng.gen_range(1..=20);
        let cost = CostConfig {
            beta: rng.gen_range(2.0..20.0),
            horizon: steps as f64 * 0.1,
            alpha: 1.0,
            dt: 0.1,
            penalty: penalty.then(|| ObstaclePenalty {
                discs: vec![(Vec2::new(rng.gen_range(0.0..5.0), rng.gen_range(0.0..5.0)), rng.gen_range(0.5..1.5))],
                weight: 0.5,
            }),
        };
        let controls = (0..steps).map(|_| Vec2::new(rng.gen_range(-0.9..0.9), rng.gen_range(-0.9..0.9))).collect();
        let x0 = RobotState::new(
            Vec2::new(rng.gen_range(0.0..nx as f64), rng.gen_range(0.0..ny as f64)),
            if model.kind == RobotKind::DoubleIntegrator {
                Vec2::new(rng.gen_range(-0.5..0.5), rng.gen_range(-0.5..0.5))
            } else {
                Vec2::zeros()
            },
        );
        let q0 = ClarityField::new((0..n).map(|_| rng.gen_range(0.02..0.9)).collect()).expect("generated clarity is valid");
        Self {
            seed,
            grid,
            sensor,
            model,
            cost,
            controls,
            x0,
            q0,
        }
    }

    pub fn ctx(&self) -> CostContext<'_> {
        CostContext::new(&self.grid, &self.sensor, &self.model, &self.cost)
    }

    /// Relative error between the adjoint gradient and central differences
    /// with step `h`.
    pub fn relative_error(&self, h: f64) -> Result<f64, DomainError> {
        let ctx = self.ctx();
        let g = ctx.cost_gradient(&self.controls, &self.x0, &self.q0)?;
        let fd = ctx.fd_gradient(&self.controls, &self.x0, &self.q0, h)?;
        Ok(max_relative_error(&g, &fd))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub cases: usize,
    pub tol: f64,
    /// `(instance seed, relative error)` per case.
    pub errors: Vec<(u64, f64)>,
    pub worst_seed: u64,
    pub worst_error: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.worst_error <= self.tol
    }
}

/// Seed of case `i` in a check started from `seed`.
pub fn case_seed(seed: u64, i: usize) -> u64 {
    replan_seed(seed, 0x6772_6164, i as u64)
}

/// Checks `cases` random instances; every third case carries an obstacle
/// penalty.
pub fn run_grad_check(cases: usize, seed: u64, tol: f64) -> Result<GradCheckReport, DomainError> {
    let errors = par::map_indexed(cases, |i| {
        let s = case_seed(seed, i);
        GradInstance::random(s, i % 3 == 2).relative_error(FD_STEP).map(|e| (s, e))
    })
    .into_iter()
    .collect::<Result<Vec<_>, _>>()?;
    let (worst_seed, worst_error) = errors
        .iter()
        .copied()
        .fold((case_seed(seed, 0), 0.0), |best, (s, e)| if e > best.1 || e.is_nan() { (s, e) } else { best });
    Ok(GradCheckReport {
        cases,
        tol,
        errors,
        worst_seed,
        worst_error,
    })
}
