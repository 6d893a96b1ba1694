//! Softplus clarity-deficit cost and its exact gradient.
//!
//! For a rollout of `N` steps the cost is the right-endpoint Riemann sum
//!
//! ```text
//! J = 1/(N_p N) Σ_{i=1..N} Σ_p softplus_β(q̄_p - q_{p,i})
//! ```
//!
//! (`dt / (N_p T)` with `T = N dt`), plus an optional smooth obstacle
//! penalty `w/N Σ_i Σ_o softplus_β(r_o - ‖p_i - c_o‖)` used when safety is
//! not enforced by the gatekeeper.
//!
//! [`CostContext::cost_gradient`] differentiates the discrete recursion
//! (control clamp → dynamics step → clarity Euler step → softplus) in
//! reverse. Clarity cells outside the sensing footprint that never received
//! sensing gain cannot influence the cost gradient and are skipped in the
//! backward sweep, so one gradient costs roughly two rollouts over the
//! footprint cells.

use crate::clarity::{advance, ClarityField, EnvGrid, SensorModel, Touch};
use crate::dynamics::{clamp_control, step, RobotKind, RobotModel, RobotState, Trajectory};
use crate::error::DomainError;
use crate::Vec2;

pub const DEFAULT_BETA: f64 = 10.0;
pub const DEFAULT_DT: f64 = 0.1;
pub const DEFAULT_HORIZON: f64 = 6.0;
pub const DEFAULT_ALPHA: f64 = 50.0;

/// Smooth hinge `(1/β) ln(1 + e^{βz})`, evaluated without overflow.
#[inline]
pub fn softplus(z: f64, beta: f64) -> f64 {
    z.max(0.0) + (-beta * z.abs()).exp().ln_1p() / beta
}

/// Logistic function, the derivative of `softplus_β` at `z` when called as
/// `sigmoid(β z)`.
#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Inflated discs penalised by the soft obstacle term.
#[derive(Debug, Clone, PartialEq)]
pub struct ObstaclePenalty {
    /// `(center, inflated radius)` pairs.
    pub discs: Vec<(Vec2, f64)>,
    pub weight: f64,
}

impl ObstaclePenalty {
    fn value_at(&self, p: &Vec2, beta: f64) -> f64 {
        self.discs
            .iter()
            .map(|(c, r)| softplus(r - (p - c).norm(), beta))
            .sum()
    }

    /// Gradient of `Σ_o softplus_β(r_o - ‖p - c_o‖)` with respect to `p`.
    fn grad_at(&self, p: &Vec2, beta: f64) -> Vec2 {
        let mut g = Vec2::zeros();
        for (c, r) in &self.discs {
            let d = p - c;
            let n = d.norm();
            if n > 0.0 {
                g -= d * (sigmoid(beta * (r - n)) / n);
            }
        }
        g
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CostConfig {
    /// Softplus sharpness.
    pub beta: f64,
    /// Nominal planning horizon in seconds.
    pub horizon: f64,
    /// Likelihood temperature, consumed by the SVGD planner.
    pub alpha: f64,
    /// Shared planning and clarity time step.
    pub dt: f64,
    pub penalty: Option<ObstaclePenalty>,
}

impl Default for CostConfig {
    fn default() -> Self {
        Self {
            beta: DEFAULT_BETA,
            horizon: DEFAULT_HORIZON,
            alpha: DEFAULT_ALPHA,
            dt: DEFAULT_DT,
            penalty: None,
        }
    }
}

impl CostConfig {
    pub fn validate(&self) -> Result<(), DomainError> {
        for (name, v) in [("beta", self.beta), ("horizon", self.horizon), ("alpha", self.alpha), ("dt", self.dt)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(DomainError::new("cost", format!("{name} = {v} must be positive")));
            }
        }
        Ok(())
    }

    /// Number of planning steps in the horizon.
    pub fn horizon_steps(&self) -> usize {
        (self.horizon / self.dt).round() as usize
    }
}

/// Running per-cell softplus values and their sum.
#[derive(Debug, Clone)]
struct SoftplusLedger {
    sp: Vec<f64>,
    step_sum: f64,
    total: f64,
}

impl SoftplusLedger {
    fn new(q0: &[f64], target: &[f64], beta: f64) -> Self {
        let sp: Vec<f64> = q0.iter().zip(target).map(|(q, t)| softplus(t - q, beta)).collect();
        let step_sum = sp.iter().sum();
        Self { sp, step_sum, total: 0.0 }
    }

    #[inline]
    fn touch(&mut self, t: &Touch, target: &[f64], beta: f64) {
        let new = softplus(target[t.cell] - t.q_after, beta);
        self.step_sum += new - self.sp[t.cell];
        self.sp[t.cell] = new;
    }

    #[inline]
    fn close_step(&mut self) {
        self.total += self.step_sum;
    }
}

/// Grid, sensor, robot model and cost settings shared by every evaluation.
#[derive(Debug, Clone, Copy)]
pub struct CostContext<'a> {
    pub grid: &'a EnvGrid,
    pub sensor: &'a SensorModel,
    pub model: &'a RobotModel,
    pub cfg: &'a CostConfig,
}

/// Streams robot positions through the clarity dynamics and accumulates
/// the normalised cost. Cloning mid-stream forks the evaluation, which the
/// gatekeeper uses to share a nominal prefix across candidates.
#[derive(Debug, Clone)]
pub struct CostAccumulator<'a> {
    ctx: CostContext<'a>,
    q: Vec<f64>,
    ledger: SoftplusLedger,
    penalty_total: f64,
    steps: usize,
}

impl<'a> CostAccumulator<'a> {
    pub fn new(ctx: CostContext<'a>, q0: &ClarityField) -> Self {
        let q = q0.values().to_vec();
        let ledger = SoftplusLedger::new(&q, ctx.grid.target(), ctx.cfg.beta);
        Self {
            ctx,
            q,
            ledger,
            penalty_total: 0.0,
            steps: 0,
        }
    }

    /// Advances clarity one step with the robot at `pos` and adds the
    /// step's terms.
    pub fn push(&mut self, pos: &Vec2) {
        let CostContext { grid, sensor, cfg, .. } = self.ctx;
        let ledger = &mut self.ledger;
        advance(&mut self.q, pos, grid, sensor, cfg.dt, |t| ledger.touch(&t, grid.target(), cfg.beta));
        ledger.close_step();
        if let Some(pen) = &cfg.penalty {
            self.penalty_total += pen.value_at(pos, cfg.beta);
        }
        self.steps += 1;
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn clarity(&self) -> &[f64] {
        &self.q
    }

    /// Cost normalised by the number of streamed steps.
    pub fn value(&self) -> f64 {
        if self.steps == 0 {
            return 0.0;
        }
        let n = self.steps as f64;
        let mut j = self.ledger.total / (self.ctx.grid.len() as f64 * n);
        if let Some(pen) = &self.ctx.cfg.penalty {
            j += pen.weight * self.penalty_total / n;
        }
        j
    }
}

/// Everything the backward sweep needs from a forward rollout.
struct Forward {
    states: Vec<RobotState>,
    applied: Vec<Vec2>,
    u_free: Vec<[bool; 2]>,
    v_free: Vec<[bool; 2]>,
    touches: Vec<Touch>,
    /// `touches[offsets[i-1]..offsets[i]]` belong to transition `i`.
    offsets: Vec<usize>,
    first_gain: Vec<usize>,
    value: Option<f64>,
}

impl<'a> CostContext<'a> {
    pub fn new(grid: &'a EnvGrid, sensor: &'a SensorModel, model: &'a RobotModel, cfg: &'a CostConfig) -> Self {
        Self {
            grid,
            sensor,
            model,
            cfg,
        }
    }

    fn check_inputs(&self, steps: usize, q0: &ClarityField) -> Result<(), DomainError> {
        if q0.len() != self.grid.len() {
            return Err(DomainError::new(
                "cost",
                format!("clarity field has {} cells, grid has {}", q0.len(), self.grid.len()),
            ));
        }
        if steps == 0 {
            return Err(DomainError::new("cost", "trajectory has no steps"));
        }
        let t = steps as f64 * self.cfg.dt;
        if (t - self.cfg.horizon).abs() > 1e-9 {
            return Err(DomainError::new(
                "cost",
                format!("{steps} steps of {} s do not span the {} s horizon", self.cfg.dt, self.cfg.horizon),
            ));
        }
        Ok(())
    }

    /// Cost of any path, normalised by its own duration. Used for
    /// gatekeeper candidates, whose lengths differ from the horizon.
    pub fn path_cost<'p, I>(&self, q0: &ClarityField, positions: I) -> f64
    where
        I: IntoIterator<Item = &'p Vec2>,
    {
        let mut acc = CostAccumulator::new(*self, q0);
        for p in positions {
            acc.push(p);
        }
        acc.value()
    }

    /// Cost of a nominal trajectory over the configured horizon.
    pub fn trajectory_cost(&self, traj: &Trajectory, q0: &ClarityField) -> Result<f64, DomainError> {
        if (traj.dt - self.cfg.dt).abs() > 1e-12 {
            return Err(DomainError::new(
                "cost",
                format!("trajectory dt {} differs from clarity dt {}", traj.dt, self.cfg.dt),
            ));
        }
        self.check_inputs(traj.steps(), q0)?;
        Ok(self.path_cost(q0, traj.positions().skip(1)))
    }

    /// Rolls out raw controls and returns the cost.
    pub fn cost_of_controls(&self, controls: &[Vec2], x0: &RobotState, q0: &ClarityField) -> Result<f64, DomainError> {
        self.check_inputs(controls.len(), q0)?;
        let mut acc = CostAccumulator::new(*self, q0);
        let mut x = *x0;
        for u in controls {
            x = step(self.model, &x, &clamp_control(self.model, u), self.cfg.dt);
            acc.push(&x.position);
        }
        Ok(acc.value())
    }

    fn forward(&self, controls: &[Vec2], x0: &RobotState, q0: &ClarityField, with_value: bool) -> Forward {
        let n = controls.len();
        let (grid, sensor, model, dt, beta) = (self.grid, self.sensor, self.model, self.cfg.dt, self.cfg.beta);
        let mut states = Vec::with_capacity(n + 1);
        let mut applied = Vec::with_capacity(n);
        let mut u_free = Vec::with_capacity(n);
        let mut v_free = Vec::with_capacity(n);
        let mut touches = Vec::with_capacity(n * 32);
        let mut offsets = Vec::with_capacity(n + 1);
        let mut first_gain = vec![usize::MAX; grid.len()];
        let mut q = q0.values().to_vec();
        let mut ledger = with_value.then(|| SoftplusLedger::new(&q, grid.target(), beta));
        let mut penalty_total = 0.0;

        states.push(*x0);
        offsets.push(0);
        let mut x = *x0;
        for (i, raw) in controls.iter().enumerate() {
            let u = clamp_control(model, raw);
            u_free.push([raw.x.abs() <= model.u_max, raw.y.abs() <= model.u_max]);
            let v_raw = x.velocity + u * dt;
            v_free.push([v_raw.x.abs() <= model.v_max, v_raw.y.abs() <= model.v_max]);
            x = step(model, &x, &u, dt);
            applied.push(u);
            states.push(x);

            let transition = i + 1;
            advance(&mut q, &x.position, grid, sensor, dt, |t| {
                if t.gain > 0.0 && first_gain[t.cell] == usize::MAX {
                    first_gain[t.cell] = transition;
                }
                if let Some(l) = ledger.as_mut() {
                    l.touch(&t, grid.target(), beta);
                }
                touches.push(t);
            });
            offsets.push(touches.len());
            if let Some(l) = ledger.as_mut() {
                l.close_step();
                if let Some(pen) = &self.cfg.penalty {
                    penalty_total += pen.value_at(&x.position, beta);
                }
            }
        }
        let value = ledger.map(|l| {
            let mut j = l.total / (grid.len() as f64 * n as f64);
            if let Some(pen) = &self.cfg.penalty {
                j += pen.weight * penalty_total / n as f64;
            }
            j
        });
        Forward {
            states,
            applied,
            u_free,
            v_free,
            touches,
            offsets,
            first_gain,
            value,
        }
    }

    fn backward(&self, fwd: &Forward) -> Vec<Vec2> {
        let n = fwd.applied.len();
        let (grid, sensor, model) = (self.grid, self.sensor, self.model);
        let (dt, beta) = (self.cfg.dt, self.cfg.beta);
        let w = 1.0 / (grid.len() as f64 * n as f64);
        let inv_r = 1.0 / sensor.meas_noise();
        let target = grid.target();
        let decay = grid.decay();

        // adjoint of each cell's clarity, plus a count of pending direct terms
        // sharing the cell's current (unchanged) clarity value
        let mut acc = vec![0.0; grid.len()];
        let mut pend_hi = vec![n; grid.len()];

        let mut gp = Vec2::zeros();
        let mut gv = Vec2::zeros();
        let mut grad = vec![Vec2::zeros(); n];

        for i in (1..=n).rev() {
            let pos = fwd.states[i].position;
            if let Some(pen) = &self.cfg.penalty {
                gp += pen.grad_at(&pos, beta) * (pen.weight / n as f64);
            }
            for t in fwd.touches[fwd.offsets[i - 1]..fwd.offsets[i]].iter().rev() {
                let p = t.cell;
                if fwd.first_gain[p] > i {
                    continue;
                }
                let pending = (pend_hi[p] + 1 - i) as f64;
                let adj = acc[p] - pending * w * sigmoid(beta * (target[p] - t.q_after));
                pend_hi[p] = i - 1;
                if t.clamped {
                    acc[p] = 0.0;
                    continue;
                }
                let qb = t.q_before;
                let a = t.gain * t.gain * inv_r;
                if t.gain > 0.0 {
                    // ∂q⁺/∂p = dt (2C/R)(1-q)² ∇C,  ∇C = -C Σ⁻¹ (p - μ)
                    let d = pos - grid.center(p);
                    let coef = adj * dt * 2.0 * a * (1.0 - qb) * (1.0 - qb);
                    gp -= (sensor.precision() * d) * coef;
                }
                acc[p] = adj * (1.0 + dt * (-2.0 * a * (1.0 - qb) - 2.0 * decay[p] * qb));
            }

            let um = fwd.u_free[i - 1];
            let mask = |g: Vec2, m: [bool; 2]| Vec2::new(if m[0] { g.x } else { 0.0 }, if m[1] { g.y } else { 0.0 });
            match model.kind {
                RobotKind::SingleIntegrator => {
                    grad[i - 1] = mask(gp * dt, um);
                }
                RobotKind::DoubleIntegrator => {
                    let gv_raw = mask(gv, fwd.v_free[i - 1]);
                    grad[i - 1] = mask(gp * (0.5 * dt * dt) + gv_raw * dt, um);
                    gv = gp * dt + gv_raw;
                }
            }
        }
        grad
    }

    /// Exact gradient of [`Self::cost_of_controls`] with respect to each raw
    /// control component.
    pub fn cost_gradient(&self, controls: &[Vec2], x0: &RobotState, q0: &ClarityField) -> Result<Vec<Vec2>, DomainError> {
        self.check_inputs(controls.len(), q0)?;
        let fwd = self.forward(controls, x0, q0, false);
        Ok(self.backward(&fwd))
    }

    /// Cost and gradient from a single rollout.
    pub fn cost_and_gradient(
        &self,
        controls: &[Vec2],
        x0: &RobotState,
        q0: &ClarityField,
    ) -> Result<(f64, Vec<Vec2>), DomainError> {
        self.check_inputs(controls.len(), q0)?;
        let fwd = self.forward(controls, x0, q0, true);
        let g = self.backward(&fwd);
        Ok((fwd.value.expect("value requested"), g))
    }

    /// Central finite-difference gradient, `(J(u + h eᵢ) - J(u - h eᵢ)) / 2h`.
    pub fn fd_gradient(&self, controls: &[Vec2], x0: &RobotState, q0: &ClarityField, h: f64) -> Result<Vec<Vec2>, DomainError> {
        if !(h > 0.0) {
            return Err(DomainError::new("fd_gradient", format!("perturbation {h} must be positive")));
        }
        self.check_inputs(controls.len(), q0)?;
        let mut work = controls.to_vec();
        let mut grad = vec![Vec2::zeros(); controls.len()];
        for i in 0..controls.len() {
            for k in 0..2 {
                let orig = work[i][k];
                work[i][k] = orig + h;
                let up = self.cost_of_controls(&work, x0, q0)?;
                work[i][k] = orig - h;
                let down = self.cost_of_controls(&work, x0, q0)?;
                work[i][k] = orig;
                grad[i][k] = (up - down) / (2.0 * h);
            }
        }
        Ok(grad)
    }
}

/// Largest component-wise deviation between two gradients, relative to the
/// largest reference magnitude.
pub fn max_relative_error(candidate: &[Vec2], reference: &[Vec2]) -> f64 {
    let scale = reference.iter().map(|g| g.amax()).fold(0.0, f64::max);
    let diff = candidate
        .iter()
        .zip(reference)
        .map(|(a, b)| (a - b).amax())
        .fold(0.0, f64::max);
    if scale < 1e-12 {
        diff
    } else {
        diff / scale
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clarity::Q_MIN;
    use crate::dynamics::rollout;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn cfg_for(steps: usize, dt: f64, beta: f64) -> CostConfig {
        CostConfig {
            beta,
            horizon: steps as f64 * dt,
            alpha: 1.0,
            dt,
            penalty: None,
        }
    }

    #[test]
    fn softplus_examples() {
        assert_relative_eq!(softplus(0.0, 1.0), 2f64.ln(), epsilon = 1e-15);
        let direct = (1.0 + 10f64.exp()).ln() / 10.0;
        assert_relative_eq!(softplus(1.0, 10.0), direct, epsilon = 1e-14);
        assert_relative_eq!(softplus(1.0, 10.0), 1.00000454, epsilon = 1e-8);
        let tiny = softplus(-50.0, 1.0);
        assert_relative_eq!(tiny, (-50f64).exp(), max_relative = 1e-12);
        assert!(softplus(1e4, 100.0).is_finite());
    }

    #[test]
    fn sigmoid_is_softplus_derivative() {
        for &z in &[-2.0, -0.3, 0.0, 0.4, 3.0] {
            let h = 1e-6;
            let fd = (softplus(z + h, 10.0) - softplus(z - h, 10.0)) / (2.0 * h);
            assert_relative_eq!(sigmoid(10.0 * z), fd, max_relative = 1e-6);
        }
    }

    #[test]
    fn zero_target_cost_bounded_by_residual() {
        let grid = EnvGrid::uniform(2, 2, 1.0, 0.0, 0.0).unwrap();
        let sensor = SensorModel::isotropic(1.0, 0.5, 1.0).unwrap();
        let model = RobotModel::single(1.0);
        let cfg = cfg_for(10, 0.1, 10.0);
        let ctx = CostContext::new(&grid, &sensor, &model, &cfg);
        let q0 = ClarityField::uniform(4, 0.3).unwrap();
        let traj = rollout(&model, &RobotState::at_rest(Vec2::new(1.0, 1.0)), &[Vec2::new(0.2, 0.1); 10], 0.0, 0.1);
        let j = ctx.trajectory_cost(&traj, &q0).unwrap();
        assert!(j > 0.0 && j <= 2f64.ln() / 10.0);
    }

    #[test]
    fn parked_far_away_cost_is_constant_term() {
        let grid = EnvGrid::uniform(1, 1, 1.0, 0.0, 0.999).unwrap();
        let sensor = SensorModel::isotropic(1.0, 0.5, 1.0).unwrap();
        let model = RobotModel::single(1.0);
        let cfg = cfg_for(20, 0.1, 10.0);
        let ctx = CostContext::new(&grid, &sensor, &model, &cfg);
        let q0 = ClarityField::uniform(1, 0.2).unwrap();
        let traj = rollout(&model, &RobotState::at_rest(Vec2::new(50.0, 50.0)), &[Vec2::zeros(); 20], 0.0, 0.1);
        let j = ctx.trajectory_cost(&traj, &q0).unwrap();
        assert_relative_eq!(j, softplus(0.999 - 0.2, 10.0), max_relative = 1e-13);
    }

    #[test]
    fn larger_beta_lowers_cost() {
        let grid = EnvGrid::uniform(3, 3, 1.0, 0.01, 0.6).unwrap();
        let sensor = SensorModel::isotropic(1.0, 0.5, 0.5).unwrap();
        let model = RobotModel::double(1.0, 1.0);
        let q0 = ClarityField::uniform(9, 0.05).unwrap();
        let traj = rollout(&model, &RobotState::at_rest(Vec2::new(0.5, 0.5)), &[Vec2::new(0.5, 0.4); 30], 0.0, 0.1);
        let mut last = f64::INFINITY;
        for beta in [1.0, 2.0, 4.0, 8.0, 16.0, 32.0] {
            let cfg = cfg_for(30, 0.1, beta);
            let j = CostContext::new(&grid, &sensor, &model, &cfg).trajectory_cost(&traj, &q0).unwrap();
            assert!(j < last);
            last = j;
        }
    }

    #[test]
    fn horizon_mismatch_is_rejected() {
        let grid = EnvGrid::uniform(1, 1, 1.0, 0.0, 0.5).unwrap();
        let sensor = SensorModel::isotropic(1.0, 0.5, 1.0).unwrap();
        let model = RobotModel::single(1.0);
        let cfg = cfg_for(10, 0.1, 10.0);
        let ctx = CostContext::new(&grid, &sensor, &model, &cfg);
        let q0 = ClarityField::uniform(1, 0.2).unwrap();
        let x0 = RobotState::at_rest(Vec2::zeros());
        assert!(ctx.cost_of_controls(&[Vec2::zeros(); 9], &x0, &q0).is_err());
        let bad_q = ClarityField::uniform(2, 0.2).unwrap();
        assert!(ctx.cost_gradient(&[Vec2::zeros(); 10], &x0, &bad_q).is_err());
        let traj = rollout(&model, &x0, &[Vec2::zeros(); 20], 0.0, 0.05);
        assert!(ctx.trajectory_cost(&traj, &q0).is_err());
    }

    #[test]
    fn gradient_zero_when_far_from_every_cell() {
        let grid = EnvGrid::uniform(3, 3, 1.0, 0.0, 0.9).unwrap();
        let sensor = SensorModel::isotropic(1.0, 0.25, 1.0).unwrap();
        let model = RobotModel::double(1.0, 1.0);
        let cfg = cfg_for(15, 0.1, 10.0);
        let ctx = CostContext::new(&grid, &sensor, &model, &cfg);
        let q0 = ClarityField::uniform(9, 0.1).unwrap();
        let x0 = RobotState::at_rest(Vec2::new(40.0, 40.0));
        let controls = vec![Vec2::new(0.3, -0.2); 15];
        let g = ctx.cost_gradient(&controls, &x0, &q0).unwrap();
        assert!(g.iter().all(|v| *v == Vec2::zeros()));
        let fd = ctx.fd_gradient(&controls, &x0, &q0, 1e-5).unwrap();
        assert!(fd.iter().all(|v| *v == Vec2::zeros()));
    }

    #[test]
    fn saturated_field_has_vanishing_gradient() {
        let grid = EnvGrid::uniform(2, 2, 1.0, 0.0, 0.0).unwrap();
        let sensor = SensorModel::isotropic(1.0, 0.5, 1.0).unwrap();
        let model = RobotModel::single(1.0);
        let cfg = cfg_for(10, 0.1, 10.0);
        let ctx = CostContext::new(&grid, &sensor, &model, &cfg);
        let q0 = ClarityField::uniform(4, 1.0 - Q_MIN).unwrap();
        let g = ctx
            .cost_gradient(&[Vec2::new(0.1, 0.1); 10], &RobotState::at_rest(Vec2::new(1.0, 1.0)), &q0)
            .unwrap();
        assert!(g.iter().all(|v| v.amax() < 1e-6));
    }

    #[test]
    fn fd_exact_on_linear_penalty_free_model() {
        // With no sensing and no decay the cost is constant: central
        // differences return exactly zero.
        let grid = EnvGrid::uniform(2, 2, 1.0, 0.0, 0.5).unwrap();
        let sensor = SensorModel::isotropic(0.0, 0.5, 1.0).unwrap();
        let model = RobotModel::single(1.0);
        let cfg = cfg_for(5, 0.1, 10.0);
        let ctx = CostContext::new(&grid, &sensor, &model, &cfg);
        let q0 = ClarityField::uniform(4, 0.2).unwrap();
        let fd = ctx
            .fd_gradient(&[Vec2::new(0.1, 0.2); 5], &RobotState::at_rest(Vec2::new(1.0, 1.0)), &q0, 1e-5)
            .unwrap();
        assert!(fd.iter().all(|v| *v == Vec2::zeros()));
    }

    #[test]
    fn cost_and_gradient_agree_with_separate_calls() {
        let grid = EnvGrid::uniform(3, 3, 1.0, 0.02, 0.7).unwrap();
        let sensor = SensorModel::isotropic(1.0, 0.5, 0.25).unwrap();
        let model = RobotModel::double(1.0, 1.0);
        let cfg = cfg_for(12, 0.1, 10.0);
        let ctx = CostContext::new(&grid, &sensor, &model, &cfg);
        let q0 = ClarityField::uniform(9, 0.05).unwrap();
        let x0 = RobotState::at_rest(Vec2::new(1.2, 1.4));
        let u = vec![Vec2::new(0.4, -0.3); 12];
        let (j, g) = ctx.cost_and_gradient(&u, &x0, &q0).unwrap();
        assert_eq!(j, ctx.cost_of_controls(&u, &x0, &q0).unwrap());
        assert_eq!(g, ctx.cost_gradient(&u, &x0, &q0).unwrap());
        let traj = rollout(&model, &x0, &u, 0.0, 0.1);
        assert_eq!(j, ctx.trajectory_cost(&traj, &q0).unwrap());
    }

    fn random_instance(seed: u64, penalty: bool) -> (EnvGrid, SensorModel, RobotModel, CostConfig, Vec<Vec2>, RobotState, ClarityField) {
        let i = crate::gradcheck::GradInstance::random(seed, penalty);
        (i.grid, i.sensor, i.model, i.cost, i.controls, i.x0, i.q0)
    }

    #[test]
    fn gradient_matches_finite_differences_on_random_instances() {
        for seed in 0..20 {
            let (grid, sensor, model, cfg, u, x0, q0) = random_instance(seed, false);
            let ctx = CostContext::new(&grid, &sensor, &model, &cfg);
            let g = ctx.cost_gradient(&u, &x0, &q0).unwrap();
            let fd = ctx.fd_gradient(&u, &x0, &q0, 1e-5).unwrap();
            let err = max_relative_error(&g, &fd);
            assert!(err <= 1e-4, "seed {seed}: relative error {err}");
        }
    }

    #[test]
    fn penalised_gradient_matches_finite_differences() {
        for seed in 100..110 {
            let (grid, sensor, model, cfg, u, x0, q0) = random_instance(seed, true);
            let ctx = CostContext::new(&grid, &sensor, &model, &cfg);
            let g = ctx.cost_gradient(&u, &x0, &q0).unwrap();
            let fd = ctx.fd_gradient(&u, &x0, &q0, 1e-5).unwrap();
            let err = max_relative_error(&g, &fd);
            assert!(err <= 1e-4, "seed {seed}: relative error {err}");
        }
    }

    #[test]
    fn small_descent_step_decreases_cost() {
        let (grid, sensor, model, cfg, u, x0, q0) = random_instance(7, false);
        let ctx = CostContext::new(&grid, &sensor, &model, &cfg);
        let (j0, g) = ctx.cost_and_gradient(&u, &x0, &q0).unwrap();
        let mut lr = 1.0;
        let mut decreased = false;
        for _ in 0..40 {
            let trial: Vec<Vec2> = u.iter().zip(&g).map(|(a, b)| a - b * lr).collect();
            if ctx.cost_of_controls(&trial, &x0, &q0).unwrap() < j0 {
                decreased = true;
                break;
            }
            lr *= 0.5;
        }
        assert!(decreased);
    }

    proptest! {
        #[test]
        fn softplus_envelope(z in -50.0f64..50.0, bi in 0usize..3) {
            let beta = [1.0, 10.0, 100.0][bi];
            let gap = softplus(z, beta) - z.max(0.0);
            prop_assert!(gap >= 0.0);
            prop_assert!(gap <= 2f64.ln() / beta + 1e-15);
        }

        #[test]
        fn cost_is_nonnegative(seed in 0u64..1000) {
            let (grid, sensor, model, cfg, u, x0, q0) = random_instance(seed, false);
            let ctx = CostContext::new(&grid, &sensor, &model, &cfg);
            prop_assert!(ctx.cost_of_controls(&u, &x0, &q0).unwrap() >= 0.0);
        }
    }
}
