//! Planar robot models and trajectory rollout.

use serde::{Deserialize, Serialize};

use crate::error::DomainError;
use crate::Vec2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RobotKind {
    /// `ṗ = u`
    SingleIntegrator,
    /// `ṗ = v, v̇ = u`
    DoubleIntegrator,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RobotModel {
    pub kind: RobotKind,
    /// Per-axis control bound.
    pub u_max: f64,
    /// Per-axis velocity bound (double integrator only).
    pub v_max: f64,
}

impl RobotModel {
    pub fn new(kind: RobotKind, u_max: f64, v_max: f64) -> Result<Self, DomainError> {
        if !(u_max > 0.0 && u_max.is_finite()) {
            return Err(DomainError::new("robot", format!("u_max {u_max} must be positive")));
        }
        if kind == RobotKind::DoubleIntegrator && !(v_max > 0.0 && v_max.is_finite()) {
            return Err(DomainError::new("robot", format!("v_max {v_max} must be positive")));
        }
        Ok(Self { kind, u_max, v_max })
    }

    pub fn single(u_max: f64) -> Self {
        Self::new(RobotKind::SingleIntegrator, u_max, u_max).expect("u_max must be positive")
    }

    pub fn double(u_max: f64, v_max: f64) -> Self {
        Self::new(RobotKind::DoubleIntegrator, u_max, v_max).expect("bounds must be positive")
    }

    /// Largest speed the robot can hold, per axis.
    pub fn speed_bound(&self) -> f64 {
        match self.kind {
            RobotKind::SingleIntegrator => self.u_max,
            RobotKind::DoubleIntegrator => self.v_max,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RobotState {
    pub position: Vec2,
    pub velocity: Vec2,
}

impl RobotState {
    pub fn at_rest(position: Vec2) -> Self {
        Self {
            position,
            velocity: Vec2::zeros(),
        }
    }

    pub fn new(position: Vec2, velocity: Vec2) -> Self {
        Self { position, velocity }
    }
}

/// State path and piecewise-constant control sequence on a uniform time grid.
/// `states[i + 1] == step(states[i], controls[i])` holds exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub t0: f64,
    pub dt: f64,
    pub states: Vec<RobotState>,
    pub controls: Vec<Vec2>,
}

impl Trajectory {
    pub fn steps(&self) -> usize {
        self.controls.len()
    }

    pub fn duration(&self) -> f64 {
        self.controls.len() as f64 * self.dt
    }

    pub fn t_end(&self) -> f64 {
        self.t0 + self.duration()
    }

    pub fn last_state(&self) -> &RobotState {
        self.states.last().expect("trajectory has at least one state")
    }

    pub fn positions(&self) -> impl Iterator<Item = &Vec2> + '_ {
        self.states.iter().map(|s| &s.position)
    }

    /// Re-steps the stored controls and checks that the stored path is
    /// reproduced bit for bit and that every bound holds.
    pub fn is_consistent(&self, model: &RobotModel) -> bool {
        if self.states.len() != self.controls.len() + 1 {
            return false;
        }
        self.controls.iter().enumerate().all(|(i, u)| {
            clamp_control(model, u) == *u && step(model, &self.states[i], u, self.dt) == self.states[i + 1]
        }) && self.states.iter().all(|s| within_velocity_bound(model, s))
    }
}

fn within_velocity_bound(model: &RobotModel, s: &RobotState) -> bool {
    match model.kind {
        RobotKind::SingleIntegrator => true,
        RobotKind::DoubleIntegrator => s.velocity.x.abs() <= model.v_max && s.velocity.y.abs() <= model.v_max,
    }
}

/// Component-wise clamp of a raw control to `[-u_max, u_max]`.
#[inline]
pub fn clamp_control(model: &RobotModel, u: &Vec2) -> Vec2 {
    Vec2::new(u.x.clamp(-model.u_max, model.u_max), u.y.clamp(-model.u_max, model.u_max))
}

/// Exact zero-order-hold step under an already clamped control.
#[inline]
pub fn step(model: &RobotModel, x: &RobotState, u: &Vec2, dt: f64) -> RobotState {
    match model.kind {
        RobotKind::SingleIntegrator => RobotState {
            position: x.position + u * dt,
            velocity: Vec2::zeros(),
        },
        RobotKind::DoubleIntegrator => {
            let position = x.position + x.velocity * dt + u * (0.5 * dt * dt);
            let v = x.velocity + u * dt;
            RobotState {
                position,
                velocity: Vec2::new(v.x.clamp(-model.v_max, model.v_max), v.y.clamp(-model.v_max, model.v_max)),
            }
        }
    }
}

/// Rolls a raw control sequence out from `x0`, clamping each control first.
pub fn rollout(model: &RobotModel, x0: &RobotState, controls: &[Vec2], t0: f64, dt: f64) -> Trajectory {
    let mut states = Vec::with_capacity(controls.len() + 1);
    let mut applied = Vec::with_capacity(controls.len());
    states.push(*x0);
    let mut x = *x0;
    for u in controls {
        let u = clamp_control(model, u);
        x = step(model, &x, &u, dt);
        applied.push(u);
        states.push(x);
    }
    Trajectory {
        t0,
        dt,
        states,
        controls: applied,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn single_integrator_step() {
        let m = RobotModel::single(1.0);
        let x = step(&m, &RobotState::at_rest(Vec2::zeros()), &Vec2::new(1.0, 0.0), 0.1);
        assert_eq!(x.position, Vec2::new(0.1, 0.0));
    }

    #[test]
    fn double_integrator_steps() {
        let m = RobotModel::double(2.0, 3.0);
        let x = step(&m, &RobotState::new(Vec2::zeros(), Vec2::new(1.0, 0.0)), &Vec2::zeros(), 0.5);
        assert_eq!(x.position, Vec2::new(0.5, 0.0));
        assert_eq!(x.velocity, Vec2::new(1.0, 0.0));

        let x = step(&m, &RobotState::at_rest(Vec2::zeros()), &Vec2::new(2.0, 0.0), 1.0);
        assert_eq!(x.position, Vec2::new(1.0, 0.0));
        assert_eq!(x.velocity, Vec2::new(2.0, 0.0));
    }

    #[test]
    fn double_integrator_velocity_clamped() {
        let m = RobotModel::double(1.0, 0.5);
        let x = step(&m, &RobotState::new(Vec2::zeros(), Vec2::new(0.45, -0.45)), &Vec2::new(1.0, -1.0), 0.1);
        assert_eq!(x.velocity, Vec2::new(0.5, -0.5));
    }

    #[test]
    fn clamp_examples() {
        let m = RobotModel::single(1.0);
        assert_eq!(clamp_control(&m, &Vec2::new(3.0, -0.2)), Vec2::new(1.0, -0.2));
        assert_eq!(clamp_control(&m, &Vec2::new(0.3, -0.9)), Vec2::new(0.3, -0.9));
        let m = RobotModel::single(2.0);
        assert_eq!(clamp_control(&m, &Vec2::new(-5.0, 5.0)), Vec2::new(-2.0, 2.0));
    }

    #[test]
    fn rollout_examples() {
        let m = RobotModel::single(1.0);
        let x0 = RobotState::at_rest(Vec2::new(2.0, 3.0));
        let traj = rollout(&m, &x0, &[Vec2::zeros(); 7], 0.0, 0.1);
        assert!(traj.states.iter().all(|s| s.position == x0.position));

        let traj = rollout(&m, &RobotState::at_rest(Vec2::zeros()), &[Vec2::new(1.0, 0.0); 10], 0.0, 0.1);
        assert_relative_eq!(traj.last_state().position.x, 1.0, epsilon = 1e-12);
        assert_eq!(traj.last_state().position.y, 0.0);
        assert!(traj.is_consistent(&m));
        assert_relative_eq!(traj.duration(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn tampered_trajectory_is_inconsistent() {
        let m = RobotModel::double(1.0, 1.0);
        let mut traj = rollout(&m, &RobotState::at_rest(Vec2::zeros()), &[Vec2::new(0.5, 0.2); 5], 0.0, 0.1);
        traj.states[3].position.x += 1e-12;
        assert!(!traj.is_consistent(&m));
    }

    proptest! {
        #[test]
        fn rollout_is_consistent_and_bounded(
            raw in proptest::collection::vec((-5.0f64..5.0, -5.0f64..5.0), 1..40),
            double in any::<bool>(),
            vx in -1.0f64..1.0,
        ) {
            let m = if double { RobotModel::double(1.5, 1.0) } else { RobotModel::single(1.5) };
            let controls: Vec<Vec2> = raw.iter().map(|(a, b)| Vec2::new(*a, *b)).collect();
            let v0 = if double { Vec2::new(vx, 0.0) } else { Vec2::zeros() };
            let x0 = RobotState::new(Vec2::new(0.5, -0.5), v0);
            let traj = rollout(&m, &x0, &controls, 1.0, 0.1);
            prop_assert!(traj.is_consistent(&m));
            prop_assert!(traj.controls.iter().all(|u| u.x.abs() <= 1.5 && u.y.abs() <= 1.5));
            let again = rollout(&m, &x0, &controls, 1.0, 0.1);
            prop_assert_eq!(traj, again);
        }
    }
}
