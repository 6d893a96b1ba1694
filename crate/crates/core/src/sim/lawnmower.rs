//! Boustrophedon sweep baseline. Ignores clarity entirely.

use crate::clarity::EnvGrid;
use crate::dynamics::{clamp_control, RobotKind, RobotModel, RobotState};
use crate::Vec2;

/// Cruise speed as a fraction of the robot's speed bound.
pub const CRUISE_FRACTION: f64 = 0.8;

const KP: f64 = 2.0;
const KD: f64 = 2.8;

/// Cell indices `(ix, iy)` in sweep order: row 0 left to right, row 1 right
/// to left, and so on.
pub fn visit_order(grid: &EnvGrid) -> Vec<(usize, usize)> {
    let mut out = Vec::with_capacity(grid.len());
    for iy in 0..grid.ny() {
        if iy % 2 == 0 {
            out.extend((0..grid.nx()).map(|ix| (ix, iy)));
        } else {
            out.extend((0..grid.nx()).rev().map(|ix| (ix, iy)));
        }
    }
    out
}

/// Tracks a reference point that moves along the sweep polyline at cruise
/// speed. The polyline starts at the robot's initial position and then
/// cycles through the cell centres forever.
#[derive(Debug, Clone)]
pub struct Lawnmower {
    start: Vec2,
    loop_pts: Vec<Vec2>,
    lead_in: f64,
    loop_len: f64,
    speed: f64,
    model: RobotModel,
}

impl Lawnmower {
    pub fn new(grid: &EnvGrid, model: &RobotModel, start: Vec2) -> Self {
        let loop_pts: Vec<Vec2> = visit_order(grid)
            .into_iter()
            .map(|(ix, iy)| grid.center(grid.index(ix, iy)))
            .collect();
        let lead_in = (loop_pts[0] - start).norm();
        let loop_len = (0..loop_pts.len())
            .map(|i| (loop_pts[(i + 1) % loop_pts.len()] - loop_pts[i]).norm())
            .sum();
        Self {
            start,
            loop_pts,
            lead_in,
            loop_len,
            speed: CRUISE_FRACTION * model.speed_bound(),
            model: *model,
        }
    }

    pub fn cruise_speed(&self) -> f64 {
        self.speed
    }

    /// Reference position and velocity at time `t` after the start.
    pub fn reference(&self, t: f64) -> (Vec2, Vec2) {
        let s = self.speed * t.max(0.0);
        if s < self.lead_in {
            let dir = (self.loop_pts[0] - self.start) / self.lead_in;
            return (self.start + dir * s, dir * self.speed);
        }
        let n = self.loop_pts.len();
        if self.loop_len == 0.0 {
            return (self.loop_pts[0], Vec2::zeros());
        }
        let mut s = (s - self.lead_in) % self.loop_len;
        for i in 0..n {
            let a = self.loop_pts[i];
            let b = self.loop_pts[(i + 1) % n];
            let len = (b - a).norm();
            if s <= len && len > 0.0 {
                let dir = (b - a) / len;
                return (a + dir * s, dir * self.speed);
            }
            s -= len;
        }
        (self.loop_pts[0], Vec2::zeros())
    }

    /// Tracking control at time `t` from state `x`.
    pub fn control(&self, t: f64, x: &RobotState) -> Vec2 {
        let (p, v) = self.reference(t);
        let u = match self.model.kind {
            RobotKind::SingleIntegrator => v + (p - x.position) * KP,
            RobotKind::DoubleIntegrator => (p - x.position) * KP + (v - x.velocity) * KD,
        };
        clamp_control(&self.model, &u)
    }
}
