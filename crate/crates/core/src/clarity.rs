//! Environment grid, Gaussian sensing footprint and clarity dynamics.
//!
//! Clarity is the normalised information measure
//! `q = (1 + exp(2h) / (2πe)^n)^-1` of a random variable with differential
//! entropy `h`. Each grid cell carries an independent clarity value that
//! grows while the robot's sensing footprint covers it and decays at a
//! rate set by the cell's process-noise variance:
//!
//! ```text
//! q̇ = (C(x)² / R)(1 - q)² - Q q²
//! ```

use std::f64::consts::{E, PI};

use crate::error::DomainError;
use crate::{Mat2, Vec2};

/// Clarity values are kept inside `[Q_MIN, 1 - Q_MIN]`.
pub const Q_MIN: f64 = 1e-6;

/// Cells beyond this Mahalanobis distance from the robot receive no gain.
pub const FOOTPRINT_CUTOFF: f64 = 4.0;

/// Default initial clarity for every cell.
pub const DEFAULT_INITIAL_CLARITY: f64 = 0.01;

/// Discretised coverage space with per-cell decay rate and target clarity.
#[derive(Debug, Clone, PartialEq)]
pub struct EnvGrid {
    nx: usize,
    ny: usize,
    cell_size: f64,
    origin: Vec2,
    centers: Vec<Vec2>,
    decay: Vec<f64>,
    target: Vec<f64>,
    decaying: Vec<usize>,
}

impl EnvGrid {
    /// Builds a grid whose cell `(ix, iy)` has index `iy * nx + ix` and centre
    /// `origin + ((ix + ½)·cell_size, (iy + ½)·cell_size)`.
    pub fn new(
        nx: usize,
        ny: usize,
        cell_size: f64,
        origin: Vec2,
        decay: Vec<f64>,
        target: Vec<f64>,
    ) -> Result<Self, DomainError> {
        let n = nx * ny;
        if n == 0 {
            return Err(DomainError::new("grid", "nx and ny must both be at least 1"));
        }
        if !(cell_size > 0.0 && cell_size.is_finite()) {
            return Err(DomainError::new("grid", format!("cell_size {cell_size} must be positive")));
        }
        if decay.len() != n || target.len() != n {
            return Err(DomainError::new(
                "grid",
                format!("expected {n} decay and target values, got {} and {}", decay.len(), target.len()),
            ));
        }
        if let Some(p) = decay.iter().position(|d| !(*d >= 0.0 && d.is_finite())) {
            return Err(DomainError::new("grid", format!("decay[{p}] = {} must be >= 0", decay[p])));
        }
        if let Some(p) = target.iter().position(|t| !(*t >= 0.0 && *t < 1.0)) {
            return Err(DomainError::new("grid", format!("target[{p}] = {} must lie in [0, 1)", target[p])));
        }
        let centers = (0..n)
            .map(|p| {
                let (ix, iy) = (p % nx, p / nx);
                origin + Vec2::new((ix as f64 + 0.5) * cell_size, (iy as f64 + 0.5) * cell_size)
            })
            .collect();
        let decaying = (0..n).filter(|&p| decay[p] > 0.0).collect();
        Ok(Self {
            nx,
            ny,
            cell_size,
            origin,
            centers,
            decay,
            target,
            decaying,
        })
    }

    /// Grid with uniform decay and target values.
    pub fn uniform(nx: usize, ny: usize, cell_size: f64, decay: f64, target: f64) -> Result<Self, DomainError> {
        let n = nx * ny;
        Self::new(nx, ny, cell_size, Vec2::zeros(), vec![decay; n], vec![target; n])
    }

    pub fn nx(&self) -> usize {
        self.nx
    }

    pub fn ny(&self) -> usize {
        self.ny
    }

    pub fn len(&self) -> usize {
        self.centers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.centers.is_empty()
    }

    pub fn cell_size(&self) -> f64 {
        self.cell_size
    }

    pub fn origin(&self) -> Vec2 {
        self.origin
    }

    pub fn centers(&self) -> &[Vec2] {
        &self.centers
    }

    pub fn center(&self, p: usize) -> Vec2 {
        self.centers[p]
    }

    pub fn decay(&self) -> &[f64] {
        &self.decay
    }

    pub fn target(&self) -> &[f64] {
        &self.target
    }

    /// Indices of cells with strictly positive decay.
    pub fn decaying_cells(&self) -> &[usize] {
        &self.decaying
    }

    pub fn index(&self, ix: usize, iy: usize) -> usize {
        iy * self.nx + ix
    }

    /// Extent of the grid as `(xmin, ymin, xmax, ymax)`.
    pub fn bounds(&self) -> (f64, f64, f64, f64) {
        (
            self.origin.x,
            self.origin.y,
            self.origin.x + self.nx as f64 * self.cell_size,
            self.origin.y + self.ny as f64 * self.cell_size,
        )
    }

    /// Inclusive index box `(ix0, ix1, iy0, iy1)` of cells whose centres lie
    /// within `half.x`/`half.y` of `x`, or `None` when no centre does.
    pub fn cell_box(&self, x: &Vec2, half: &Vec2) -> Option<(usize, usize, usize, usize)> {
        let axis = |c: f64, o: f64, h: f64, n: usize| -> Option<(usize, usize)> {
            let lo = ((c - h - o) / self.cell_size - 0.5).ceil();
            let hi = ((c + h - o) / self.cell_size - 0.5).floor();
            let lo = lo.max(0.0);
            let hi = hi.min(n as f64 - 1.0);
            if !(lo <= hi) {
                return None;
            }
            Some((lo as usize, hi as usize))
        };
        let (ix0, ix1) = axis(x.x, self.origin.x, half.x, self.nx)?;
        let (iy0, iy1) = axis(x.y, self.origin.y, half.y, self.ny)?;
        Some((ix0, ix1, iy0, iy1))
    }

    /// First cell whose target is not strictly below its attainable clarity
    /// under peak sensing, as `(cell, target, attainable)`.
    pub fn unattainable_target(&self, sensor: &SensorModel) -> Option<(usize, f64, f64)> {
        (0..self.len()).find_map(|p| {
            let dq = self.decay[p];
            if dq == 0.0 && sensor.kappa > 0.0 {
                return None;
            }
            let q_inf = max_attainable_clarity(sensor.kappa, sensor.meas_noise, dq).unwrap_or(0.0);
            (self.target[p] >= q_inf).then_some((p, self.target[p], q_inf))
        })
    }
}

/// Gaussian sensing footprint `C(x) = κ exp(-½ (x-μ)ᵀ Σ⁻¹ (x-μ))` and the
/// measurement noise variance.
#[derive(Debug, Clone, PartialEq)]
pub struct SensorModel {
    kappa: f64,
    footprint: Mat2,
    footprint_inv: Mat2,
    meas_noise: f64,
    reach: Vec2,
}

impl SensorModel {
    pub fn new(kappa: f64, footprint: Mat2, meas_noise: f64) -> Result<Self, DomainError> {
        if !(kappa >= 0.0 && kappa.is_finite()) {
            return Err(DomainError::new("sensor", format!("kappa {kappa} must be non-negative")));
        }
        if !(meas_noise > 0.0 && meas_noise.is_finite()) {
            return Err(DomainError::new("sensor", format!("meas_noise {meas_noise} must be positive")));
        }
        if footprint[(0, 1)] != footprint[(1, 0)] {
            return Err(DomainError::new("sensor", "footprint must be symmetric"));
        }
        let det = footprint.determinant();
        if !(footprint[(0, 0)] > 0.0 && det > 0.0) {
            return Err(DomainError::new("sensor", "footprint must be positive definite"));
        }
        let footprint_inv = footprint
            .try_inverse()
            .ok_or_else(|| DomainError::new("sensor", "footprint is singular"))?;
        let reach = Vec2::new(
            FOOTPRINT_CUTOFF * footprint[(0, 0)].sqrt(),
            FOOTPRINT_CUTOFF * footprint[(1, 1)].sqrt(),
        );
        Ok(Self {
            kappa,
            footprint,
            footprint_inv,
            meas_noise,
            reach,
        })
    }

    /// Isotropic footprint `Σ = σ² I`.
    pub fn isotropic(kappa: f64, sigma2: f64, meas_noise: f64) -> Result<Self, DomainError> {
        Self::new(kappa, Mat2::identity() * sigma2, meas_noise)
    }

    pub fn kappa(&self) -> f64 {
        self.kappa
    }

    pub fn footprint(&self) -> &Mat2 {
        &self.footprint
    }

    pub fn meas_noise(&self) -> f64 {
        self.meas_noise
    }

    /// Half-widths of the axis-aligned box enclosing the truncated footprint.
    pub fn reach(&self) -> Vec2 {
        self.reach
    }

    #[inline]
    fn mahalanobis_sq(&self, d: &Vec2) -> f64 {
        let s = &self.footprint_inv;
        d.x * (s[(0, 0)] * d.x + s[(0, 1)] * d.y) + d.y * (s[(1, 0)] * d.x + s[(1, 1)] * d.y)
    }

    /// `Σ⁻¹`
    pub(crate) fn precision(&self) -> &Mat2 {
        &self.footprint_inv
    }

    /// `Σ⁻¹ d`
    #[inline]
    fn precision_times(&self, d: &Vec2) -> Vec2 {
        self.footprint_inv * d
    }
}

/// Converts differential entropy of an `n`-dimensional variable to clarity.
pub fn entropy_to_clarity(h: f64, n: u32) -> Result<f64, DomainError> {
    if !h.is_finite() {
        return Err(DomainError::new("entropy_to_clarity", format!("entropy {h} is not finite")));
    }
    if n == 0 {
        return Err(DomainError::new("entropy_to_clarity", "dimension must be at least 1"));
    }
    // exp(2h)/(2πe)^n = exp(2h - n ln(2πe)), written to avoid overflow
    let log_ratio = 2.0 * h - n as f64 * (2.0 * PI * E).ln();
    Ok(1.0 / (1.0 + log_ratio.exp()))
}

/// Inverse of [`entropy_to_clarity`].
pub fn clarity_to_entropy(q: f64, n: u32) -> Result<f64, DomainError> {
    if !(q > 0.0 && q < 1.0) {
        return Err(DomainError::new("clarity_to_entropy", format!("clarity {q} outside (0, 1)")));
    }
    if n == 0 {
        return Err(DomainError::new("clarity_to_entropy", "dimension must be at least 1"));
    }
    Ok(0.5 * (n as f64 * (2.0 * PI * E).ln() + (1.0 / q - 1.0).ln()))
}

/// Sensing gain of the footprint centred at `x` on a cell centred at `mu`.
/// Returns zero beyond [`FOOTPRINT_CUTOFF`] Mahalanobis units.
pub fn sense_gain(sensor: &SensorModel, x: &Vec2, mu: &Vec2) -> f64 {
    let d = x - mu;
    let m2 = sensor.mahalanobis_sq(&d);
    if m2 > FOOTPRINT_CUTOFF * FOOTPRINT_CUTOFF {
        return 0.0;
    }
    sensor.kappa * (-0.5 * m2).exp()
}

/// Sensing gain together with its gradient `∇ₓC = -C Σ⁻¹ (x - μ)`.
pub fn sense_gain_grad(sensor: &SensorModel, x: &Vec2, mu: &Vec2) -> (f64, Vec2) {
    let c = sense_gain(sensor, x, mu);
    if c == 0.0 {
        return (0.0, Vec2::zeros());
    }
    (c, -c * sensor.precision_times(&(x - mu)))
}

#[inline]
pub(crate) fn rate_with_gain(q: f64, a: f64, dq: f64) -> f64 {
    let r = 1.0 - q;
    a * r * r - dq * q * q
}

/// Right-hand side of the clarity dynamics for a single cell.
pub fn clarity_rate(q: f64, c: f64, r: f64, dq: f64) -> Result<f64, DomainError> {
    if !(r > 0.0) {
        return Err(DomainError::new("clarity_rate", format!("measurement noise {r} must be positive")));
    }
    Ok(rate_with_gain(q, c * c / r, dq))
}

/// Stable equilibrium of the clarity dynamics under constant gain `c_peak`.
pub fn max_attainable_clarity(c_peak: f64, r: f64, dq: f64) -> Result<f64, DomainError> {
    if !(r > 0.0) {
        return Err(DomainError::new("max_attainable_clarity", format!("measurement noise {r} must be positive")));
    }
    if c_peak < 0.0 || dq < 0.0 {
        return Err(DomainError::new("max_attainable_clarity", "gain and decay must be non-negative"));
    }
    if c_peak == 0.0 && dq == 0.0 {
        return Err(DomainError::new("max_attainable_clarity", "undefined for zero gain and zero decay"));
    }
    if c_peak == 0.0 {
        return Ok(0.0);
    }
    if dq == 0.0 {
        return Ok(1.0);
    }
    let sa = (c_peak * c_peak / r).sqrt();
    Ok(sa / (sa + dq.sqrt()))
}

/// Exact solution of `q̇ = -Q q²` from `q0` after time `t`.
pub fn decay_closed_form(q0: f64, dq: f64, t: f64) -> f64 {
    q0 / (1.0 + dq * q0 * t)
}

/// Per-cell clarity values.
#[derive(Debug, Clone, PartialEq)]
pub struct ClarityField {
    q: Vec<f64>,
}

impl ClarityField {
    pub fn new(q: Vec<f64>) -> Result<Self, DomainError> {
        if let Some(p) = q.iter().position(|v| !(*v >= Q_MIN && *v <= 1.0 - Q_MIN)) {
            return Err(DomainError::new(
                "clarity field",
                format!("q[{p}] = {} outside [{Q_MIN}, {}]", q[p], 1.0 - Q_MIN),
            ));
        }
        Ok(Self { q })
    }

    pub fn uniform(n: usize, q0: f64) -> Result<Self, DomainError> {
        Self::new(vec![q0; n])
    }

    pub fn values(&self) -> &[f64] {
        &self.q
    }

    pub fn len(&self) -> usize {
        self.q.len()
    }

    pub fn is_empty(&self) -> bool {
        self.q.is_empty()
    }
}

/// One cell update inside [`advance`].
#[derive(Debug, Clone, Copy)]
pub(crate) struct Touch {
    pub cell: usize,
    pub q_before: f64,
    pub q_after: f64,
    /// Sensing gain `C` used for this update.
    pub gain: f64,
    /// True when the Euler step was clipped to the clarity bounds.
    pub clamped: bool,
}

/// One explicit Euler step of every cell's clarity with the robot at `pos`.
///
/// Cells with zero decay outside the footprint box are left untouched (their
/// rate is exactly zero); every other cell is reported to `on_touch`.
pub(crate) fn advance<F: FnMut(Touch)>(
    q: &mut [f64],
    pos: &Vec2,
    grid: &EnvGrid,
    sensor: &SensorModel,
    dt: f64,
    mut on_touch: F,
) {
    let bx = grid.cell_box(pos, &sensor.reach);
    let inside = |p: usize| match bx {
        Some((ix0, ix1, iy0, iy1)) => {
            let (ix, iy) = (p % grid.nx, p / grid.nx);
            ix >= ix0 && ix <= ix1 && iy >= iy0 && iy <= iy1
        }
        None => false,
    };
    let inv_r = 1.0 / sensor.meas_noise;
    let mut update = |p: usize, c: f64, q: &mut [f64]| {
        let qb = q[p];
        let raw = qb + dt * rate_with_gain(qb, c * c * inv_r, grid.decay[p]);
        let qa = raw.clamp(Q_MIN, 1.0 - Q_MIN);
        q[p] = qa;
        on_touch(Touch {
            cell: p,
            q_before: qb,
            q_after: qa,
            gain: c,
            clamped: raw != qa,
        });
    };
    for &p in &grid.decaying {
        if !inside(p) {
            update(p, 0.0, q);
        }
    }
    if let Some((ix0, ix1, iy0, iy1)) = bx {
        for iy in iy0..=iy1 {
            for ix in ix0..=ix1 {
                let p = iy * grid.nx + ix;
                let c = sense_gain(sensor, pos, &grid.centers[p]);
                if c == 0.0 && grid.decay[p] == 0.0 {
                    continue;
                }
                update(p, c, q);
            }
        }
    }
}

/// Advances every cell's clarity by one Euler step of length `dt` with the
/// robot sensing from position `x`.
pub fn propagate_clarity(
    field: &ClarityField,
    x: &Vec2,
    grid: &EnvGrid,
    sensor: &SensorModel,
    dt: f64,
) -> ClarityField {
    let mut next = field.clone();
    advance(&mut next.q, x, grid, sensor, dt, |_| {});
    next
}

/// In-place variant of [`propagate_clarity`] used by the simulator.
pub fn propagate_clarity_in_place(field: &mut ClarityField, x: &Vec2, grid: &EnvGrid, sensor: &SensorModel, dt: f64) {
    advance(&mut field.q, x, grid, sensor, dt, |_| {});
}

/// Mean hinge deficit `(1/N) Σ max(0, q̄ - q)`.
pub fn mean_clarity_deficit(field: &ClarityField, grid: &EnvGrid) -> f64 {
    let total: f64 = field
        .q
        .iter()
        .zip(&grid.target)
        .map(|(q, t)| (t - q).max(0.0))
        .sum();
    total / grid.len() as f64
}
