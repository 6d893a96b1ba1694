//! Stein variational optimisation of control-sequence particles.
//!
//! Each particle is a flattened control sequence `[u0x, u0y, u1x, …]` of
//! dimension `2N`. The target density is `p(u) ∝ exp(-α J(u))` under a
//! uniform prior, so `∇ log p = -α ∇J`. One iteration moves every particle
//! along
//!
//! ```text
//! φ(ξ_k) = 1/K Σ_j [ k(ξ_j, ξ_k) ∇log p(ξ_j) + ∇_{ξ_j} k(ξ_j, ξ_k) ]
//! ```
//!
//! with an RBF kernel, then projects back onto the control bounds.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::clarity::ClarityField;
use crate::cost::CostContext;
use crate::dynamics::{rollout, RobotState, Trajectory};
use crate::error::DomainError;
use crate::par;
use crate::Vec2;

/// Kernel bandwidth selection. Written as `"median"` or a number in
/// configuration files.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Bandwidth {
    /// Median heuristic recomputed every iteration.
    Median,
    Fixed(f64),
}

impl Serialize for Bandwidth {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            Bandwidth::Median => s.serialize_str("median"),
            Bandwidth::Fixed(h) => s.serialize_f64(*h),
        }
    }
}

impl<'de> Deserialize<'de> for Bandwidth {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Name(String),
            Value(f64),
        }
        match Raw::deserialize(d)? {
            Raw::Name(n) if n == "median" => Ok(Bandwidth::Median),
            Raw::Name(n) => Err(serde::de::Error::custom(format!(
                "bandwidth must be \"median\" or a number, got \"{n}\""
            ))),
            Raw::Value(h) => Ok(Bandwidth::Fixed(h)),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SvgdConfig {
    /// Particle count `K`.
    pub particles: usize,
    /// SVGD iterations per planning call.
    pub iters: usize,
    /// Step size `ε`.
    pub step: f64,
    /// Initialisation noise as a fraction of `u_max`.
    pub init_noise: f64,
    pub bandwidth: Bandwidth,
}

impl Default for SvgdConfig {
    fn default() -> Self {
        Self {
            particles: 8,
            iters: 50,
            step: 0.5,
            init_noise: 0.2,
            bandwidth: Bandwidth::Median,
        }
    }
}

impl SvgdConfig {
    pub fn validate(&self) -> Result<(), DomainError> {
        if self.particles == 0 {
            return Err(DomainError::new("svgd", "particles must be at least 1"));
        }
        if !(self.step > 0.0 && self.step.is_finite()) {
            return Err(DomainError::new("svgd", format!("step {} must be positive", self.step)));
        }
        if !(self.init_noise >= 0.0 && self.init_noise.is_finite()) {
            return Err(DomainError::new("svgd", "init_noise must be non-negative"));
        }
        if let Bandwidth::Fixed(h) = self.bandwidth {
            if !(h > 0.0 && h.is_finite()) {
                return Err(DomainError::new("svgd", format!("bandwidth {h} must be positive")));
            }
        }
        Ok(())
    }
}

/// The particle population being transported.
#[derive(Debug, Clone, PartialEq)]
pub struct ParticleSet {
    pub particles: Vec<Vec<f64>>,
}

impl ParticleSet {
    pub fn len(&self) -> usize {
        self.particles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.particles.is_empty()
    }

    /// Gram matrix `K_ij = k(ξ_i, ξ_j)`.
    pub fn gram(&self, h: f64) -> Result<Vec<Vec<f64>>, DomainError> {
        let k = self.len();
        let mut m = vec![vec![0.0; k]; k];
        for (i, a) in self.particles.iter().enumerate() {
            for (j, b) in self.particles.iter().enumerate().skip(i) {
                let (v, _) = rbf_kernel(a, b, h)?;
                m[i][j] = v;
                m[j][i] = v;
            }
        }
        Ok(m)
    }

    /// Smallest pairwise Euclidean distance, or infinity for fewer than two.
    pub fn min_pairwise_distance(&self) -> f64 {
        let mut best = f64::INFINITY;
        for i in 0..self.len() {
            for j in i + 1..self.len() {
                best = best.min(sq_dist(&self.particles[i], &self.particles[j]).sqrt());
            }
        }
        best
    }
}

/// Result of one planning call, sorted views available through `order`.
#[derive(Debug, Clone, PartialEq)]
pub struct PlanResult {
    /// Final projected particles.
    pub particles: Vec<Vec<f64>>,
    /// Rollout of each particle from the planning state.
    pub nominals: Vec<Trajectory>,
    pub costs: Vec<f64>,
    /// Particle indices by ascending cost, ties by index.
    pub order: Vec<usize>,
}

impl PlanResult {
    pub fn best(&self) -> usize {
        self.order[0]
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// RBF kernel `k = exp(-‖a-b‖² / 2h)` and its gradient in the first argument.
pub fn rbf_kernel(a: &[f64], b: &[f64], h: f64) -> Result<(f64, Vec<f64>), DomainError> {
    if !(h > 0.0) {
        return Err(DomainError::new("rbf_kernel", format!("bandwidth {h} must be positive")));
    }
    if a.len() != b.len() {
        return Err(DomainError::new("rbf_kernel", "particles differ in dimension"));
    }
    let k = (-sq_dist(a, b) / (2.0 * h)).exp();
    let grad = a.iter().zip(b).map(|(x, y)| -(x - y) / h * k).collect();
    Ok((k, grad))
}

/// Median heuristic `h = med² / (2 ln(K+1))`, falling back to 1 for fewer
/// than two particles or zero spread.
pub fn median_bandwidth(particles: &[Vec<f64>]) -> f64 {
    let k = particles.len();
    if k < 2 {
        return 1.0;
    }
    let mut d: Vec<f64> = Vec::with_capacity(k * (k - 1) / 2);
    for i in 0..k {
        for j in i + 1..k {
            d.push(sq_dist(&particles[i], &particles[j]).sqrt());
        }
    }
    d.sort_by(f64::total_cmp);
    let m = d.len();
    let med = if m % 2 == 1 { d[m / 2] } else { 0.5 * (d[m / 2 - 1] + d[m / 2]) };
    if med == 0.0 {
        return 1.0;
    }
    med * med / (2.0 * ((k + 1) as f64).ln())
}

pub(crate) fn to_controls(flat: &[f64]) -> Vec<Vec2> {
    flat.chunks_exact(2).map(|c| Vec2::new(c[0], c[1])).collect()
}

/// `∇ log p(u) = -α ∇J(u)`; the uniform prior contributes nothing.
pub fn log_posterior_grad(
    ctx: &CostContext<'_>,
    particle: &[f64],
    x0: &RobotState,
    q0: &ClarityField,
) -> Result<Vec<f64>, DomainError> {
    let alpha = ctx.cfg.alpha;
    let g = ctx.cost_gradient(&to_controls(particle), x0, q0)?;
    Ok(g.iter().flat_map(|v| [-alpha * v.x, -alpha * v.y]).collect())
}

/// One SVGD update of every particle followed by projection onto
/// `[-u_max, u_max]`.
pub fn svgd_step(set: &mut ParticleSet, grads: &[Vec<f64>], h: f64, step: f64, u_max: f64) -> Result<(), DomainError> {
    let k = set.len();
    if grads.len() != k {
        return Err(DomainError::new("svgd_step", format!("{} gradients for {k} particles", grads.len())));
    }
    if !(h > 0.0) {
        return Err(DomainError::new("svgd_step", format!("bandwidth {h} must be positive")));
    }
    let particles = &set.particles;
    let kmat = set.gram(h)?;
    let phis = par::map_indexed(k, |target| {
        let xt = &particles[target];
        let mut phi = vec![0.0; xt.len()];
        for (j, xj) in particles.iter().enumerate() {
            let kv = kmat[j][target];
            for (d, acc) in phi.iter_mut().enumerate() {
                // ∇_{ξ_j} k(ξ_j, ξ_t) = -(ξ_j - ξ_t)/h · k
                *acc += kv * grads[j][d] + (-(xj[d] - xt[d]) / h * kv);
            }
        }
        phi
    });
    let kf = k as f64;
    for (x, phi) in set.particles.iter_mut().zip(&phis) {
        for (xi, p) in x.iter_mut().zip(phi) {
            *xi = (*xi + step * (p / kf)).clamp(-u_max, u_max);
        }
    }
    Ok(())
}

/// Initial particles: the previous solution shifted `shift` steps left with
/// its last control repeated, or zeros, plus Gaussian noise.
pub fn init_particles(
    k: usize,
    steps: usize,
    u_max: f64,
    noise: f64,
    warm: Option<&[Vec<f64>]>,
    shift: usize,
    rng: &mut ChaCha8Rng,
) -> ParticleSet {
    let sigma = noise * u_max;
    let normal = (sigma > 0.0).then(|| Normal::new(0.0, sigma).expect("finite sigma"));
    let dim = 2 * steps;
    let particles = (0..k)
        .map(|i| {
            let mut p = vec![0.0; dim];
            if let Some(prev) = warm.and_then(|w| w.get(i)).filter(|w| w.len() == dim) {
                for s in 0..steps {
                    let src = (s + shift).min(steps - 1);
                    p[2 * s] = prev[2 * src];
                    p[2 * s + 1] = prev[2 * src + 1];
                }
            }
            if let Some(n) = &normal {
                for v in p.iter_mut() {
                    *v += n.sample(rng);
                }
            }
            for v in p.iter_mut() {
                *v = v.clamp(-u_max, u_max);
            }
            p
        })
        .collect();
    ParticleSet { particles }
}

/// Runs `iters` SVGD iterations from `initial` and returns the transported set.
pub fn optimize(
    ctx: &CostContext<'_>,
    cfg: &SvgdConfig,
    initial: ParticleSet,
    x0: &RobotState,
    q0: &ClarityField,
) -> Result<ParticleSet, DomainError> {
    let mut set = initial;
    for _ in 0..cfg.iters {
        let grads = par::map_slice(&set.particles, |p| log_posterior_grad(ctx, p, x0, q0))
            .into_iter()
            .collect::<Result<Vec<_>, _>>()?;
        let h = match cfg.bandwidth {
            Bandwidth::Median => median_bandwidth(&set.particles),
            Bandwidth::Fixed(h) => h,
        };
        svgd_step(&mut set, &grads, h, cfg.step, ctx.model.u_max)?;
    }
    Ok(set)
}

/// Rolls out and scores every particle.
pub fn evaluate(
    ctx: &CostContext<'_>,
    set: ParticleSet,
    x0: &RobotState,
    q0: &ClarityField,
    t0: f64,
) -> Result<PlanResult, DomainError> {
    let scored = par::map_slice(&set.particles, |p| {
        let traj = rollout(ctx.model, x0, &to_controls(p), t0, ctx.cfg.dt);
        let cost = ctx.trajectory_cost(&traj, q0)?;
        Ok::<_, DomainError>((traj, cost))
    })
    .into_iter()
    .collect::<Result<Vec<_>, _>>()?;
    let (nominals, costs): (Vec<_>, Vec<_>) = scored.into_iter().unzip();
    let mut order: Vec<usize> = (0..costs.len()).collect();
    order.sort_by(|&a, &b| costs[a].total_cmp(&costs[b]).then(a.cmp(&b)));
    Ok(PlanResult {
        particles: set.particles,
        nominals,
        costs,
        order,
    })
}

/// One receding-horizon planning call. Deterministic in `seed`.
#[allow(clippy::too_many_arguments)]
pub fn plan(
    ctx: &CostContext<'_>,
    cfg: &SvgdConfig,
    x0: &RobotState,
    q0: &ClarityField,
    t0: f64,
    warm: Option<&PlanResult>,
    shift: usize,
    seed: u64,
) -> Result<PlanResult, DomainError> {
    let steps = ctx.cfg.horizon_steps();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let initial = init_particles(
        cfg.particles,
        steps,
        ctx.model.u_max,
        cfg.init_noise,
        warm.map(|w| w.particles.as_slice()),
        shift,
        &mut rng,
    );
    let set = optimize(ctx, cfg, initial, x0, q0)?;
    evaluate(ctx, set, x0, q0, t0)
}
