//! Safety filter: nominal-prefix plus brake-to-hover candidates, verified
//! against a static obstacle map, with least-cost safe commitment.

use serde::{Deserialize, Serialize};

use crate::clarity::ClarityField;
use crate::cost::{CostAccumulator, CostContext, ObstaclePenalty};
use crate::dynamics::{step, RobotKind, RobotModel, RobotState, Trajectory};
use crate::error::DomainError;
use crate::par;
use crate::svgd::PlanResult;
use crate::Vec2;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Workspace {
    pub xmin: f64,
    pub xmax: f64,
    pub ymin: f64,
    pub ymax: f64,
}

impl Workspace {
    pub fn contains(&self, p: &Vec2, margin: f64) -> bool {
        p.x >= self.xmin + margin && p.x <= self.xmax - margin && p.y >= self.ymin + margin && p.y <= self.ymax - margin
    }

    pub fn width(&self) -> f64 {
        self.xmax - self.xmin
    }

    pub fn height(&self) -> f64 {
        self.ymax - self.ymin
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Disc {
    pub center: Vec2,
    pub radius: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObstacleSet {
    discs: Vec<Disc>,
    padding: f64,
    workspace: Workspace,
}

impl ObstacleSet {
    pub fn new(discs: Vec<Disc>, padding: f64, workspace: Workspace) -> Result<Self, DomainError> {
        if !(padding >= 0.0 && padding.is_finite()) {
            return Err(DomainError::new("obstacles", format!("padding {padding} must be non-negative")));
        }
        if !(workspace.xmax > workspace.xmin && workspace.ymax > workspace.ymin) {
            return Err(DomainError::new("obstacles", "workspace rectangle is empty"));
        }
        for (i, d) in discs.iter().enumerate() {
            if !(d.radius > 0.0 && d.radius.is_finite()) {
                return Err(DomainError::new("obstacles", format!("disc {i} radius {} must be positive", d.radius)));
            }
            if !(d.center.x.is_finite() && d.center.y.is_finite()) {
                return Err(DomainError::new("obstacles", format!("disc {i} center is not finite")));
            }
        }
        Ok(Self {
            discs,
            padding,
            workspace,
        })
    }

    pub fn empty(workspace: Workspace) -> Self {
        Self::new(Vec::new(), 0.0, workspace).expect("valid workspace")
    }

    pub fn discs(&self) -> &[Disc] {
        &self.discs
    }

    pub fn padding(&self) -> f64 {
        self.padding
    }

    pub fn workspace(&self) -> &Workspace {
        &self.workspace
    }

    /// Inside the workspace shrunk by `margin` and at least
    /// `radius + padding + margin` from every disc center.
    pub fn clear(&self, p: &Vec2, margin: f64) -> bool {
        self.workspace.contains(p, margin)
            && self
                .discs
                .iter()
                .all(|d| (p - d.center).norm() >= d.radius + self.padding + margin)
    }

    /// Closed safe set: the boundary counts as safe.
    pub fn in_safe_set(&self, x: &RobotState) -> bool {
        self.clear(&x.position, 0.0)
    }

    /// Near-rest states with extra clearance, invariant under the backup
    /// controller.
    pub fn in_backup_set(&self, bc: &BackupConfig, x: &RobotState) -> bool {
        x.velocity.norm() <= bc.stop_speed && self.clear(&x.position, bc.clearance)
    }

    /// Soft penalty over the padded discs, for the ungated planner.
    pub fn penalty(&self, weight: f64) -> ObstaclePenalty {
        ObstaclePenalty {
            discs: self.discs.iter().map(|d| (d.center, d.radius + self.padding)).collect(),
            weight,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BackupConfig {
    /// Backup segment duration in seconds.
    pub horizon: f64,
    /// Speed below which the robot counts as stopped.
    pub stop_speed: f64,
    /// Extra obstacle margin for the backup set.
    pub clearance: f64,
    /// Nominal steps between switching times.
    pub switch_stride: usize,
}

impl Default for BackupConfig {
    fn default() -> Self {
        Self {
            horizon: 2.0,
            stop_speed: 0.05,
            clearance: 0.1,
            switch_stride: 10,
        }
    }
}

impl BackupConfig {
    pub fn validate(&self, model: &RobotModel) -> Result<(), DomainError> {
        if self.switch_stride == 0 {
            return Err(DomainError::new("gatekeeper", "switch_stride must be at least 1"));
        }
        if !(self.stop_speed > 0.0 && self.stop_speed.is_finite()) {
            return Err(DomainError::new("gatekeeper", "stop_speed must be positive"));
        }
        if !(self.clearance >= 0.0 && self.clearance.is_finite()) {
            return Err(DomainError::new("gatekeeper", "clearance must be non-negative"));
        }
        let brake = match model.kind {
            RobotKind::SingleIntegrator => 0.0,
            RobotKind::DoubleIntegrator => model.v_max / model.u_max,
        };
        if !(self.horizon >= brake && self.horizon.is_finite()) {
            return Err(DomainError::new(
                "gatekeeper",
                format!("backup_horizon {} is shorter than the {brake} s braking time", self.horizon),
            ));
        }
        Ok(())
    }
}

/// Brake-to-hover policy. Decelerates along `-v` at full authority and
/// cancels the remaining velocity in one step once that is within reach.
pub fn backup_controller(x: &RobotState, model: &RobotModel, dt: f64) -> Vec2 {
    match model.kind {
        RobotKind::SingleIntegrator => Vec2::zeros(),
        RobotKind::DoubleIntegrator => {
            let speed = x.velocity.norm();
            if speed == 0.0 {
                return Vec2::zeros();
            }
            let gain = (model.u_max / speed).min(1.0 / dt);
            -x.velocity * gain
        }
    }
}

/// Closed-loop rollout of the backup controller for the backup horizon.
pub fn build_backup(x_switch: &RobotState, bc: &BackupConfig, model: &RobotModel, t_switch: f64, dt: f64) -> Trajectory {
    let steps = (bc.horizon / dt).round() as usize;
    let mut states = Vec::with_capacity(steps + 1);
    let mut controls = Vec::with_capacity(steps);
    let mut x = *x_switch;
    states.push(x);
    for _ in 0..steps {
        let u = backup_controller(&x, model, dt);
        x = step(model, &x, &u, dt);
        controls.push(u);
        states.push(x);
    }
    Trajectory {
        t0: t_switch,
        dt,
        states,
        controls,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Candidate {
    pub particle: usize,
    /// Switch index in nominal steps.
    pub switch_step: usize,
    pub switch_time: f64,
    pub path: Trajectory,
    pub cost: f64,
    pub safe: bool,
}

/// Safety verdict over a whole path: every state safe and the last one in
/// the backup set.
pub fn is_safe_path(path: &Trajectory, obs: &ObstacleSet, bc: &BackupConfig) -> bool {
    path.states.iter().all(|s| obs.in_safe_set(s)) && obs.in_backup_set(bc, path.last_state())
}

pub fn is_safe_candidate(cand: &Candidate, obs: &ObstacleSet, bc: &BackupConfig) -> bool {
    is_safe_path(&cand.path, obs, bc)
}

/// Builds every `(particle, switch)` candidate, particle-major, switch
/// indices `stride, 2·stride, …, N`.
pub fn build_candidates(
    plan: &PlanResult,
    q0: &ClarityField,
    ctx: &CostContext<'_>,
    bc: &BackupConfig,
    obs: &ObstacleSet,
) -> Result<Vec<Candidate>, DomainError> {
    let per = par::map_slice(&plan.nominals, |nominal| candidates_for(nominal, q0, ctx, bc, obs))
        .into_iter()
        .collect::<Result<Vec<_>, _>>()?;
    Ok(per
        .into_iter()
        .enumerate()
        .flat_map(|(k, cands)| {
            cands.into_iter().map(move |mut c| {
                c.particle = k;
                c
            })
        })
        .collect())
}

fn candidates_for(
    nominal: &Trajectory,
    q0: &ClarityField,
    ctx: &CostContext<'_>,
    bc: &BackupConfig,
    obs: &ObstacleSet,
) -> Result<Vec<Candidate>, DomainError> {
    let n = nominal.steps();
    let stride = bc.switch_stride;
    if stride == 0 || !n.is_multiple_of(stride) {
        return Err(DomainError::new(
            "gatekeeper",
            format!("{n} nominal steps are not divisible into switch stride {stride}"),
        ));
    }
    let model = ctx.model;
    let dt = nominal.dt;
    let mut out = Vec::with_capacity(n / stride);
    let mut acc = CostAccumulator::new(*ctx, q0);
    let mut prefix_safe = obs.in_safe_set(&nominal.states[0]);
    for s in 1..=n {
        acc.push(&nominal.states[s].position);
        prefix_safe &= obs.in_safe_set(&nominal.states[s]);
        if s % stride != 0 {
            continue;
        }
        let switch_time = nominal.t0 + s as f64 * dt;
        let backup = build_backup(&nominal.states[s], bc, model, switch_time, dt);
        let mut fork = acc.clone();
        for st in &backup.states[1..] {
            fork.push(&st.position);
        }
        let mut states = nominal.states[..=s].to_vec();
        states.extend_from_slice(&backup.states[1..]);
        let mut controls = nominal.controls[..s].to_vec();
        controls.extend_from_slice(&backup.controls);
        let path = Trajectory {
            t0: nominal.t0,
            dt,
            states,
            controls,
        };
        let safe = prefix_safe
            && backup.states[1..].iter().all(|x| obs.in_safe_set(x))
            && obs.in_backup_set(bc, path.last_state());
        out.push(Candidate {
            particle: 0,
            switch_step: s,
            switch_time,
            path,
            cost: fork.value(),
            safe,
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CommittedTrajectory {
    pub path: Trajectory,
    pub committed_at: f64,
    pub valid_until: f64,
    pub cost: f64,
    /// `(particle, switch_step)` of the candidate, `None` for the initial hover.
    pub source: Option<(usize, usize)>,
}

impl CommittedTrajectory {
    /// Pure backup from the initial state.
    pub fn initial(x0: &RobotState, bc: &BackupConfig, model: &RobotModel, t0: f64, dt: f64, cost: f64) -> Self {
        let path = build_backup(x0, bc, model, t0, dt);
        let valid_until = path.t_end();
        Self {
            path,
            committed_at: t0,
            valid_until,
            cost,
            source: None,
        }
    }

    pub fn from_candidate(c: &Candidate, now: f64) -> Self {
        Self {
            path: c.path.clone(),
            committed_at: now,
            valid_until: c.path.t_end(),
            cost: c.cost,
            source: Some((c.particle, c.switch_step)),
        }
    }
}

/// Index of the least-cost safe candidate, ties to the earlier switch and
/// then the lower particle index.
pub fn select(candidates: &[Candidate]) -> Option<usize> {
    candidates
        .iter()
        .enumerate()
        .filter(|(_, c)| c.safe)
        .min_by(|(_, a), (_, b)| {
            a.cost
                .total_cmp(&b.cost)
                .then(a.switch_step.cmp(&b.switch_step))
                .then(a.particle.cmp(&b.particle))
        })
        .map(|(i, _)| i)
}

/// Commits the selected candidate, or keeps `previous` when none is safe.
pub fn commit(candidates: &[Candidate], previous: &CommittedTrajectory, now: f64) -> CommittedTrajectory {
    match select(candidates) {
        Some(i) => CommittedTrajectory::from_candidate(&candidates[i], now),
        None => previous.clone(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clarity::{EnvGrid, SensorModel};
    use crate::cost::CostConfig;
    use crate::dynamics::rollout;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn ws() -> Workspace {
        Workspace {
            xmin: -10.0,
            xmax: 10.0,
            ymin: -10.0,
            ymax: 10.0,
        }
    }

    fn one_disc() -> ObstacleSet {
        ObstacleSet::new(
            vec![Disc {
                center: Vec2::zeros(),
                radius: 1.0,
            }],
            0.1,
            ws(),
        )
        .unwrap()
    }

    #[test]
    fn safe_set_examples() {
        let obs = one_disc();
        assert!(!obs.in_safe_set(&RobotState::at_rest(Vec2::new(0.5, 0.0))));
        assert!(obs.in_safe_set(&RobotState::at_rest(Vec2::new(2.0, 0.0))));
        assert!(obs.in_safe_set(&RobotState::at_rest(Vec2::new(1.1, 0.0))));
        assert!(!obs.in_safe_set(&RobotState::at_rest(Vec2::new(10.5, 3.0))));
    }

    #[test]
    fn backup_set_examples() {
        let obs = one_disc();
        let bc = BackupConfig::default();
        assert!(obs.in_backup_set(&bc, &RobotState::at_rest(Vec2::new(5.0, 5.0))));
        assert!(!obs.in_backup_set(&bc, &RobotState::new(Vec2::new(5.0, 5.0), Vec2::new(1.0, 0.0))));
        let p = Vec2::new(1.0 + 0.1 + bc.clearance / 2.0, 0.0);
        assert!(obs.in_safe_set(&RobotState::at_rest(p)));
        assert!(!obs.in_backup_set(&bc, &RobotState::at_rest(p)));
    }

    #[test]
    fn backup_controller_examples() {
        let m = RobotModel::double(1.0, 1.5);
        let u = backup_controller(&RobotState::new(Vec2::zeros(), Vec2::new(1.0, 0.0)), &m, 0.1);
        assert_eq!(u, Vec2::new(-1.0, 0.0));
        assert_eq!(backup_controller(&RobotState::at_rest(Vec2::zeros()), &m, 0.1), Vec2::zeros());
        let u = backup_controller(&RobotState::new(Vec2::zeros(), Vec2::new(1.0, 1.0)), &m, 0.1);
        let s = 1.0 / 2f64.sqrt();
        assert_relative_eq!(u.x, -s, epsilon = 1e-15);
        assert_relative_eq!(u.y, -s, epsilon = 1e-15);
        let single = RobotModel::single(1.0);
        assert_eq!(
            backup_controller(&RobotState::new(Vec2::zeros(), Vec2::new(1.0, 0.0)), &single, 0.1),
            Vec2::zeros()
        );
    }

    #[test]
    fn backup_from_rest_hovers() {
        let m = RobotModel::double(1.0, 1.0);
        let x0 = RobotState::at_rest(Vec2::new(3.0, 4.0));
        let b = build_backup(&x0, &BackupConfig::default(), &m, 1.0, 0.1);
        assert_eq!(b.steps(), 20);
        assert!(b.states.iter().all(|s| *s == x0));
        assert!(b.is_consistent(&m));
    }

    #[test]
    fn braking_distance_matches_kinematics() {
        let m = RobotModel::double(1.0, 1.0);
        let x0 = RobotState::new(Vec2::zeros(), Vec2::new(1.0, 0.0));
        let bc = BackupConfig::default();
        let b = build_backup(&x0, &bc, &m, 0.0, 0.1);
        let end = b.last_state();
        assert!(end.velocity.norm() <= bc.stop_speed);
        // exact ZOH integration of constant deceleration reaches v = 0 at
        // t = 1 s after ½·v²/u_max
        assert_relative_eq!(end.position.x, 0.5, epsilon = 1e-9);
        assert_eq!(end.position.y, 0.0);
        let stop = b.states.iter().position(|s| s.velocity.norm() <= bc.stop_speed).unwrap();
        assert!(stop as f64 * 0.1 <= 1.0 + 1e-9);
    }

    #[test]
    fn backup_reaches_rest_within_horizon_from_any_bounded_velocity() {
        let m = RobotModel::double(1.0, 1.0);
        let bc = BackupConfig::default();
        for i in 0..16 {
            let th = i as f64 * std::f64::consts::PI / 8.0;
            let v = Vec2::new(th.cos(), th.sin());
            let v = Vec2::new(v.x.clamp(-1.0, 1.0), v.y.clamp(-1.0, 1.0));
            let b = build_backup(&RobotState::new(Vec2::zeros(), v), &bc, &m, 0.0, 0.1);
            assert!(b.last_state().velocity.norm() <= bc.stop_speed);
        }
    }

    #[test]
    fn terminal_hover_is_invariant() {
        let m = RobotModel::double(1.0, 1.0);
        let x0 = RobotState::new(Vec2::zeros(), Vec2::new(0.7, -0.4));
        let b = build_backup(&x0, &BackupConfig::default(), &m, 0.0, 0.1);
        let end = *b.last_state();
        let again = build_backup(&end, &BackupConfig::default(), &m, 2.0, 0.1);
        for s in &again.states {
            assert!((s.position - end.position).norm() < 1e-12);
        }
    }

    fn world() -> (EnvGrid, SensorModel, RobotModel, CostConfig) {
        let grid = EnvGrid::uniform(4, 4, 1.0, 0.0, 0.8).unwrap();
        let sensor = SensorModel::isotropic(1.0, 0.36, 0.25).unwrap();
        let model = RobotModel::double(1.0, 1.0);
        let cfg = CostConfig {
            horizon: 2.0,
            ..CostConfig::default()
        };
        (grid, sensor, model, cfg)
    }

    fn fake_plan(model: &RobotModel, x0: &RobotState, controls: Vec<Vec<Vec2>>) -> PlanResult {
        let nominals: Vec<Trajectory> = controls.iter().map(|c| rollout(model, x0, c, 0.0, 0.1)).collect();
        let k = nominals.len();
        PlanResult {
            particles: vec![vec![]; k],
            nominals,
            costs: vec![0.0; k],
            order: (0..k).collect(),
        }
    }

    #[test]
    fn candidate_counts_and_structure() {
        let (grid, sensor, model, cfg) = world();
        let ctx = CostContext::new(&grid, &sensor, &model, &cfg);
        let x0 = RobotState::at_rest(Vec2::new(2.0, 2.0));
        let q0 = ClarityField::uniform(16, 0.01).unwrap();
        let plan = fake_plan(&model, &x0, vec![vec![Vec2::new(0.3, 0.1); 20]; 4]);
        let obs = ObstacleSet::empty(Workspace {
            xmin: 0.0,
            xmax: 4.0,
            ymin: 0.0,
            ymax: 4.0,
        });
        let bc = BackupConfig {
            switch_stride: 5,
            ..BackupConfig::default()
        };
        let cands = build_candidates(&plan, &q0, &ctx, &bc, &obs).unwrap();
        assert_eq!(cands.len(), 4 * 20 / 5);
        for c in &cands {
            let nominal = &plan.nominals[c.particle];
            assert_eq!(&c.path.states[..=c.switch_step], &nominal.states[..=c.switch_step]);
            assert_eq!(c.path.steps(), c.switch_step + 20);
            assert!(c.path.is_consistent(&model));
            let full = ctx.path_cost(&q0, c.path.positions().skip(1));
            assert_relative_eq!(c.cost, full, max_relative = 1e-12);
            assert!(c.safe);
        }
        let bc = BackupConfig {
            switch_stride: 20,
            ..BackupConfig::default()
        };
        assert_eq!(build_candidates(&plan, &q0, &ctx, &bc, &obs).unwrap().len(), 4);
        let bc = BackupConfig {
            switch_stride: 7,
            ..BackupConfig::default()
        };
        assert!(build_candidates(&plan, &q0, &ctx, &bc, &obs).is_err());
    }

    #[test]
    fn unsafe_prefix_poisons_later_switches() {
        let (grid, sensor, model, cfg) = world();
        let ctx = CostContext::new(&grid, &sensor, &model, &cfg);
        let x0 = RobotState::at_rest(Vec2::new(1.0, 2.0));
        let q0 = ClarityField::uniform(16, 0.01).unwrap();
        // accelerate toward a disc ahead, then brake hard so the nominal exits it
        let mut u = vec![Vec2::new(1.0, 0.0); 10];
        u.extend(vec![Vec2::new(-1.0, 0.0); 10]);
        let plan = fake_plan(&model, &x0, vec![u]);
        let hit = plan.nominals[0].states[5].position;
        let obs = ObstacleSet::new(
            vec![Disc {
                center: hit,
                radius: 0.05,
            }],
            0.0,
            Workspace {
                xmin: 0.0,
                xmax: 4.0,
                ymin: 0.0,
                ymax: 4.0,
            },
        )
        .unwrap();
        let bc = BackupConfig {
            switch_stride: 5,
            ..BackupConfig::default()
        };
        let cands = build_candidates(&plan, &q0, &ctx, &bc, &obs).unwrap();
        assert!(cands.iter().filter(|c| c.switch_step >= 5).all(|c| !c.safe));
    }

    #[test]
    fn fast_terminal_state_is_unsafe() {
        let m = RobotModel::double(1.0, 1.0);
        let obs = ObstacleSet::empty(ws());
        let bc = BackupConfig::default();
        let path = rollout(&m, &RobotState::at_rest(Vec2::zeros()), &[Vec2::new(1.0, 0.0)], 0.0, 0.1);
        // terminal speed 0.1 = 2·stop_speed
        assert!(!is_safe_path(&path, &obs, &bc));
        let rest = rollout(&m, &RobotState::at_rest(Vec2::zeros()), &[Vec2::zeros(); 3], 0.0, 0.1);
        assert!(is_safe_path(&rest, &obs, &bc));
    }

    fn cand(k: usize, s: usize, cost: f64, safe: bool) -> Candidate {
        Candidate {
            particle: k,
            switch_step: s,
            switch_time: s as f64,
            path: Trajectory {
                t0: 0.0,
                dt: 0.1,
                states: vec![RobotState::at_rest(Vec2::new(k as f64, s as f64))],
                controls: vec![],
            },
            cost,
            safe,
        }
    }

    fn hover() -> CommittedTrajectory {
        CommittedTrajectory::initial(
            &RobotState::at_rest(Vec2::zeros()),
            &BackupConfig::default(),
            &RobotModel::double(1.0, 1.0),
            0.0,
            0.1,
            0.5,
        )
    }

    #[test]
    fn commit_examples() {
        let prev = hover();
        let c = vec![cand(0, 10, 0.3, true), cand(1, 10, 0.2, true), cand(2, 10, 0.1, false)];
        let got = commit(&c, &prev, 1.0);
        assert_eq!(got.source, Some((1, 10)));
        assert_eq!(got.committed_at, 1.0);
        let none = vec![cand(0, 10, 0.3, false)];
        assert_eq!(commit(&none, &prev, 1.0), prev);
        assert_eq!(commit(&[], &prev, 1.0), prev);
    }

    #[test]
    fn ties_go_to_earlier_switch_then_lower_particle() {
        let c = vec![cand(0, 20, 0.2, true), cand(1, 10, 0.2, true), cand(2, 10, 0.2, true)];
        assert_eq!(select(&c), Some(1));
    }

    proptest! {
        #[test]
        fn selection_invariant_under_monotone_cost_maps(
            raw in proptest::collection::vec((0.0f64..1.0, any::<bool>(), 1usize..4), 1..20),
        ) {
            let c: Vec<Candidate> = raw.iter().enumerate().map(|(i, (cost, safe, s))| cand(i % 4, s * 10, *cost, *safe)).collect();
            let scaled: Vec<Candidate> = c.iter().map(|x| Candidate { cost: x.cost * 10.0, ..x.clone() }).collect();
            let warped: Vec<Candidate> = c.iter().map(|x| Candidate { cost: x.cost.exp() + 3.0, ..x.clone() }).collect();
            prop_assert_eq!(select(&c), select(&scaled));
            prop_assert_eq!(select(&c), select(&warped));
            if let Some(i) = select(&c) {
                prop_assert!(c[i].safe);
                prop_assert!(c.iter().filter(|x| x.safe).all(|x| x.cost >= c[i].cost));
            } else {
                prop_assert!(c.iter().all(|x| !x.safe));
            }
        }
    }
}
