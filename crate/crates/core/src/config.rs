//! Declarative episode configuration.
//!
//! A [`ConfigFile`] is the TOML document: grid, sensor, region lists,
//! robot, planner, gatekeeper, obstacles and episode settings. Every
//! section except `grid` has defaults. [`ConfigFile::resolve`] paints the
//! regions onto the grid and checks every cross-module rule, producing an
//! [`EpisodeConfig`].

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::clarity::{ClarityField, EnvGrid, SensorModel, DEFAULT_INITIAL_CLARITY};
use crate::cost::{CostConfig, DEFAULT_ALPHA, DEFAULT_BETA, DEFAULT_DT, DEFAULT_HORIZON};
use crate::dynamics::{RobotKind, RobotModel, RobotState};
use crate::error::{ConfigError, DomainError};
use crate::gatekeeper::{BackupConfig, Disc, ObstacleSet, Workspace};
use crate::svgd::{Bandwidth, SvgdConfig};
use crate::{Mat2, Vec2};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    #[serde(default)]
    pub name: String,
    #[serde(default)]
    pub description: String,
    #[serde(default = "default_padding")]
    pub padding: f64,
    #[serde(default)]
    pub initial_clarity: InitialClarity,
    pub grid: GridSection,
    #[serde(default)]
    pub sensor: SensorSection,
    #[serde(default)]
    pub robot: RobotSection,
    #[serde(default)]
    pub cost: CostSection,
    #[serde(default)]
    pub svgd: SvgdSection,
    #[serde(default)]
    pub gatekeeper: GatekeeperSection,
    /// Defaults to the grid extent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub workspace: Option<Workspace>,
    #[serde(default)]
    pub episode: EpisodeSection,
    #[serde(default)]
    pub decay_regions: Vec<Region>,
    #[serde(default)]
    pub target_regions: Vec<Region>,
    #[serde(default)]
    pub obstacles: Vec<ObstacleEntry>,
}

fn default_padding() -> f64 {
    0.1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSection {
    pub nx: usize,
    pub ny: usize,
    pub cell_size: f64,
    #[serde(default)]
    pub origin: [f64; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SensorSection {
    pub kappa: f64,
    pub sigma_c: [[f64; 2]; 2],
    pub meas_noise: f64,
}

impl Default for SensorSection {
    fn default() -> Self {
        Self {
            kappa: 1.0,
            sigma_c: [[0.36, 0.0], [0.0, 0.36]],
            meas_noise: 0.25,
        }
    }
}

/// Axis-aligned rectangle `[xmin, ymin, xmax, ymax]` and the value painted
/// onto every cell whose centre it contains.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Region {
    pub rect: [f64; 4],
    pub value: f64,
}

impl Region {
    pub fn new(xmin: f64, ymin: f64, xmax: f64, ymax: f64, value: f64) -> Self {
        Self {
            rect: [xmin, ymin, xmax, ymax],
            value,
        }
    }

    pub fn contains(&self, p: &Vec2) -> bool {
        let [x0, y0, x1, y1] = self.rect;
        p.x >= x0 && p.x <= x1 && p.y >= y0 && p.y <= y1
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum InitialClarity {
    Uniform(f64),
    /// Painted over the default initial clarity.
    Regions(Vec<Region>),
}

impl Default for InitialClarity {
    fn default() -> Self {
        InitialClarity::Uniform(DEFAULT_INITIAL_CLARITY)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RobotSection {
    pub kind: RobotKind,
    pub u_max: f64,
    pub v_max: f64,
    pub x0: [f64; 2],
    pub v0: [f64; 2],
}

impl Default for RobotSection {
    fn default() -> Self {
        Self {
            kind: RobotKind::DoubleIntegrator,
            u_max: 1.0,
            v_max: 1.0,
            x0: [5.0, 1.0],
            v0: [0.0, 0.0],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CostSection {
    pub beta: f64,
    pub horizon: f64,
    /// Soft obstacle penalty weight, used only with the gatekeeper off.
    pub obstacle_weight: f64,
}

impl Default for CostSection {
    fn default() -> Self {
        Self {
            beta: DEFAULT_BETA,
            horizon: DEFAULT_HORIZON,
            obstacle_weight: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SvgdSection {
    pub particles: usize,
    pub iters: usize,
    pub step: f64,
    pub alpha: f64,
    pub init_noise: f64,
    pub bandwidth: Bandwidth,
    /// Mixed into the episode seed for the planner's noise stream.
    pub seed: u64,
}

impl Default for SvgdSection {
    fn default() -> Self {
        let d = SvgdConfig::default();
        Self {
            particles: d.particles,
            iters: d.iters,
            step: d.step,
            alpha: DEFAULT_ALPHA,
            init_noise: d.init_noise,
            bandwidth: d.bandwidth,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GatekeeperSection {
    pub enabled: bool,
    pub backup_horizon: f64,
    pub stop_speed: f64,
    pub clearance: f64,
    pub switch_stride: usize,
}

impl Default for GatekeeperSection {
    fn default() -> Self {
        let d = BackupConfig::default();
        Self {
            enabled: true,
            backup_horizon: d.horizon,
            stop_speed: d.stop_speed,
            clearance: d.clearance,
            switch_stride: d.switch_stride,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObstacleEntry {
    pub cx: f64,
    pub cy: f64,
    pub r: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlannerKind {
    Stein,
    Lawnmower,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EpisodeSection {
    pub duration: f64,
    pub replan_period: f64,
    pub dt: f64,
    pub seed: u64,
    pub planner: PlannerKind,
}

impl Default for EpisodeSection {
    fn default() -> Self {
        Self {
            duration: 120.0,
            replan_period: 0.5,
            dt: DEFAULT_DT,
            seed: 0,
            planner: PlannerKind::Stein,
        }
    }
}

/// Fully validated episode settings.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeConfig {
    pub name: String,
    pub grid: EnvGrid,
    pub sensor: SensorModel,
    pub initial_clarity: ClarityField,
    pub obstacles: ObstacleSet,
    pub model: RobotModel,
    pub x0: RobotState,
    /// Clarity-deficit cost. The obstacle penalty is attached at run time
    /// when the gatekeeper is off.
    pub cost: CostConfig,
    pub obstacle_weight: f64,
    pub svgd: SvgdConfig,
    pub svgd_seed: u64,
    pub gatekeeper: bool,
    pub backup: BackupConfig,
    pub duration: f64,
    pub replan_period: f64,
    pub dt: f64,
    pub seed: u64,
    pub planner: PlannerKind,
}

impl EpisodeConfig {
    pub fn steps(&self) -> usize {
        (self.duration / self.dt).round() as usize
    }

    pub fn replan_steps(&self) -> usize {
        (self.replan_period / self.dt).round() as usize
    }
}

fn invalid(path: &str, e: DomainError) -> ConfigError {
    ConfigError::invalid(path, e.detail)
}

/// `true` when `x / unit` is a whole number up to rounding noise.
fn is_multiple(x: f64, unit: f64) -> bool {
    let r = x / unit;
    (r - r.round()).abs() < 1e-9 && r.round() >= 1.0
}

fn paint(grid: &GridSection, base: f64, regions: &[Region]) -> Vec<f64> {
    let mut out = vec![base; grid.nx * grid.ny];
    for iy in 0..grid.ny {
        for ix in 0..grid.nx {
            let c = cell_center(grid, ix, iy);
            for r in regions {
                if r.contains(&c) {
                    out[iy * grid.nx + ix] = r.value;
                }
            }
        }
    }
    out
}

fn cell_center(grid: &GridSection, ix: usize, iy: usize) -> Vec2 {
    Vec2::new(
        grid.origin[0] + (ix as f64 + 0.5) * grid.cell_size,
        grid.origin[1] + (iy as f64 + 0.5) * grid.cell_size,
    )
}

impl ConfigFile {
    /// Minimal file over an `nx × ny` grid of unit cells, all defaults.
    pub fn with_grid(nx: usize, ny: usize, cell_size: f64) -> Self {
        Self {
            name: String::new(),
            description: String::new(),
            padding: default_padding(),
            initial_clarity: InitialClarity::default(),
            grid: GridSection {
                nx,
                ny,
                cell_size,
                origin: [0.0, 0.0],
            },
            sensor: SensorSection::default(),
            robot: RobotSection::default(),
            cost: CostSection::default(),
            svgd: SvgdSection::default(),
            gatekeeper: GatekeeperSection::default(),
            workspace: None,
            episode: EpisodeSection::default(),
            decay_regions: Vec::new(),
            target_regions: Vec::new(),
            obstacles: Vec::new(),
        }
    }

    pub fn from_toml_str(s: &str) -> Result<Self, ConfigError> {
        toml::from_str(s).map_err(|e| classify(e.message()))
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serialises to TOML")
    }

    /// Grid extent as a workspace rectangle.
    pub fn grid_workspace(&self) -> Workspace {
        let g = &self.grid;
        Workspace {
            xmin: g.origin[0],
            xmax: g.origin[0] + g.nx as f64 * g.cell_size,
            ymin: g.origin[1],
            ymax: g.origin[1] + g.ny as f64 * g.cell_size,
        }
    }

    /// Copy with every optional field filled in.
    pub fn materialized(&self) -> Self {
        let mut c = self.clone();
        c.workspace = Some(self.workspace.unwrap_or_else(|| self.grid_workspace()));
        c
    }

    pub fn backup_config(&self) -> BackupConfig {
        let g = &self.gatekeeper;
        BackupConfig {
            horizon: g.backup_horizon,
            stop_speed: g.stop_speed,
            clearance: g.clearance,
            switch_stride: g.switch_stride,
        }
    }

    pub fn obstacle_set(&self) -> Result<ObstacleSet, ConfigError> {
        let workspace = self.workspace.unwrap_or_else(|| self.grid_workspace());
        let discs = self
            .obstacles
            .iter()
            .map(|o| Disc {
                center: Vec2::new(o.cx, o.cy),
                radius: o.r,
            })
            .collect();
        ObstacleSet::new(discs, self.padding, workspace).map_err(|e| invalid("obstacles", e))
    }

    pub fn resolve(&self) -> Result<EpisodeConfig, ConfigError> {
        let g = &self.grid;
        let decay = paint(g, 0.0, &self.decay_regions);
        let target = paint(g, 0.0, &self.target_regions);
        let grid = EnvGrid::new(g.nx, g.ny, g.cell_size, Vec2::new(g.origin[0], g.origin[1]), decay, target)
            .map_err(|e| invalid("grid", e))?;

        let s = &self.sensor;
        let footprint = Mat2::new(s.sigma_c[0][0], s.sigma_c[0][1], s.sigma_c[1][0], s.sigma_c[1][1]);
        let sensor = SensorModel::new(s.kappa, footprint, s.meas_noise).map_err(|e| invalid("sensor", e))?;

        if let Some((cell, t, q_inf)) = grid.unattainable_target(&sensor) {
            let c = grid.center(cell);
            let region = self
                .target_regions
                .iter()
                .enumerate()
                .rev()
                .find(|(_, r)| r.contains(&c))
                .map(|(i, _)| i)
                .expect("a non-zero target comes from some region");
            return Err(ConfigError::invalid(
                format!("target_regions[{region}]"),
                format!(
                    "target {t} at cell ({:.2}, {:.2}) is not below the attainable clarity {q_inf:.6} \
                     (decay {})",
                    c.x,
                    c.y,
                    grid.decay()[cell]
                ),
            ));
        }

        let initial = match &self.initial_clarity {
            InitialClarity::Uniform(q) => vec![*q; grid.len()],
            InitialClarity::Regions(r) => paint(g, DEFAULT_INITIAL_CLARITY, r),
        };
        let initial_clarity = ClarityField::new(initial).map_err(|e| invalid("initial_clarity", e))?;

        let r = &self.robot;
        let model = RobotModel::new(r.kind, r.u_max, r.v_max).map_err(|e| invalid("robot", e))?;
        let x0 = RobotState::new(Vec2::new(r.x0[0], r.x0[1]), Vec2::new(r.v0[0], r.v0[1]));
        if r.kind == RobotKind::DoubleIntegrator && (r.v0[0].abs() > r.v_max || r.v0[1].abs() > r.v_max) {
            return Err(ConfigError::invalid("robot.v0", "initial velocity exceeds v_max"));
        }

        let e = &self.episode;
        if !(e.dt > 0.0 && e.dt.is_finite()) {
            return Err(ConfigError::invalid("episode.dt", format!("{} must be positive", e.dt)));
        }
        if !is_multiple(e.replan_period, e.dt) {
            return Err(ConfigError::invalid(
                "episode.replan_period",
                format!("{} must be a positive multiple of dt = {}", e.replan_period, e.dt),
            ));
        }
        if !(e.duration >= e.replan_period) || !is_multiple(e.duration, e.dt) {
            return Err(ConfigError::invalid(
                "episode.duration",
                format!("{} must be a multiple of dt and at least the replan period", e.duration),
            ));
        }

        let c = &self.cost;
        let cost = CostConfig {
            beta: c.beta,
            horizon: c.horizon,
            alpha: self.svgd.alpha,
            dt: e.dt,
            penalty: None,
        };
        cost.validate().map_err(|e| invalid("cost", e))?;
        if !is_multiple(c.horizon, e.dt) {
            return Err(ConfigError::invalid("cost.horizon", "horizon must be a multiple of dt"));
        }
        if !(c.obstacle_weight >= 0.0 && c.obstacle_weight.is_finite()) {
            return Err(ConfigError::invalid("cost.obstacle_weight", "must be non-negative"));
        }

        let sv = &self.svgd;
        let svgd = SvgdConfig {
            particles: sv.particles,
            iters: sv.iters,
            step: sv.step,
            init_noise: sv.init_noise,
            bandwidth: sv.bandwidth,
        };
        svgd.validate().map_err(|e| invalid("svgd", e))?;

        let gk = &self.gatekeeper;
        let backup = self.backup_config();
        backup.validate(&model).map_err(|e| invalid("gatekeeper", e))?;
        if !cost.horizon_steps().is_multiple_of(backup.switch_stride) {
            return Err(ConfigError::invalid(
                "gatekeeper.switch_stride",
                format!("{} horizon steps are not divisible by {}", cost.horizon_steps(), backup.switch_stride),
            ));
        }
        if !is_multiple(backup.horizon, e.dt) {
            return Err(ConfigError::invalid("gatekeeper.backup_horizon", "must be a multiple of dt"));
        }

        // Largest distance travelled between samples is the per-axis speed
        // bound times √2 times dt; half of it must fit inside the padding.
        let min_padding = model.speed_bound() * std::f64::consts::SQRT_2 * e.dt / 2.0;
        if self.padding < min_padding {
            return Err(ConfigError::invalid(
                "padding",
                format!("{} is below the inter-sample margin {min_padding:.6}", self.padding),
            ));
        }
        let obstacles = self.obstacle_set()?;

        if gk.enabled && !obstacles.in_backup_set(&backup, &x0) {
            return Err(ConfigError::invalid(
                "robot.x0",
                "the initial state must be at rest and clear of obstacles when the gatekeeper is enabled",
            ));
        }

        Ok(EpisodeConfig {
            name: self.name.clone(),
            grid,
            sensor,
            initial_clarity,
            obstacles,
            model,
            x0,
            cost,
            obstacle_weight: c.obstacle_weight,
            svgd,
            svgd_seed: sv.seed,
            gatekeeper: gk.enabled,
            backup,
            duration: e.duration,
            replan_period: e.replan_period,
            dt: e.dt,
            seed: e.seed,
            planner: e.planner,
        })
    }
}

fn classify(message: &str) -> ConfigError {
    if let Some(rest) = message.split("unknown field `").nth(1) {
        let key = rest.split('`').next().unwrap_or_default().to_string();
        return ConfigError::UnknownKey {
            key,
            message: message.trim().to_string(),
        };
    }
    ConfigError::Parse(message.trim().to_string())
}

/// Parses and validates a TOML configuration file.
pub fn parse_config(path: &Path) -> Result<EpisodeConfig, ConfigError> {
    read_config(path)?.resolve()
}

/// Reads a TOML configuration file without resolving it.
pub fn read_config(path: &Path) -> Result<ConfigFile, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    ConfigFile::from_toml_str(&text)
}

pub fn parse_str(s: &str) -> Result<EpisodeConfig, ConfigError> {
    ConfigFile::from_toml_str(s)?.resolve()
}
