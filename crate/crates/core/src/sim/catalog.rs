//! The sixteen benchmark environments as declarative region lists.
//!
//! All use a 10 × 10 grid of 1 m cells over a 10 m × 10 m workspace and
//! start the robot at rest at (5, 1). "High" target cells get
//! [`TARGET_HIGH`], which sits below the attainable clarity even under
//! [`DECAY_HIGH`].

use crate::config::{ConfigFile, EpisodeConfig, ObstacleEntry, Region};
use crate::error::{ConfigError, DomainError};

pub const CATALOG_SIZE: u32 = 16;
pub const TARGET_HIGH: f64 = 0.8;
pub const DECAY_HIGH: f64 = 0.05;
pub const DECAY_LOW: f64 = 0.01;

const W: f64 = 10.0;
const H: f64 = 5.0;

fn r(x0: f64, y0: f64, x1: f64, y1: f64, v: f64) -> Region {
    Region::new(x0, y0, x1, y1, v)
}

fn disc(cx: f64, cy: f64, r: f64) -> ObstacleEntry {
    ObstacleEntry { cx, cy, r }
}

pub fn describe(id: u32) -> Option<&'static str> {
    Some(match id {
        1 => "static, high target on the left half",
        2 => "static, high target on the right half",
        3 => "static, high target on the bottom half",
        4 => "static, high target in the bottom-left quadrant",
        5 => "static, high target in the top-left quadrant",
        6 => "uniform high target, high decay on the bottom half",
        7 => "uniform high target, high decay on the top half",
        8 => "high target top-right and bottom-left, decay only top-right",
        9 => "high target top half and bottom-left, high decay top-right, low decay top-left",
        10 => "patchy targets over bands of variable decay",
        11 => "checkerboard targets with variable decay patches",
        12 => "ring of targets around a decaying centre",
        13 => "environment 1 with obstacles beside the target half",
        14 => "environment 8 with obstacles near both target quadrants",
        15 => "environment 6 with obstacles in the decaying half",
        16 => "environment 9 with obstacles near the target regions",
        _ => return None,
    })
}

/// The configuration file for catalog environment `id`.
pub fn catalog_file(id: u32) -> Result<ConfigFile, DomainError> {
    let description = describe(id).ok_or_else(|| {
        DomainError::new("catalog", format!("environment {id} is outside 1..={CATALOG_SIZE}"))
    })?;
    let base = match id {
        13 => 1,
        14 => 8,
        15 => 6,
        16 => 9,
        other => other,
    };
    let t = TARGET_HIGH;
    let (targets, decay) = match base {
        1 => (vec![r(0.0, 0.0, H, W, t)], vec![]),
        2 => (vec![r(H, 0.0, W, W, t)], vec![]),
        3 => (vec![r(0.0, 0.0, W, H, t)], vec![]),
        4 => (vec![r(0.0, 0.0, H, H, t)], vec![]),
        5 => (vec![r(0.0, H, H, W, t)], vec![]),
        6 => (vec![r(0.0, 0.0, W, W, t)], vec![r(0.0, 0.0, W, H, DECAY_HIGH)]),
        7 => (vec![r(0.0, 0.0, W, W, t)], vec![r(0.0, H, W, W, DECAY_HIGH)]),
        8 => (
            vec![r(H, H, W, W, t), r(0.0, 0.0, H, H, t)],
            vec![r(H, H, W, W, DECAY_HIGH)],
        ),
        9 => (
            vec![r(0.0, H, W, W, t), r(0.0, 0.0, H, H, t)],
            vec![r(H, H, W, W, DECAY_HIGH), r(0.0, H, H, W, DECAY_LOW)],
        ),
        10 => (
            vec![
                r(0.0, 6.0, 3.0, 10.0, t),
                r(6.0, 7.0, 10.0, 10.0, 0.6),
                r(4.0, 0.0, 7.0, 4.0, t),
                r(8.0, 2.0, 10.0, 5.0, 0.5),
            ],
            vec![
                r(0.0, 0.0, 10.0, 3.0, DECAY_LOW),
                r(0.0, 7.0, 10.0, 10.0, DECAY_HIGH),
                r(4.0, 4.0, 6.0, 6.0, DECAY_HIGH),
            ],
        ),
        11 => (
            vec![
                r(0.0, 0.0, 2.0, 2.0, t),
                r(4.0, 0.0, 6.0, 2.0, 0.6),
                r(8.0, 0.0, 10.0, 2.0, t),
                r(2.0, 4.0, 4.0, 6.0, t),
                r(6.0, 4.0, 8.0, 6.0, t),
                r(0.0, 8.0, 2.0, 10.0, 0.6),
                r(4.0, 8.0, 6.0, 10.0, t),
                r(8.0, 8.0, 10.0, 10.0, t),
            ],
            vec![
                r(0.0, 0.0, 5.0, 5.0, DECAY_LOW),
                r(5.0, 5.0, 10.0, 10.0, DECAY_HIGH),
                r(6.0, 0.0, 10.0, 2.0, DECAY_HIGH),
            ],
        ),
        12 => (
            vec![
                r(1.0, 1.0, 9.0, 3.0, t),
                r(1.0, 7.0, 9.0, 9.0, t),
                r(1.0, 3.0, 3.0, 7.0, 0.6),
                r(7.0, 3.0, 9.0, 7.0, 0.6),
                r(4.0, 4.0, 6.0, 6.0, t),
            ],
            vec![
                r(3.0, 3.0, 7.0, 7.0, DECAY_HIGH),
                r(0.0, 6.0, 10.0, 10.0, DECAY_LOW),
            ],
        ),
        _ => unreachable!("base ids are 1..=12"),
    };
    let obstacles = match id {
        13 => vec![disc(2.5, 5.0, 1.0), disc(5.5, 7.5, 0.8)],
        14 => vec![disc(5.0, 5.0, 1.0), disc(7.5, 7.0, 0.6), disc(2.0, 3.0, 0.5)],
        15 => vec![disc(3.0, 3.0, 1.0), disc(7.0, 2.5, 0.8)],
        16 => vec![disc(2.5, 7.5, 0.8), disc(7.5, 5.5, 1.0), disc(3.0, 3.0, 0.6)],
        _ => vec![],
    };
    let mut file = ConfigFile::with_grid(10, 10, 1.0);
    file.name = format!("env{id}");
    file.description = description.to_string();
    file.target_regions = targets;
    file.decay_regions = decay;
    file.obstacles = obstacles;
    Ok(file)
}

/// Resolved configuration for catalog environment `id`.
pub fn env_catalog(id: u32) -> Result<EpisodeConfig, ConfigError> {
    catalog_file(id)
        .map_err(|e| ConfigError::invalid("env", e.detail))?
        .resolve()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clarity::max_attainable_clarity;
    use crate::Vec2;

    #[test]
    fn every_entry_resolves() {
        for id in 1..=CATALOG_SIZE {
            let cfg = env_catalog(id).unwrap_or_else(|e| panic!("env {id}: {e}"));
            assert_eq!(cfg.grid.len(), 100);
            assert_eq!(cfg.obstacles.discs().is_empty(), id < 13, "env {id}");
        }
        assert!(catalog_file(0).is_err());
        assert!(catalog_file(17).is_err());
    }

    #[test]
    fn env1_left_half_static() {
        let cfg = env_catalog(1).unwrap();
        for (p, c) in cfg.grid.centers().iter().enumerate() {
            let want = if c.x < 5.0 { TARGET_HIGH } else { 0.0 };
            assert_eq!(cfg.grid.target()[p], want);
            assert_eq!(cfg.grid.decay()[p], 0.0);
        }
    }

    #[test]
    fn env8_quadrants() {
        let cfg = env_catalog(8).unwrap();
        for (p, c) in cfg.grid.centers().iter().enumerate() {
            let tr = c.x > 5.0 && c.y > 5.0;
            let bl = c.x < 5.0 && c.y < 5.0;
            assert_eq!(cfg.grid.target()[p], if tr || bl { TARGET_HIGH } else { 0.0 });
            assert_eq!(cfg.grid.decay()[p], if tr { DECAY_HIGH } else { 0.0 });
        }
    }

    #[test]
    fn obstacle_variants_share_fields_with_their_base() {
        for (id, base) in [(13, 1), (14, 8), (15, 6), (16, 9)] {
            let a = env_catalog(id).unwrap();
            let b = env_catalog(base).unwrap();
            assert_eq!(a.grid, b.grid);
            assert!(!a.obstacles.discs().is_empty());
        }
    }

    #[test]
    fn targets_sit_below_the_high_decay_ceiling() {
        let q_inf = max_attainable_clarity(1.0, 0.25, DECAY_HIGH).unwrap();
        assert!(TARGET_HIGH < q_inf);
    }

    #[test]
    fn start_is_clear_everywhere() {
        for id in 1..=CATALOG_SIZE {
            let cfg = env_catalog(id).unwrap();
            assert!(cfg.obstacles.in_backup_set(&cfg.backup, &cfg.x0));
            assert_eq!(cfg.x0.position, Vec2::new(5.0, 1.0));
        }
    }

    #[test]
    fn catalog_round_trips_through_toml() {
        for id in 1..=CATALOG_SIZE {
            let file = catalog_file(id).unwrap();
            let text = file.to_toml_string();
            let parsed = crate::config::parse_str(&text).unwrap();
            assert_eq!(parsed, env_catalog(id).unwrap(), "env {id}");
        }
    }
}
