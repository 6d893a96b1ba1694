//! Clarity-aware informative planning.
//!
//! The crate is organised bottom-up:
//!
//! * [`clarity`] – environment grid, Gaussian sensing footprint and the
//!   per-cell clarity dynamics that every other module reads.
//! * [`dynamics`] – single/double integrator robot models and rollouts.
//! * [`cost`] – the softplus clarity-deficit cost and its reverse-mode
//!   gradient with respect to a control sequence.
//! * [`svgd`] – Stein variational optimisation of a set of control particles.
//! * [`gatekeeper`] – nominal-plus-backup candidate construction, safety
//!   verification and commitment.
//! * [`sim`] – the receding-horizon closed loop, environment catalog,
//!   lawnmower baseline and randomized safety trials.
//! * [`config`] – declarative TOML configuration and validation.
//! * [`gradcheck`] – adjoint gradient versus finite differences on random
//!   instances.
//!
//! Data-parallel inner loops (particle gradients, candidate checks and
//! trial episodes) run on rayon when the `parallel` feature is enabled and
//! fall back to plain iterators otherwise. Results are gathered in index
//! order either way, so outputs do not depend on the thread count.

// `!(x > 0.0)` style checks are used on purpose so NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod clarity;
pub mod config;
pub mod cost;
pub mod dynamics;
pub mod error;
pub mod gatekeeper;
pub mod gradcheck;
pub mod par;
pub mod sim;
pub mod svgd;

pub use error::{ConfigError, DomainError};

/// Two-dimensional vector used for positions, velocities and controls.
pub type Vec2 = nalgebra::Vector2<f64>;
/// 2×2 matrix used for the sensing footprint covariance.
pub type Mat2 = nalgebra::Matrix2<f64>;
