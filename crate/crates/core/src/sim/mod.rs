//! Closed-loop simulation, environment catalog, lawnmower baseline and
//! randomized safety trials.

pub mod catalog;
pub mod episode;
pub mod lawnmower;
pub mod trials;

pub use catalog::{catalog_file, env_catalog, CATALOG_SIZE};
pub use episode::{run_episode, run_episode_with, violation_fraction, EpisodeOptions, EpisodeTrace, TraceRow};
pub use trials::{run_trials, Randomize, TrialSpec, TrialSummary};
