//! Experiment driver: config files, training runs, comparisons, gap
//! certification, checkpoints and plots.

pub mod analysis;
pub mod config;
pub mod plot;
pub mod run;

pub use config::ExperimentConfig;
