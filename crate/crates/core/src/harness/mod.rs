//! Experiment orchestration, statistics, plots and the command line.

pub mod cli;
pub mod config;
pub mod experiment;
pub mod plot;
pub mod stats;
