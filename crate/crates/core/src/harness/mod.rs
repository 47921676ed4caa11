//! Evaluation, datasets, configuration and benchmark generation.

pub mod config;
pub mod dataset;
pub mod metrics;
pub mod synth;
pub mod report;
