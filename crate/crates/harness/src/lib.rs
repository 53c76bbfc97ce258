//! Experiment orchestration for dynamic-image augmentation: config loading,
//! staged pipelines with a hash-keyed cache, reports and the CLI.

pub mod cache;
pub mod cli;
pub mod config;
pub mod data;
pub mod experiments;
pub mod report;
