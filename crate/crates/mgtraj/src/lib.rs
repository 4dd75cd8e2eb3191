//! Experiment runner around `mgtraj-core`: dataset files, layered TOML
//! configuration, JSON checkpoints, metric logs, ablation sweeps and SVG plots.

pub mod checkpoint;
pub mod commands;
pub mod config;
pub mod error;
pub mod io;
pub mod plot;
pub mod report;

pub use error::{AppError, AppResult};

#[cfg(feature = "fast-alloc")]
#[global_allocator]
static GLOBAL: mimalloc::MiMalloc = mimalloc::MiMalloc;
