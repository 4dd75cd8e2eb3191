//! JSON checkpoints of the goal predictor and of full training runs.

use std::path::Path;

use mgtraj_core::data::Unit;
use mgtraj_core::goal::{GoalPredictor, PretrainStage};
use mgtraj_core::metrics::Pipeline;
use mgtraj_core::train::{StepLog, TrainState};
use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::error::{AppError, AppResult};
use crate::io::{read_json, write_json};

pub const FORMAT_VERSION: u32 = 1;

/// Coordinate convention the weights were trained under.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Normalization {
    /// Windows are translated so the last observed position is the origin.
    pub scheme: String,
    pub unit: Unit,
}

impl Normalization {
    pub fn translate_to_last_observed(unit: Unit) -> Self {
        Self {
            scheme: "translate_to_last_observed".into(),
            unit,
        }
    }
}

/// How the goal predictor emits its modes.
pub const GOAL_HEAD: &str = "single_wide_head";

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GoalCheckpoint {
    pub format_version: u32,
    pub stage: PretrainStage,
    pub goal_head: String,
    pub normalization: Normalization,
    pub config: ExperimentConfig,
    pub predictor: GoalPredictor,
    pub stage1_losses: Vec<f64>,
    pub stage2_losses: Vec<f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ModelCheckpoint {
    pub format_version: u32,
    pub normalization: Normalization,
    pub config: ExperimentConfig,
    pub goal: GoalPredictor,
    pub state: TrainState,
    pub epoch: usize,
    pub history: Vec<StepLog>,
}

impl ModelCheckpoint {
    pub fn pipeline(&self) -> Pipeline {
        Pipeline {
            goal: self.goal.clone(),
            rrn: self.state.model.clone(),
            unit: self.normalization.unit,
        }
    }
}

fn check_version(path: &Path, version: u32) -> AppResult<()> {
    if version != FORMAT_VERSION {
        return Err(AppError::Config(format!(
            "{}: checkpoint format {version} is not supported (expected {FORMAT_VERSION})",
            path.display()
        )));
    }
    Ok(())
}

pub fn save_goal(path: &Path, ckpt: &GoalCheckpoint) -> AppResult<()> {
    write_json(path, ckpt)
}

pub fn load_goal(path: &Path) -> AppResult<GoalCheckpoint> {
    let ckpt: GoalCheckpoint = read_json(path)?;
    check_version(path, ckpt.format_version)?;
    Ok(ckpt)
}

pub fn save_model(path: &Path, ckpt: &ModelCheckpoint) -> AppResult<()> {
    write_json(path, ckpt)
}

pub fn load_model(path: &Path) -> AppResult<ModelCheckpoint> {
    let ckpt: ModelCheckpoint = read_json(path)?;
    check_version(path, ckpt.format_version)?;
    Ok(ckpt)
}
