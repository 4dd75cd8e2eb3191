//! Experiment configuration: named presets, TOML files, environment and
//! command-line overrides, layered in that order.

use std::path::{Path, PathBuf};

use mgtraj_core::data::{SyntheticKind, FUTURE_LEN, HISTORY_LEN, TARGET_FPS};
use mgtraj_core::goal::{GoalPredictorConfig, GoalTrainConfig};
use mgtraj_core::granularity::GranularityList;
use mgtraj_core::rrn::RrnConfig;
use mgtraj_core::train::TrainConfig;
use serde::{Deserialize, Serialize};
use toml::{Table, Value};

use crate::error::{AppError, AppResult};

/// Prefix of environment variables that override configuration keys.
/// `MGTRAJ__TRAIN__EPOCHS=3` sets `train.epochs`.
pub const ENV_PREFIX: &str = "MGTRAJ__";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetFormat {
    Synthetic,
    EthUcy,
    Sdd,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneSource {
    pub id: String,
    pub path: PathBuf,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticConfig {
    pub kinds: Vec<SyntheticKind>,
    pub train_count: usize,
    pub test_count: usize,
    /// Training windows use this seed; test windows use `seed + TEST_SEED_OFFSET`.
    pub seed: u64,
}

pub const TEST_SEED_OFFSET: u64 = 1_000_003;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    pub format: DatasetFormat,
    pub history_len: usize,
    pub future_len: usize,
    pub stride: usize,
    pub native_fps: f64,
    pub target_fps: f64,
    /// Column order of ETH/UCY files, e.g. `"frame agent x y"`.
    pub columns: String,
    /// SDD only: keep rows labelled `Pedestrian`.
    pub pedestrians_only: bool,
    pub scenes: Vec<SceneSource>,
    pub train_scenes: Vec<String>,
    pub test_scenes: Vec<String>,
    pub synthetic: SyntheticConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GoalBlock {
    pub model: GoalPredictorConfig,
    pub pretrain: GoalTrainConfig,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalConfig {
    pub split: Split,
    /// Window indices of the evaluated split drawn by `plot`.
    pub plot_samples: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Model initialization seed.
    pub seed: u64,
    pub output_dir: PathBuf,
    /// Pretrained goal predictor used by `train`; pretrained in the run
    /// directory when absent.
    pub goal_checkpoint: Option<PathBuf>,
    /// Checkpoint interval in optimizer steps; 0 keeps only the final one.
    pub checkpoint_every: usize,
    pub dataset: DatasetConfig,
    pub goal: GoalBlock,
    pub rrn: RrnConfig,
    pub train: TrainConfig,
    pub eval: EvalConfig,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Preset {
    /// Synthetic data and a small model; trains in minutes on one core.
    Desk,
    /// Full-size model and schedule for real datasets.
    Paper,
}

impl Preset {
    pub fn parse(name: &str) -> AppResult<Self> {
        match name {
            "desk" => Ok(Self::Desk),
            "paper" => Ok(Self::Paper),
            other => Err(AppError::Config(format!("unknown preset `{other}` (expected desk or paper)"))),
        }
    }

    pub fn config(self) -> ExperimentConfig {
        match self {
            Self::Desk => desk(),
            Self::Paper => paper(),
        }
    }
}

fn base_dataset(format: DatasetFormat) -> DatasetConfig {
    DatasetConfig {
        format,
        history_len: HISTORY_LEN,
        future_len: FUTURE_LEN,
        stride: 1,
        native_fps: TARGET_FPS,
        target_fps: TARGET_FPS,
        columns: "frame agent x y".into(),
        pedestrians_only: true,
        scenes: Vec::new(),
        train_scenes: Vec::new(),
        test_scenes: Vec::new(),
        synthetic: SyntheticConfig {
            kinds: SyntheticKind::ALL.to_vec(),
            train_count: 32,
            test_count: 32,
            seed: 0,
        },
    }
}

fn desk() -> ExperimentConfig {
    let (embed_dim, heads, ff_dim) = (32, 4, 64);
    ExperimentConfig {
        seed: 0,
        output_dir: PathBuf::from("runs/desk"),
        goal_checkpoint: None,
        checkpoint_every: 500,
        dataset: base_dataset(DatasetFormat::Synthetic),
        goal: GoalBlock {
            model: GoalPredictorConfig {
                embed_dim,
                heads,
                ff_dim,
                ..GoalPredictorConfig::default()
            },
            pretrain: GoalTrainConfig {
                steps: 2000,
                batch_size: 32,
                ..GoalTrainConfig::default()
            },
        },
        rrn: RrnConfig {
            embed_dim,
            heads,
            ff_dim,
            ..RrnConfig::default()
        },
        train: TrainConfig {
            batch_size: 32,
            epochs: 2000,
            ..TrainConfig::default()
        },
        eval: EvalConfig {
            split: Split::Train,
            plot_samples: vec![0, 1, 2],
        },
    }
}

fn paper() -> ExperimentConfig {
    ExperimentConfig {
        seed: 0,
        output_dir: PathBuf::from("runs/paper"),
        goal_checkpoint: None,
        checkpoint_every: 1000,
        dataset: DatasetConfig {
            native_fps: 25.0,
            ..base_dataset(DatasetFormat::EthUcy)
        },
        goal: GoalBlock {
            model: GoalPredictorConfig::default(),
            pretrain: GoalTrainConfig::default(),
        },
        rrn: RrnConfig::default(),
        train: TrainConfig::default(),
        eval: EvalConfig {
            split: Split::Test,
            plot_samples: vec![0, 1, 2],
        },
    }
}

/// Command-line overrides, applied last.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub output_dir: Option<PathBuf>,
    /// `dotted.key=value` assignments; `value` is a TOML literal or a bare string.
    pub set: Vec<String>,
}

impl ExperimentConfig {
    /// Resolves preset < file < environment < command line.
    pub fn load(
        preset: Preset,
        file: Option<&Path>,
        env: impl IntoIterator<Item = (String, String)>,
        overrides: &Overrides,
    ) -> AppResult<Self> {
        let mut layered = Value::try_from(preset.config()).map_err(|e| AppError::Runtime(e.to_string()))?;
        if let Some(path) = file {
            let text = std::fs::read_to_string(path).map_err(|e| AppError::io(path, e))?;
            let table: Table = toml::from_str(&text)
                .map_err(|e| AppError::Config(format!("{}: {}", path.display(), e.message())))?;
            merge(&mut layered, Value::Table(table));
        }
        let mut env: Vec<_> = env.into_iter().filter(|(k, _)| k.starts_with(ENV_PREFIX)).collect();
        env.sort();
        for (key, raw) in env {
            let dotted = key[ENV_PREFIX.len()..].to_lowercase().replace("__", ".");
            assign(&mut layered, &dotted, &raw)?;
        }
        for item in &overrides.set {
            let (key, raw) = item
                .split_once('=')
                .ok_or_else(|| AppError::Config(format!("override `{item}` is not of the form key=value")))?;
            assign(&mut layered, key.trim(), raw.trim())?;
        }
        let mut cfg: Self = layered
            .try_into()
            .map_err(|e: toml::de::Error| AppError::Config(format!("invalid configuration: {}", e.message())))?;
        if let Some(seed) = overrides.seed {
            cfg.set_seed(seed);
        }
        if let Some(out) = &overrides.output_dir {
            cfg.output_dir = out.clone();
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Parses a complete or partial TOML document on top of `preset`.
    pub fn from_toml_str(preset: Preset, text: &str) -> AppResult<Self> {
        let mut layered = Value::try_from(preset.config()).map_err(|e| AppError::Runtime(e.to_string()))?;
        let table: Table = toml::from_str(text).map_err(|e| AppError::Config(e.message().to_string()))?;
        merge(&mut layered, Value::Table(table));
        let cfg: Self = layered
            .try_into()
            .map_err(|e: toml::de::Error| AppError::Config(format!("invalid configuration: {}", e.message())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> AppResult<String> {
        toml::to_string_pretty(self).map_err(|e| AppError::Runtime(format!("cannot serialize configuration: {e}")))
    }

    /// One seed for model initialization, pretraining order and training order.
    pub fn set_seed(&mut self, seed: u64) {
        self.seed = seed;
        self.goal.pretrain.seed = seed;
        self.train.seed = seed;
    }

    pub fn horizon(&self) -> usize {
        self.dataset.history_len + self.dataset.future_len
    }

    pub fn validate(&self) -> AppResult<()> {
        let d = &self.dataset;
        if d.history_len < 2 || d.future_len == 0 || d.stride == 0 {
            return Err(AppError::Config(
                "dataset.history_len must be >= 2, dataset.future_len and dataset.stride >= 1".into(),
            ));
        }
        if !(d.native_fps > 0.0 && d.target_fps > 0.0) {
            return Err(AppError::Config("dataset.native_fps and dataset.target_fps must be positive".into()));
        }
        match d.format {
            DatasetFormat::Synthetic => {
                if d.synthetic.kinds.is_empty() || d.synthetic.train_count == 0 || d.synthetic.test_count == 0 {
                    return Err(AppError::Config(
                        "dataset.synthetic needs at least one kind and nonzero train_count and test_count".into(),
                    ));
                }
            }
            DatasetFormat::EthUcy | DatasetFormat::Sdd => {
                for id in d.train_scenes.iter().chain(&d.test_scenes) {
                    if !d.scenes.iter().any(|s| &s.id == id) {
                        return Err(AppError::Config(format!("dataset split names scene `{id}` missing from dataset.scenes")));
                    }
                }
            }
        }
        if self.goal.model.history_len != d.history_len || self.rrn.history_len != d.history_len {
            return Err(AppError::Config(format!(
                "goal.model.history_len ({}) and rrn.history_len ({}) must equal dataset.history_len ({})",
                self.goal.model.history_len, self.rrn.history_len, d.history_len
            )));
        }
        if self.rrn.horizon != self.horizon() {
            return Err(AppError::Config(format!(
                "rrn.horizon ({}) must equal dataset.history_len + dataset.future_len ({})",
                self.rrn.horizon,
                self.horizon()
            )));
        }
        if self.goal.pretrain.steps == 0 || self.goal.pretrain.batch_size == 0 {
            return Err(AppError::Config("goal.pretrain.steps and goal.pretrain.batch_size must be >= 1".into()));
        }
        self.rrn.validate()?;
        self.train.validate()?;
        Ok(())
    }

    /// Granularity list shorthand used in reports, e.g. `10-4-2-1`.
    pub fn gl_label(gl: &GranularityList) -> String {
        gl.levels().iter().map(|l| l.to_string()).collect::<Vec<_>>().join("-")
    }
}

fn merge(base: &mut Value, over: Value) {
    match (base, over) {
        (Value::Table(b), Value::Table(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(existing) if existing.is_table() && v.is_table() => merge(existing, v),
                    _ => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (b, o) => *b = o,
    }
}

fn parse_literal(raw: &str) -> Value {
    toml::from_str::<Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| Value::String(raw.to_string()))
}

/// Sets `dotted` to the literal `raw`; `none` removes an optional key.
fn assign(root: &mut Value, dotted: &str, raw: &str) -> AppResult<()> {
    let parts: Vec<&str> = dotted.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(AppError::Config(format!("malformed configuration key `{dotted}`")));
    }
    let (last, parents) = parts.split_last().expect("nonempty split");
    let mut node = root;
    for p in parents {
        node = node
            .as_table_mut()
            .and_then(|t| t.get_mut(*p))
            .ok_or_else(|| AppError::Config(format!("unknown configuration key `{dotted}`")))?;
    }
    let table = node
        .as_table_mut()
        .ok_or_else(|| AppError::Config(format!("configuration key `{dotted}` is not inside a table")))?;
    if raw == "none" {
        table.remove(*last);
    } else {
        table.insert(last.to_string(), parse_literal(raw));
    }
    Ok(())
}
