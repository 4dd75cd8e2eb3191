//! Experiment lifecycle: goal pretraining, training, evaluation, ablation
//! sweeps and plots. Every command writes into `config.output_dir`.

use std::path::{Path, PathBuf};
use std::process::Command;

use mgtraj_core::data::Unit;
use mgtraj_core::goal::{GoalPredictor, LossCurve, PretrainStage};
use mgtraj_core::granularity::GranularityList;
use mgtraj_core::metrics::{evaluate_pipeline, Forecaster, MetricReport};
use mgtraj_core::rrn::{FusionMode, RrnModel};
use mgtraj_core::train::{prepare_samples, train, StepLog, TrainState};
use serde::Serialize;

use crate::checkpoint::{self, GoalCheckpoint, ModelCheckpoint, Normalization, FORMAT_VERSION, GOAL_HEAD};
use crate::config::{ExperimentConfig, Split};
use crate::error::{AppError, AppResult};
use crate::io::{self, append_csv_row, load_splits, write_json, write_text};
use crate::plot::{render_svg, PlotStyle};
use crate::report::{self, join_stages, metric_row, ReportFile, METRIC_CSV_HEADER, REPORT_CSV_HEADER};

pub const CONFIG_FILE: &str = "config.toml";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const METRICS_FILE: &str = "metrics.csv";
pub const GOAL_STAGE1_FILE: &str = "goal_stage1.json";
pub const GOAL_STAGE2_FILE: &str = "goal_stage2.json";
pub const FINAL_CHECKPOINT: &str = "checkpoints/final.json";
pub const REPORT_FILE: &str = "report.json";
pub const REPORTS_CSV: &str = "reports.csv";
pub const ABLATION_CSV: &str = "ablation.csv";

/// `git describe` of the source tree, or the package version outside a checkout.
pub fn version_string() -> String {
    let described = Command::new("git")
        .args(["describe", "--tags", "--always", "--dirty"])
        .current_dir(env!("CARGO_MANIFEST_DIR"))
        .output()
        .ok()
        .filter(|o| o.status.success())
        .and_then(|o| String::from_utf8(o.stdout).ok())
        .map(|s| s.trim().to_string())
        .filter(|s| !s.is_empty());
    match described {
        Some(d) => format!("v{}-g{d}", env!("CARGO_PKG_VERSION")),
        None => format!("v{}", env!("CARGO_PKG_VERSION")),
    }
}

#[derive(Serialize)]
struct Manifest<'a> {
    version: String,
    command: &'a str,
    files: Vec<String>,
}

fn write_run_metadata(dir: &Path, command: &str, cfg: &ExperimentConfig, files: &[&str]) -> AppResult<()> {
    write_text(&dir.join(CONFIG_FILE), &cfg.to_toml_string()?)?;
    let mut listed: Vec<String> = vec![CONFIG_FILE.into()];
    listed.extend(files.iter().map(|f| f.to_string()));
    write_json(
        &dir.join(MANIFEST_FILE),
        &Manifest {
            version: version_string(),
            command,
            files: listed,
        },
    )
}

fn training_windows(cfg: &ExperimentConfig) -> AppResult<(io::Splits, Unit)> {
    let splits = load_splits(&cfg.dataset)?;
    if splits.train.is_empty() {
        return Err(AppError::Config("the training split contains no windows".into()));
    }
    let unit = splits.unit;
    Ok((splits, unit))
}

pub struct PretrainOutcome {
    pub stage1_path: PathBuf,
    pub stage2_path: PathBuf,
    pub checkpoint: GoalCheckpoint,
}

/// Pretrains the goal predictor in two stages. With `resume` pointing at a
/// stage-one checkpoint, stage one is skipped.
pub fn cmd_pretrain_goal(cfg: &ExperimentConfig, resume: Option<&Path>) -> AppResult<PretrainOutcome> {
    cfg.validate()?;
    let dir = &cfg.output_dir;
    let (splits, unit) = training_windows(cfg)?;
    let normalization = Normalization::translate_to_last_observed(unit);
    let stage1_path = dir.join(GOAL_STAGE1_FILE);
    let stage2_path = dir.join(GOAL_STAGE2_FILE);

    let (mut predictor, stage1) = match resume {
        Some(path) => {
            let ckpt = checkpoint::load_goal(path)?;
            if ckpt.predictor.config != cfg.goal.model {
                return Err(AppError::Config(format!(
                    "{}: goal model configuration differs from goal.model",
                    path.display()
                )));
            }
            if ckpt.stage < PretrainStage::NextFrame {
                return Err(AppError::Config(format!("{}: checkpoint has no stage-one weights", path.display())));
            }
            (ckpt.predictor, LossCurve { losses: ckpt.stage1_losses })
        }
        None => {
            let mut p = GoalPredictor::new(cfg.goal.model.clone(), cfg.seed)?;
            let curve = p.pretrain_stage1(&splits.train, &cfg.goal.pretrain)?;
            (p, curve)
        }
    };
    let snapshot = |p: &GoalPredictor, s2: &[f64]| GoalCheckpoint {
        format_version: FORMAT_VERSION,
        stage: p.stage,
        goal_head: GOAL_HEAD.into(),
        normalization: normalization.clone(),
        config: cfg.clone(),
        predictor: p.clone(),
        stage1_losses: stage1.losses.clone(),
        stage2_losses: s2.to_vec(),
    };
    checkpoint::save_goal(&stage1_path, &snapshot(&predictor, &[]))?;
    write_text(&dir.join("goal_stage1_loss.csv"), &report::loss_curve_csv(&stage1.losses))?;

    let stage2 = if predictor.stage == PretrainStage::Goal {
        Vec::new()
    } else {
        predictor.pretrain_stage2(&splits.train, &cfg.goal.pretrain)?.losses
    };
    predictor.freeze();
    let final_ckpt = snapshot(&predictor, &stage2);
    checkpoint::save_goal(&stage2_path, &final_ckpt)?;
    write_text(&dir.join("goal_stage2_loss.csv"), &report::loss_curve_csv(&stage2))?;
    write_run_metadata(
        dir,
        "pretrain-goal",
        cfg,
        &[GOAL_STAGE1_FILE, GOAL_STAGE2_FILE, "goal_stage1_loss.csv", "goal_stage2_loss.csv"],
    )?;
    Ok(PretrainOutcome {
        stage1_path,
        stage2_path,
        checkpoint: final_ckpt,
    })
}

fn resolve_goal(cfg: &ExperimentConfig) -> AppResult<GoalCheckpoint> {
    match &cfg.goal_checkpoint {
        Some(path) => {
            let ckpt = checkpoint::load_goal(path)?;
            if ckpt.stage != PretrainStage::Goal {
                return Err(AppError::Config(format!(
                    "{}: goal predictor has not finished stage-two pretraining",
                    path.display()
                )));
            }
            if ckpt.predictor.config.history_len != cfg.dataset.history_len {
                return Err(AppError::Config(format!(
                    "{}: goal predictor expects {} history frames",
                    path.display(),
                    ckpt.predictor.config.history_len
                )));
            }
            Ok(ckpt)
        }
        None => {
            let mut inline = cfg.clone();
            inline.output_dir = cfg.output_dir.join("goal");
            Ok(cmd_pretrain_goal(&inline, None)?.checkpoint)
        }
    }
}

pub struct TrainOutcome {
    pub run_dir: PathBuf,
    pub checkpoint_path: PathBuf,
    pub checkpoint: ModelCheckpoint,
}

/// Trains the RRN stack against the frozen goal predictor. `resume` continues
/// from a checkpoint written by an earlier run of the same configuration.
pub fn cmd_train(cfg: &ExperimentConfig, resume: Option<&Path>) -> AppResult<TrainOutcome> {
    cfg.validate()?;
    let dir = cfg.output_dir.clone();
    let (splits, unit) = training_windows(cfg)?;
    let goal_ckpt = resolve_goal(cfg)?;
    if goal_ckpt.normalization.unit != unit {
        return Err(AppError::Config(format!(
            "goal predictor was trained on {:?} data but the dataset is in {:?}",
            goal_ckpt.normalization.unit, unit
        )));
    }
    let mut goal = goal_ckpt.predictor;
    goal.freeze();
    let samples = prepare_samples(&goal, &splits.train, cfg.dataset.history_len)?;

    let (mut state, mut history) = match resume {
        Some(path) => {
            let ckpt = checkpoint::load_model(path)?;
            if ckpt.config.rrn != cfg.rrn || ckpt.config.train != cfg.train {
                return Err(AppError::Config(format!(
                    "{}: checkpoint was trained with a different rrn or train configuration",
                    path.display()
                )));
            }
            (ckpt.state, ckpt.history)
        }
        None => (TrainState::new(RrnModel::new(cfg.rrn.clone(), cfg.seed.wrapping_add(1))?), Vec::new()),
    };

    let metrics_path = dir.join(METRICS_FILE);
    let mut csv = String::from(METRIC_CSV_HEADER);
    csv.push('\n');
    for log in &history {
        csv.push_str(&metric_row(log));
        csv.push('\n');
    }
    write_text(&metrics_path, &csv)?;

    let per_epoch = cfg.train.steps_per_epoch(samples.len());
    let normalization = Normalization::translate_to_last_observed(unit);
    let snapshot = |state: &TrainState, history: &[StepLog]| ModelCheckpoint {
        format_version: FORMAT_VERSION,
        normalization: normalization.clone(),
        config: cfg.clone(),
        goal: goal.clone(),
        state: state.clone(),
        epoch: state.step / per_epoch,
        history: history.to_vec(),
    };
    let mut failure = None;
    train(&samples, &cfg.train, &mut state, |log, st| {
        history.push(log.clone());
        if let Err(e) = append_csv_row(&metrics_path, METRIC_CSV_HEADER, &metric_row(log)) {
            failure = Some(e);
            return false;
        }
        if cfg.checkpoint_every > 0 && st.step % cfg.checkpoint_every == 0 {
            let path = dir.join(format!("checkpoints/step_{:06}.json", st.step));
            if let Err(e) = checkpoint::save_model(&path, &snapshot(st, &history)) {
                failure = Some(e);
                return false;
            }
        }
        true
    })?;
    if let Some(e) = failure {
        return Err(e);
    }

    let final_ckpt = snapshot(&state, &history);
    let checkpoint_path = dir.join(FINAL_CHECKPOINT);
    checkpoint::save_model(&checkpoint_path, &final_ckpt)?;
    write_run_metadata(&dir, "train", cfg, &[METRICS_FILE, FINAL_CHECKPOINT])?;
    Ok(TrainOutcome {
        run_dir: dir,
        checkpoint_path,
        checkpoint: final_ckpt,
    })
}

/// Evaluates a checkpoint on the configured split; writes `report.json`,
/// appends to `reports.csv` and echoes the configuration.
pub fn cmd_eval(checkpoint_path: &Path, cfg: &ExperimentConfig) -> AppResult<ReportFile> {
    cfg.validate()?;
    let ckpt = checkpoint::load_model(checkpoint_path)?;
    let splits = load_splits(&cfg.dataset)?;
    let windows = match cfg.eval.split {
        Split::Train => &splits.train,
        Split::Test => &splits.test,
    };
    let report: MetricReport = evaluate_pipeline(&ckpt.pipeline(), windows, splits.unit)?;
    let file = ReportFile::new(
        checkpoint_path.display().to_string(),
        cfg.eval.split,
        splits.unit,
        &report,
        cfg.clone(),
    );
    let dir = &cfg.output_dir;
    write_json(&dir.join(REPORT_FILE), &file)?;
    append_csv_row(&dir.join(REPORTS_CSV), REPORT_CSV_HEADER, &report::report_row(&file))?;
    write_text(&dir.join("eval_config.toml"), &cfg.to_toml_string()?)?;
    Ok(file)
}

/// Plots the configured windows of the evaluation split; indices outside the
/// split are skipped with a warning.
pub fn cmd_plot(checkpoint_path: &Path, cfg: &ExperimentConfig, samples: &[usize]) -> AppResult<Vec<PathBuf>> {
    cfg.validate()?;
    let ckpt = checkpoint::load_model(checkpoint_path)?;
    let splits = load_splits(&cfg.dataset)?;
    let windows = match cfg.eval.split {
        Split::Train => &splits.train,
        Split::Test => &splits.test,
    };
    let mut chosen = Vec::new();
    for &i in samples {
        match windows.get(i) {
            Some(w) => chosen.push((i, w.clone())),
            None => eprintln!("warning: sample {i} is outside the split ({} windows); skipped", windows.len()),
        }
    }
    let picked: Vec<_> = chosen.iter().map(|(_, w)| w.clone()).collect();
    let forecasts = ckpt.pipeline().forecast(&picked)?;
    let style = PlotStyle::default();
    let mut paths = Vec::new();
    for ((i, w), f) in chosen.iter().zip(&forecasts) {
        let path = cfg.output_dir.join(format!("plots/sample_{i:04}.svg"));
        write_text(&path, &render_svg(w, f, &style))?;
        paths.push(path);
    }
    Ok(paths)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Sweep {
    Granularity,
    Fusion,
    Velocity,
    All,
}

impl Sweep {
    pub fn parse(name: &str) -> AppResult<Self> {
        match name {
            "gl" | "granularity" => Ok(Self::Granularity),
            "fusion" => Ok(Self::Fusion),
            "velocity" => Ok(Self::Velocity),
            "all" => Ok(Self::All),
            other => Err(AppError::Config(format!(
                "unknown sweep `{other}` (expected gl, fusion, velocity or all)"
            ))),
        }
    }
}

/// Granularity lists of the granularity sweep, in table order.
pub const GL_SWEEP: [&[usize]; 7] = [&[1], &[10], &[2, 1], &[4, 2, 1], &[1, 1, 1, 1], &[10, 10, 10, 10], &[10, 4, 2, 1]];

pub const LAMBDA_SWEEP: [f64; 4] = [0.0, 1.0, 5.0, 10.0];

/// One ablation row: a complete configuration and the table it belongs to.
#[derive(Clone, Debug)]
pub struct Variant {
    pub table: &'static str,
    pub label: String,
    pub config: ExperimentConfig,
}

pub fn variants(base: &ExperimentConfig, sweep: Sweep) -> Vec<Variant> {
    let mut out = Vec::new();
    let mut push = |table: &'static str, label: String, edit: &dyn Fn(&mut ExperimentConfig)| {
        let mut config = base.clone();
        edit(&mut config);
        config.output_dir = base.output_dir.join(table).join(&label);
        out.push(Variant { table, label, config });
    };
    if matches!(sweep, Sweep::Granularity | Sweep::All) {
        for gl in GL_SWEEP {
            let list = GranularityList(gl.to_vec());
            push("granularity", format!("gl_{}", ExperimentConfig::gl_label(&list)), &|c| {
                c.rrn.gl = list.clone()
            });
        }
    }
    if matches!(sweep, Sweep::Fusion | Sweep::All) {
        for mode in FusionMode::ALL {
            push("fusion", mode.name().to_string(), &|c| c.rrn.fusion_mode = mode);
        }
    }
    if matches!(sweep, Sweep::Velocity | Sweep::All) {
        for lambda in LAMBDA_SWEEP {
            push("velocity", format!("lambda_v_{lambda}"), &|c| {
                c.rrn.velocity_augmentation = true;
                c.train.lambda_v = lambda;
            });
        }
        push("velocity", "no_augmentation".into(), &|c| {
            c.rrn.velocity_augmentation = false;
            c.train.lambda_v = 0.0;
        });
    }
    out
}

pub const ABLATION_CSV_HEADER: &str =
    "table,variant,gl,fusion_mode,lambda_v,velocity_augmentation,final_train_loss,ade,fde,per_stage_ade,run_dir";

#[derive(Clone, Debug)]
pub struct AblationRow {
    pub variant: Variant,
    pub final_loss: f64,
    pub report: ReportFile,
}

impl AblationRow {
    pub fn csv(&self) -> String {
        let c = &self.variant.config;
        format!(
            "{},{},{},{},{},{},{},{},{},{},{}",
            self.variant.table,
            self.variant.label,
            ExperimentConfig::gl_label(&c.rrn.gl),
            c.rrn.fusion_mode.name(),
            c.train.lambda_v,
            c.rrn.velocity_augmentation,
            self.final_loss,
            self.report.ade,
            self.report.fde,
            join_stages(&self.report.per_stage_ade),
            c.output_dir.display()
        )
    }
}

/// Trains and evaluates every variant of `sweep`, sharing one pretrained goal
/// predictor, and writes the aggregated `ablation.csv`.
pub fn cmd_ablate(base: &ExperimentConfig, sweep: Sweep) -> AppResult<Vec<AblationRow>> {
    base.validate()?;
    let mut base = base.clone();
    if base.goal_checkpoint.is_none() {
        let mut goal_cfg = base.clone();
        goal_cfg.output_dir = base.output_dir.join("goal");
        base.goal_checkpoint = Some(cmd_pretrain_goal(&goal_cfg, None)?.stage2_path);
    }
    let mut rows = Vec::new();
    let mut csv = String::from(ABLATION_CSV_HEADER);
    csv.push('\n');
    for variant in variants(&base, sweep) {
        let outcome = cmd_train(&variant.config, None)?;
        let report = cmd_eval(&outcome.checkpoint_path, &variant.config)?;
        let final_loss = outcome.checkpoint.history.last().map_or(f64::NAN, |l| l.loss);
        let row = AblationRow {
            variant,
            final_loss,
            report,
        };
        csv.push_str(&row.csv());
        csv.push('\n');
        rows.push(row);
    }
    write_text(&base.output_dir.join(ABLATION_CSV), &csv)?;
    write_run_metadata(&base.output_dir, "ablate", &base, &[ABLATION_CSV])?;
    Ok(rows)
}
