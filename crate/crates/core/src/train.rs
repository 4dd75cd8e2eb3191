//! Losses, learning-rate schedule and end-to-end RRN training.
//!
//! MSE convention: squared error averaged over the masked frames and both
//! coordinates of one trajectory; per-trajectory values are then reduced over
//! modes (min or mean) and averaged over the windows of a batch. Position and
//! velocity losses use the same convention.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Var};
use crate::data::{augment_velocity, AugmentedState, TrajectoryWindow};
use crate::error::{Error, Result};
use crate::goal::{argmin, GoalPredictor, GoalSet};
use crate::metrics::{ade, fde};
use crate::params::{clip_global_norm, Adam, AdamConfig};
use crate::proposal::initial_proposal;
use crate::rrn::{select_channels, RefineInput, RrnModel};
use crate::tensor::Matrix;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossMask {
    FutureOnly,
    FullHorizon,
}

impl LossMask {
    pub fn frames(self, history_len: usize, horizon: usize) -> Vec<bool> {
        (0..horizon)
            .map(|t| self == LossMask::FullHorizon || t >= history_len)
            .collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModalReduction {
    WinnerTakesAll,
    MeanOverModes,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub lr_init: f64,
    pub lr_min: f64,
    pub lambda_v: f64,
    pub loss_mask: LossMask,
    pub modal_reduction: ModalReduction,
    pub seed: u64,
    pub clip_norm: Option<f64>,
    /// Caps the schedule length; `None` runs every epoch.
    pub max_steps: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 512,
            epochs: 500,
            lr_init: 1e-3,
            lr_min: 1e-5,
            lambda_v: 5.0,
            loss_mask: LossMask::FutureOnly,
            modal_reduction: ModalReduction::WinnerTakesAll,
            seed: 0,
            clip_norm: Some(10.0),
            max_steps: None,
        }
    }
}

impl TrainConfig {
    pub fn steps_per_epoch(&self, samples: usize) -> usize {
        samples.div_ceil(self.batch_size.max(1))
    }

    pub fn total_steps(&self, samples: usize) -> usize {
        let full = self.epochs * self.steps_per_epoch(samples);
        self.max_steps.map_or(full, |m| m.min(full))
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(Error::Config("batch_size and epochs must be at least 1".into()));
        }
        if !(self.lr_init > 0.0 && self.lr_min >= 0.0 && self.lr_min <= self.lr_init) {
            return Err(Error::Config(format!(
                "learning rates must satisfy 0 <= lr_min ({}) <= lr_init ({}), lr_init > 0",
                self.lr_min, self.lr_init
            )));
        }
        if !(self.lambda_v >= 0.0 && self.lambda_v.is_finite()) {
            return Err(Error::Config(format!("lambda_v must be finite and >= 0, got {}", self.lambda_v)));
        }
        Ok(())
    }
}

fn check_mask(pred: &[[f64; 2]], gt: &[[f64; 2]], mask: &[bool]) -> Result<usize> {
    if pred.len() != gt.len() || pred.len() != mask.len() {
        return Err(Error::Config(format!(
            "loss inputs have lengths {}, {} and mask {}",
            pred.len(),
            gt.len(),
            mask.len()
        )));
    }
    let n = mask.iter().filter(|m| **m).count();
    if n == 0 {
        return Err(Error::Config("loss mask selects no frames".into()));
    }
    Ok(n)
}

fn masked_mse(pred: &[[f64; 2]], gt: &[[f64; 2]], mask: &[bool]) -> Result<f64> {
    let n = check_mask(pred, gt, mask)?;
    let sum: f64 = pred
        .iter()
        .zip(gt)
        .zip(mask)
        .filter(|(_, m)| **m)
        .map(|((p, g), _)| (p[0] - g[0]) * (p[0] - g[0]) + (p[1] - g[1]) * (p[1] - g[1]))
        .sum();
    Ok(sum / (2 * n) as f64)
}

/// Position MSE over masked frames and both coordinates.
pub fn position_loss(pred: &[[f64; 2]], gt: &[[f64; 2]], mask: &[bool]) -> Result<f64> {
    masked_mse(pred, gt, mask)
}

/// Velocity MSE, same convention as [`position_loss`].
pub fn velocity_loss(pred: &[[f64; 2]], gt: &[[f64; 2]], mask: &[bool]) -> Result<f64> {
    masked_mse(pred, gt, mask)
}

pub fn total_loss(position: f64, velocity: f64, lambda_v: f64) -> f64 {
    if lambda_v == 0.0 {
        position
    } else {
        position + lambda_v * velocity
    }
}

pub fn multimodal_loss(per_mode: &[f64], reduction: ModalReduction) -> Result<f64> {
    if per_mode.is_empty() {
        return Err(Error::Config("no modes to reduce".into()));
    }
    Ok(match reduction {
        ModalReduction::WinnerTakesAll => per_mode.iter().copied().fold(f64::INFINITY, f64::min),
        ModalReduction::MeanOverModes => per_mode.iter().sum::<f64>() / per_mode.len() as f64,
    })
}

/// Cosine annealing from `lr_init` at step 0 to `lr_min` at `total_steps`.
pub fn cosine_lr(step: usize, total_steps: usize, lr_init: f64, lr_min: f64) -> f64 {
    if total_steps == 0 {
        return lr_init;
    }
    let frac = step.min(total_steps) as f64 / total_steps as f64;
    lr_min + 0.5 * (lr_init - lr_min) * (1.0 + libm::cos(PI * frac))
}

/// A window with its frozen goals and proposals, all window-normalized.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PreparedSample {
    pub origin: [f64; 2],
    pub ground_truth: AugmentedState,
    pub goals: GoalSet,
    pub proposals: Vec<Matrix>,
}

/// Runs the frozen goal predictor and builds one proposal per goal.
pub fn prepare_samples(goal: &GoalPredictor, windows: &[TrajectoryWindow], history_len: usize) -> Result<Vec<PreparedSample>> {
    let histories: Vec<Vec<[f64; 2]>> = windows.iter().map(|w| w.history.clone()).collect();
    let goal_sets = goal.predict_goals_batch(&histories)?;
    windows
        .iter()
        .zip(goal_sets)
        .map(|(w, goals)| {
            let (norm, origin) = w.normalized();
            let gt = augment_velocity(&norm);
            let horizon = gt.horizon();
            if norm.history.len() != history_len {
                return Err(Error::Config(format!(
                    "window has {} history frames, expected {history_len}",
                    norm.history.len()
                )));
            }
            let hist = Matrix::from_vec(history_len, 4, gt.values.data()[..history_len * 4].to_vec());
            let proposals = goals
                .goals
                .iter()
                .map(|g| initial_proposal(&hist, *g, horizon).map(|p| p.state.values))
                .collect::<Result<Vec<_>>>()?;
            Ok(PreparedSample {
                origin,
                ground_truth: gt,
                goals,
                proposals,
            })
        })
        .collect()
}

/// Stacked refinement inputs and targets for `(sample, mode)` pairs.
pub(crate) struct SeqBatch {
    pub proposals: Matrix,
    pub goals: Matrix,
    pub targets: Matrix,
    pub len: usize,
}

pub(crate) fn stack(samples: &[PreparedSample], pairs: &[(usize, usize)], channels: usize) -> SeqBatch {
    let t = samples[pairs[0].0].ground_truth.horizon();
    let mut proposals = Vec::with_capacity(pairs.len() * t * channels);
    let mut targets = Vec::with_capacity(pairs.len() * t * channels);
    let mut goals = Vec::with_capacity(pairs.len() * 2);
    for &(s, m) in pairs {
        let sample = &samples[s];
        proposals.extend_from_slice(select_channels(&sample.proposals[m], channels).data());
        targets.extend_from_slice(select_channels(&sample.ground_truth.values, channels).data());
        goals.extend_from_slice(&sample.goals.goals[m]);
    }
    SeqBatch {
        proposals: Matrix::from_vec(pairs.len() * t, channels, proposals),
        goals: Matrix::from_vec(pairs.len(), 2, goals),
        targets: Matrix::from_vec(pairs.len() * t, channels, targets),
        len: pairs.len(),
    }
}

/// Symbolic per-sequence losses of one batch.
pub struct LossVars {
    pub position: Var,
    pub velocity: Option<Var>,
    pub total: Var,
    pub final_state: Var,
}

pub(crate) fn loss_vars(g: &mut Graph, model: &RrnModel, batch: &SeqBatch, cfg: &TrainConfig) -> Result<LossVars> {
    let vars = model.refine_vars(
        g,
        &RefineInput {
            proposals: &batch.proposals,
            goals: &batch.goals,
            batch: batch.len,
        },
    )?;
    let final_state = vars.final_state();
    let mask = cfg.loss_mask.frames(model.config.history_len, model.config.horizon);
    let position = g.masked_mse(final_state, batch.targets.clone(), mask.clone(), (0, 2));
    let velocity = (model.config.channels() == 4).then(|| g.masked_mse(final_state, batch.targets.clone(), mask, (2, 4)));
    let total = match velocity {
        Some(v) if cfg.lambda_v != 0.0 => {
            let scaled = g.scale(v, cfg.lambda_v);
            g.add(position, scaled)
        }
        _ => position,
    };
    Ok(LossVars {
        position,
        velocity,
        total,
        final_state,
    })
}

/// Reduction weights over `modes` consecutive entries per window, plus the
/// winning mode index per window under winner-takes-all.
pub fn reduction_weights(per_seq: &[f64], modes: usize, reduction: ModalReduction) -> (Vec<f64>, Vec<usize>) {
    let windows = per_seq.len() / modes;
    let mut weights = vec![0.0; per_seq.len()];
    let mut winners = Vec::with_capacity(windows);
    for (w, chunk) in per_seq.chunks(modes).enumerate() {
        let best = argmin(chunk);
        winners.push(best);
        match reduction {
            ModalReduction::WinnerTakesAll => weights[w * modes + best] = 1.0 / windows as f64,
            ModalReduction::MeanOverModes => {
                for m in 0..modes {
                    weights[w * modes + m] = 1.0 / (windows * modes) as f64;
                }
            }
        }
    }
    (weights, winners)
}

/// Differentiable batch objective over every `(window, mode)` pair.
/// Returns the scalar loss and the graph it lives in; used for gradient checks.
pub fn batch_objective(model: &RrnModel, samples: &[PreparedSample], cfg: &TrainConfig) -> Result<(Graph, Var)> {
    let modes = samples[0].proposals.len();
    let pairs: Vec<_> = (0..samples.len()).flat_map(|s| (0..modes).map(move |m| (s, m))).collect();
    let batch = stack(samples, &pairs, model.config.channels());
    let mut g = Graph::new();
    let lv = loss_vars(&mut g, model, &batch, cfg)?;
    let per_seq = g.value(lv.total).data().to_vec();
    let (weights, _) = reduction_weights(&per_seq, modes, cfg.modal_reduction);
    let loss = g.weighted_sum(lv.total, weights);
    Ok((g, loss))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepLog {
    pub step: usize,
    pub epoch: usize,
    pub lr: f64,
    pub position_loss: f64,
    pub velocity_loss: f64,
    pub loss: f64,
    /// Best-of-N ADE/FDE of the batch before the update.
    pub ade: f64,
    pub fde: f64,
}

/// Resumable optimizer state.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TrainState {
    pub model: RrnModel,
    pub adam: Adam,
    pub step: usize,
}

impl TrainState {
    pub fn new(model: RrnModel) -> Self {
        let n = model.params.len();
        Self {
            model,
            adam: Adam::new(AdamConfig::default(), n),
            step: 0,
        }
    }
}

/// Per-window permutation for `epoch`; depends only on the seed and epoch.
fn epoch_order(seed: u64, epoch: usize, n: usize) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (epoch as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    order
}

const CHUNK_SEQUENCES: usize = 160;

/// Per-sequence evaluation of a batch without gradients: totals, position
/// and velocity losses, and best-of-N ADE/FDE per window.
struct ForwardStats {
    total: Vec<f64>,
    position: Vec<f64>,
    velocity: Vec<f64>,
    ade: Vec<f64>,
    fde: Vec<f64>,
}

fn forward_stats(model: &RrnModel, samples: &[PreparedSample], windows: &[usize], cfg: &TrainConfig) -> Result<ForwardStats> {
    let modes = samples[windows[0]].proposals.len();
    let (t, h, c) = (model.config.horizon, model.config.history_len, model.config.channels());
    let mut stats = ForwardStats {
        total: Vec::new(),
        position: Vec::new(),
        velocity: Vec::new(),
        ade: Vec::new(),
        fde: Vec::new(),
    };
    let per_chunk = (CHUNK_SEQUENCES / modes).max(1);
    for chunk in windows.chunks(per_chunk) {
        let pairs: Vec<_> = chunk.iter().flat_map(|&s| (0..modes).map(move |m| (s, m))).collect();
        let batch = stack(samples, &pairs, c);
        let mut g = Graph::inference();
        let lv = loss_vars(&mut g, model, &batch, cfg)?;
        stats.total.extend_from_slice(g.value(lv.total).data());
        stats.position.extend_from_slice(g.value(lv.position).data());
        match lv.velocity {
            Some(v) => stats.velocity.extend_from_slice(g.value(v).data()),
            None => stats.velocity.extend(std::iter::repeat_n(0.0, pairs.len())),
        }
        let fin = g.value(lv.final_state);
        for (wi, &s) in chunk.iter().enumerate() {
            let gt: Vec<[f64; 2]> = (h..t).map(|r| samples[s].ground_truth.position(r)).collect();
            let mut best_ade = f64::INFINITY;
            let mut best_fde = f64::INFINITY;
            for m in 0..modes {
                let base = (wi * modes + m) * t;
                let pred: Vec<[f64; 2]> = (h..t).map(|r| [fin[(base + r, 0)], fin[(base + r, 1)]]).collect();
                best_ade = best_ade.min(ade(&pred, &gt));
                best_fde = best_fde.min(fde(&pred, &gt));
            }
            stats.ade.push(best_ade);
            stats.fde.push(best_fde);
        }
    }
    Ok(stats)
}

/// Batch objective value, its parts, best-of-N metrics and parameter gradients.
pub struct BatchGradients {
    pub grads: Vec<Option<Matrix>>,
    pub loss: f64,
    pub position_loss: f64,
    pub velocity_loss: f64,
    pub ade: f64,
    pub fde: f64,
    /// Lowest-loss mode per window.
    pub winners: Vec<usize>,
}

/// Objective and gradients on the windows `batch` (indices into `samples`).
pub fn batch_gradients(model: &RrnModel, samples: &[PreparedSample], batch: &[usize], cfg: &TrainConfig) -> Result<BatchGradients> {
    let modes = samples[batch[0]].proposals.len();
    let stats = forward_stats(model, samples, batch, cfg)?;
    let (weights, winners) = reduction_weights(&stats.total, modes, cfg.modal_reduction);
    let reduce = |v: &[f64]| v.iter().zip(&weights).map(|(a, w)| a * w).sum::<f64>();

    // Under winner-takes-all only the winning mode of each window carries
    // gradient, so the differentiable pass is restricted to those.
    let (pairs, grad_weights): (Vec<_>, Vec<_>) = match cfg.modal_reduction {
        ModalReduction::WinnerTakesAll => batch
            .iter()
            .zip(&winners)
            .map(|(&s, &m)| ((s, m), 1.0 / batch.len() as f64))
            .unzip(),
        ModalReduction::MeanOverModes => batch
            .iter()
            .enumerate()
            .flat_map(|(wi, &s)| (0..modes).map(move |m| ((s, m), wi * modes + m)))
            .map(|(p, i)| (p, weights[i]))
            .unzip(),
    };
    let seqs = stack(samples, &pairs, model.config.channels());
    let mut g = Graph::new();
    let lv = loss_vars(&mut g, model, &seqs, cfg)?;
    let objective = g.weighted_sum(lv.total, grad_weights);
    let grads = g.backward(objective).param_grads(&g, model.params.len());
    let n = batch.len() as f64;
    Ok(BatchGradients {
        grads,
        loss: reduce(&stats.total),
        position_loss: reduce(&stats.position),
        velocity_loss: reduce(&stats.velocity),
        ade: stats.ade.iter().sum::<f64>() / n,
        fde: stats.fde.iter().sum::<f64>() / n,
        winners,
    })
}

/// One optimizer step on the windows `batch` (indices into `samples`).
pub fn train_step(state: &mut TrainState, samples: &[PreparedSample], batch: &[usize], cfg: &TrainConfig, total_steps: usize) -> Result<StepLog> {
    let BatchGradients {
        mut grads,
        loss,
        position_loss,
        velocity_loss,
        ade,
        fde,
        ..
    } = batch_gradients(&state.model, samples, batch, cfg)?;
    if !loss.is_finite() {
        return Err(Error::Divergence { step: state.step, loss });
    }
    if let Some(max) = cfg.clip_norm {
        clip_global_norm(&mut grads, max);
    }
    let lr = cosine_lr(state.step, total_steps, cfg.lr_init, cfg.lr_min);
    state.adam.step(&mut state.model.params, &grads, lr);
    let log = StepLog {
        step: state.step,
        epoch: 0,
        lr,
        position_loss,
        velocity_loss,
        loss,
        ade,
        fde,
    };
    state.step += 1;
    Ok(log)
}

/// Trains `state` until the schedule ends. `observer` sees every step log and
/// the state after that step; returning `false` stops early.
pub fn train(
    samples: &[PreparedSample],
    cfg: &TrainConfig,
    state: &mut TrainState,
    mut observer: impl FnMut(&StepLog, &TrainState) -> bool,
) -> Result<Vec<StepLog>> {
    cfg.validate()?;
    if samples.is_empty() {
        return Err(Error::Config("training set is empty".into()));
    }
    let per_epoch = cfg.steps_per_epoch(samples.len());
    let total = cfg.total_steps(samples.len());
    let mut logs = Vec::new();
    while state.step < total {
        let epoch = state.step / per_epoch;
        let within = state.step % per_epoch;
        let order = epoch_order(cfg.seed, epoch, samples.len());
        let start = within * cfg.batch_size;
        let end = (start + cfg.batch_size).min(samples.len());
        let mut log = train_step(state, samples, &order[start..end], cfg, total)?;
        log.epoch = epoch;
        let keep_going = observer(&log, state);
        logs.push(log);
        if !keep_going {
            break;
        }
    }
    Ok(logs)
}
