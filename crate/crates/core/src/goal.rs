//! Causal-transformer goal predictor, pretrained in two stages.
//!
//! Stage one learns next-position prediction over every history prefix with a
//! causal mask. Stage two appends a learnable goal token to the history tokens;
//! the output at that final token is decoded into `N` candidate endpoints and
//! trained winner-takes-all against the true endpoint, fine-tuning the backbone
//! jointly. All coordinates are window-normalized (last observation at origin).

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Var};
use crate::data::TrajectoryWindow;
use crate::error::{Error, Result};
use crate::nn::{sinusoid_table, tile_rows, Encoder, Linear};
use crate::params::{clip_global_norm, Adam, AdamConfig, ParamId, ParamStore};
use crate::tensor::Matrix;
use crate::train::cosine_lr;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GoalPredictorConfig {
    pub embed_dim: usize,
    pub heads: usize,
    pub layers: usize,
    pub ff_dim: usize,
    pub modes: usize,
    pub history_len: usize,
}

impl Default for GoalPredictorConfig {
    fn default() -> Self {
        Self {
            embed_dim: 64,
            heads: 8,
            layers: 1,
            ff_dim: 2048,
            modes: 20,
            history_len: 8,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GoalTrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub lr_init: f64,
    pub lr_min: f64,
    pub clip_norm: Option<f64>,
    pub seed: u64,
}

impl Default for GoalTrainConfig {
    fn default() -> Self {
        Self {
            steps: 2000,
            batch_size: 512,
            lr_init: 1e-3,
            lr_min: 1e-5,
            clip_norm: Some(10.0),
            seed: 0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PretrainStage {
    Untrained,
    NextFrame,
    Goal,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct GoalPredictorLayout {
    embed: Linear,
    encoder: Encoder,
    goal_token: ParamId,
    goal_head: Linear,
    next_head: Linear,
}

/// N candidate endpoints in window-normalized coordinates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GoalSet {
    pub goals: Vec<[f64; 2]>,
}

impl GoalSet {
    pub fn len(&self) -> usize {
        self.goals.len()
    }

    pub fn is_empty(&self) -> bool {
        self.goals.is_empty()
    }

    /// Goals in scene coordinates given the window's normalization offset.
    pub fn denormalized(&self, origin: [f64; 2]) -> Vec<[f64; 2]> {
        self.goals.iter().map(|g| [g[0] + origin[0], g[1] + origin[1]]).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GoalPredictor {
    pub config: GoalPredictorConfig,
    pub params: ParamStore,
    layout: GoalPredictorLayout,
    pub stage: PretrainStage,
    pub frozen: bool,
}

/// Losses recorded during pretraining, one per optimizer step.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossCurve {
    pub losses: Vec<f64>,
}

fn check_windows(windows: &[TrajectoryWindow], history_len: usize) -> Result<()> {
    if windows.is_empty() {
        return Err(Error::Config("goal predictor training set is empty".into()));
    }
    if let Some(w) = windows.iter().find(|w| w.history.len() != history_len || w.future.is_empty()) {
        return Err(Error::Config(format!(
            "window of agent {} has {} history frames, expected {history_len}",
            w.agent_id,
            w.history.len()
        )));
    }
    Ok(())
}

fn normalized_history(history: &[[f64; 2]]) -> Vec<[f64; 2]> {
    let o = *history.last().expect("empty history");
    history.iter().map(|p| [p[0] - o[0], p[1] - o[1]]).collect()
}

impl GoalPredictor {
    pub fn new(config: GoalPredictorConfig, seed: u64) -> Result<Self> {
        if config.embed_dim == 0 || config.heads == 0 || !config.embed_dim.is_multiple_of(config.heads) {
            return Err(Error::Config(format!(
                "embed_dim {} must be a positive multiple of heads {}",
                config.embed_dim, config.heads
            )));
        }
        if config.modes == 0 || config.history_len < 2 {
            return Err(Error::Config("goal predictor needs ≥1 mode and ≥2 history frames".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        let d = config.embed_dim;
        let layout = GoalPredictorLayout {
            embed: Linear::new(&mut params, "goal.embed", 2, d, &mut rng),
            encoder: Encoder::new(&mut params, "goal.encoder", config.layers, d, config.heads, config.ff_dim, &mut rng),
            goal_token: params.add_uniform("goal.goal_token", 1, d, d, &mut rng),
            goal_head: Linear::new(&mut params, "goal.goal_head", d, 2 * config.modes, &mut rng),
            next_head: Linear::new(&mut params, "goal.next_head", d, 2, &mut rng),
        };
        Ok(Self {
            config,
            params,
            layout,
            stage: PretrainStage::Untrained,
            frozen: false,
        })
    }

    pub fn param_count(&self) -> usize {
        self.params.scalar_count()
    }

    pub fn freeze(&mut self) {
        self.frozen = true;
    }

    fn ensure_trainable(&self) -> Result<()> {
        if self.frozen {
            return Err(Error::Usage("goal predictor is frozen".into()));
        }
        Ok(())
    }

    /// Token embeddings plus timestep encoding for normalized histories.
    fn history_tokens(&self, g: &mut Graph, histories: &[Vec<[f64; 2]>]) -> Var {
        let s = self.config.history_len;
        let mut x = Matrix::zeros(histories.len() * s, 2);
        for (b, h) in histories.iter().enumerate() {
            for (t, p) in h.iter().enumerate() {
                x[(b * s + t, 0)] = p[0];
                x[(b * s + t, 1)] = p[1];
            }
        }
        let x = g.constant(x);
        let e = self.layout.embed.forward(g, &self.params, x);
        let pe = tile_rows(&sinusoid_table(1..=s, self.config.embed_dim), histories.len());
        let pe = g.constant(pe);
        g.add(e, pe)
    }

    /// Stage-one outputs: predicted next position after each prefix, `(B·T_h) × 2`.
    pub fn next_frame_outputs(&self, g: &mut Graph, histories: &[Vec<[f64; 2]>]) -> Var {
        let tokens = self.history_tokens(g, histories);
        let h = self.layout.encoder.forward(g, &self.params, tokens, histories.len(), true);
        self.layout.next_head.forward(g, &self.params, h)
    }

    /// Stage-two outputs: `(B·N) × 2` goals, sequence-major.
    pub fn goal_outputs(&self, g: &mut Graph, histories: &[Vec<[f64; 2]>]) -> Var {
        let b = histories.len();
        let s = self.config.history_len;
        let tokens = self.history_tokens(g, histories);
        let token = g.param(&self.params, self.layout.goal_token);
        let goal_rows = g.repeat_rows(token, b);
        let stacked = g.concat_rows(&[tokens, goal_rows]);
        // interleave: each sequence is its s history tokens then the goal token
        let mut order = Vec::with_capacity(b * (s + 1));
        for i in 0..b {
            order.extend(i * s..(i + 1) * s);
            order.push(b * s + i);
        }
        let seq = g.gather_rows(stacked, order);
        let h = self.layout.encoder.forward(g, &self.params, seq, b, true);
        let last = g.gather_rows(h, (0..b).map(|i| i * (s + 1) + s).collect());
        let out = self.layout.goal_head.forward(g, &self.params, last);
        g.reshape(out, b * self.config.modes, 2)
    }

    /// Mean next-frame MSE (averaged over prefixes and both coordinates).
    fn stage1_loss(&self, g: &mut Graph, windows: &[&TrajectoryWindow]) -> Var {
        let s = self.config.history_len;
        let histories: Vec<_> = windows.iter().map(|w| normalized_history(&w.history)).collect();
        let mut target = Matrix::zeros(windows.len() * s, 2);
        for (b, w) in windows.iter().enumerate() {
            let o = w.last_observed();
            for (t, p) in w.positions().skip(1).take(s).enumerate() {
                target[(b * s + t, 0)] = p[0] - o[0];
                target[(b * s + t, 1)] = p[1] - o[1];
            }
        }
        let pred = self.next_frame_outputs(g, &histories);
        let per_seq = g.masked_mse(pred, target, vec![true; s], (0, 2));
        let n = windows.len() as f64;
        g.weighted_sum(per_seq, vec![1.0 / n; windows.len()])
    }

    /// Winner-takes-all endpoint MSE; also returns the winning mode per window.
    fn stage2_loss(&self, g: &mut Graph, windows: &[&TrajectoryWindow]) -> (Var, Vec<usize>) {
        let n = self.config.modes;
        let histories: Vec<_> = windows.iter().map(|w| normalized_history(&w.history)).collect();
        let pred = self.goal_outputs(g, &histories);
        let mut target = Matrix::zeros(windows.len() * n, 2);
        for (b, w) in windows.iter().enumerate() {
            let o = w.last_observed();
            let end = *w.future.last().expect("empty future");
            for m in 0..n {
                target[(b * n + m, 0)] = end[0] - o[0];
                target[(b * n + m, 1)] = end[1] - o[1];
            }
        }
        let per_mode = g.masked_mse(pred, target, vec![true], (0, 2));
        let values = g.value(per_mode).data().to_vec();
        let winners: Vec<usize> = values.chunks(n).map(argmin).collect();
        let mut weights = vec![0.0; values.len()];
        let inv = 1.0 / windows.len() as f64;
        for (b, &m) in winners.iter().enumerate() {
            weights[b * n + m] = inv;
        }
        (g.weighted_sum(per_mode, weights), winners)
    }

    /// Training-set stage-one loss without updating anything.
    pub fn next_frame_loss(&self, windows: &[TrajectoryWindow]) -> f64 {
        let refs: Vec<_> = windows.iter().collect();
        let mut g = Graph::inference();
        let l = self.stage1_loss(&mut g, &refs);
        g.value(l)[(0, 0)]
    }

    /// Training-set winner-takes-all endpoint loss.
    pub fn goal_loss(&self, windows: &[TrajectoryWindow]) -> f64 {
        let refs: Vec<_> = windows.iter().collect();
        let mut g = Graph::inference();
        let (l, _) = self.stage2_loss(&mut g, &refs);
        g.value(l)[(0, 0)]
    }

    fn optimize(
        &mut self,
        windows: &[TrajectoryWindow],
        cfg: &GoalTrainConfig,
        loss_fn: impl Fn(&Self, &mut Graph, &[&TrajectoryWindow]) -> Var,
    ) -> Result<LossCurve> {
        if cfg.batch_size == 0 {
            return Err(Error::Config("batch size must be at least 1".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut adam = Adam::new(AdamConfig::default(), self.params.len());
        let mut order: Vec<usize> = (0..windows.len()).collect();
        let mut cursor = order.len();
        let mut curve = LossCurve::default();
        for step in 0..cfg.steps {
            if cursor >= order.len() {
                order.shuffle(&mut rng);
                cursor = 0;
            }
            let end = (cursor + cfg.batch_size).min(order.len());
            let batch: Vec<&TrajectoryWindow> = order[cursor..end].iter().map(|&i| &windows[i]).collect();
            cursor = end;
            let mut g = Graph::new();
            let loss = loss_fn(self, &mut g, &batch);
            let value = g.value(loss)[(0, 0)];
            if !value.is_finite() {
                return Err(Error::Divergence { step, loss: value });
            }
            curve.losses.push(value);
            let mut grads = g.backward(loss).param_grads(&g, self.params.len());
            if let Some(max) = cfg.clip_norm {
                clip_global_norm(&mut grads, max);
            }
            let lr = cosine_lr(step, cfg.steps, cfg.lr_init, cfg.lr_min);
            adam.step(&mut self.params, &grads, lr);
        }
        Ok(curve)
    }

    /// Stage one: next-position prediction over all history prefixes.
    pub fn pretrain_stage1(&mut self, windows: &[TrajectoryWindow], cfg: &GoalTrainConfig) -> Result<LossCurve> {
        self.ensure_trainable()?;
        check_windows(windows, self.config.history_len)?;
        let curve = self.optimize(windows, cfg, |m, g, b| m.stage1_loss(g, b))?;
        self.stage = PretrainStage::NextFrame;
        Ok(curve)
    }

    /// Stage two: multi-modal endpoint prediction from the appended goal token.
    pub fn pretrain_stage2(&mut self, windows: &[TrajectoryWindow], cfg: &GoalTrainConfig) -> Result<LossCurve> {
        self.ensure_trainable()?;
        if self.stage < PretrainStage::NextFrame {
            return Err(Error::Usage("stage two requires stage-one weights".into()));
        }
        check_windows(windows, self.config.history_len)?;
        let curve = self.optimize(windows, cfg, |m, g, b| m.stage2_loss(g, b).0)?;
        self.stage = PretrainStage::Goal;
        Ok(curve)
    }

    /// Goals for one history given in any coordinates; the result is in the
    /// window-normalized frame (last observation at the origin).
    pub fn predict_goals(&self, history: &[[f64; 2]]) -> Result<GoalSet> {
        Ok(self.predict_goals_batch(&[history.to_vec()])?.remove(0))
    }

    pub fn predict_goals_batch(&self, histories: &[Vec<[f64; 2]>]) -> Result<Vec<GoalSet>> {
        if self.stage != PretrainStage::Goal {
            return Err(Error::Usage("goal predictor has not completed stage-two pretraining".into()));
        }
        if let Some(h) = histories.iter().find(|h| h.len() != self.config.history_len) {
            return Err(Error::Config(format!(
                "history has {} frames, expected {}",
                h.len(),
                self.config.history_len
            )));
        }
        let n = self.config.modes;
        let mut out = Vec::with_capacity(histories.len());
        for chunk in histories.chunks(256) {
            let normalized: Vec<_> = chunk.iter().map(|h| normalized_history(h)).collect();
            let mut g = Graph::inference();
            let goals = self.goal_outputs(&mut g, &normalized);
            let v = g.value(goals);
            for b in 0..chunk.len() {
                out.push(GoalSet {
                    goals: (0..n).map(|m| [v[(b * n + m, 0)], v[(b * n + m, 1)]]).collect(),
                });
            }
        }
        Ok(out)
    }
}

pub(crate) fn argmin(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v < values[best] {
            best = i;
        }
    }
    best
}
