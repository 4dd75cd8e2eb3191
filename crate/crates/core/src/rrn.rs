//! Recursive refinement networks (RRNs).
//!
//! Each stage views the current proposal at one granularity level, embeds the
//! segments (trajectory encoder + broadcast goal encoder + timestep encoding),
//! runs a transformer encoder over the segment tokens and decodes a refinement
//! of the same shape. The refinement is mapped back to `T × C` and added to the
//! proposal before the next stage.
//!
//! In [`FusionMode::WeightShared`] every stage runs the same transformer
//! parameters. The other modes give each stage its own transformer; the pre-
//! and post-fusion modes additionally cross-attend to the previous stage's
//! embedding before or after that transformer.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Var};
use crate::data::AugmentedState;
use crate::error::{Error, Result};
use crate::granularity::{validate_gl, GranularityList};
use crate::nn::{sinusoid_table, tile_rows, CrossAttention, Encoder, Linear};
use crate::params::ParamStore;
use crate::proposal::Proposal;
use crate::tensor::Matrix;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FusionMode {
    WeightShared,
    NoFusion,
    PreFusion,
    PostFusion,
}

impl FusionMode {
    pub const ALL: [FusionMode; 4] = [Self::NoFusion, Self::PreFusion, Self::PostFusion, Self::WeightShared];

    pub fn name(self) -> &'static str {
        match self {
            Self::WeightShared => "weight_shared",
            Self::NoFusion => "no_fusion",
            Self::PreFusion => "pre_fusion",
            Self::PostFusion => "post_fusion",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|m| m.name() == s || m.name().replace('_', "-") == s)
            .ok_or_else(|| Error::Config(format!("unknown fusion mode {s:?}")))
    }

    fn has_cross_attention(self) -> bool {
        matches!(self, Self::PreFusion | Self::PostFusion)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RrnConfig {
    pub embed_dim: usize,
    pub heads: usize,
    pub transformer_layers: usize,
    pub ff_dim: usize,
    pub gl: GranularityList,
    pub fusion_mode: FusionMode,
    pub refine_history: bool,
    /// Position+velocity state (4 channels) or positions only (2 channels).
    pub velocity_augmentation: bool,
    pub history_len: usize,
    pub horizon: usize,
}

impl Default for RrnConfig {
    fn default() -> Self {
        Self {
            embed_dim: 64,
            heads: 8,
            transformer_layers: 1,
            ff_dim: 2048,
            gl: GranularityList::paper_default(),
            fusion_mode: FusionMode::WeightShared,
            refine_history: true,
            velocity_augmentation: true,
            history_len: 8,
            horizon: 20,
        }
    }
}

impl RrnConfig {
    pub fn channels(&self) -> usize {
        if self.velocity_augmentation {
            4
        } else {
            2
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.embed_dim == 0 || self.heads == 0 || !self.embed_dim.is_multiple_of(self.heads) {
            return Err(Error::Config(format!(
                "embed_dim {} must be a positive multiple of heads {}",
                self.embed_dim, self.heads
            )));
        }
        if self.history_len == 0 || self.horizon <= self.history_len {
            return Err(Error::Config(format!(
                "horizon {} must exceed history length {}",
                self.horizon, self.history_len
            )));
        }
        validate_gl(&self.gl, self.horizon)
    }
}

/// Segment-start timestep encoding for level `level`: rows are the sinusoid at
/// frame indices `1, 1 + l, 1 + 2l, …`.
pub fn timestep_encoding(horizon: usize, level: usize, embed_dim: usize) -> Result<Matrix> {
    if level == 0 || !horizon.is_multiple_of(level) {
        return Err(Error::Granularity { level, horizon });
    }
    Ok(sinusoid_table((0..horizon / level).map(|s| 1 + s * level), embed_dim))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RrnLayout {
    pub trajectory_encoders: Vec<Linear>,
    pub goal_encoder: Linear,
    pub transformers: Vec<Encoder>,
    pub decoders: Vec<Linear>,
    pub fusions: Vec<Option<CrossAttention>>,
}

/// RRN stack configuration, layout and parameter values.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RrnModel {
    pub config: RrnConfig,
    pub layout: RrnLayout,
    pub params: ParamStore,
}

/// Exact trainable-scalar counts per submodule.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamBreakdown {
    pub trajectory_encoders: usize,
    pub goal_encoder: usize,
    pub transformer: usize,
    pub transformer_sets: usize,
    pub decoders: usize,
    pub fusion: usize,
    pub total: usize,
}

/// Symbolic outputs of one batched refinement pass.
pub struct RefinementVars {
    pub deltas: Vec<Var>,
    pub stage_states: Vec<Var>,
    pub embeddings: Vec<Var>,
}

impl RefinementVars {
    pub fn final_state(&self) -> Var {
        *self.stage_states.last().expect("no stages")
    }
}

/// Per-stage refinements and intermediate proposals of one trajectory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RefinementBundle {
    pub deltas: Vec<Matrix>,
    pub stage_states: Vec<Matrix>,
    pub final_state: Matrix,
}

/// Batched refinement inputs: `B` sequences of `T` frames, stacked.
pub struct RefineInput<'a> {
    /// `(B·T) × C` initial proposals.
    pub proposals: &'a Matrix,
    /// `B × 2` goals.
    pub goals: &'a Matrix,
    pub batch: usize,
}

impl RrnModel {
    pub fn new(config: RrnConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        let (d, c) = (config.embed_dim, config.channels());
        let levels = config.gl.levels();
        let stages = levels.len();
        let shared = config.fusion_mode == FusionMode::WeightShared;
        let transformer = |i: usize, params: &mut ParamStore, rng: &mut ChaCha8Rng| {
            let name = if shared { "rrn.transformer".to_string() } else { format!("rrn.stage{i}.transformer") };
            Encoder::new(params, &name, config.transformer_layers, d, config.heads, config.ff_dim, rng)
        };
        let goal_encoder = Linear::new(&mut params, "rrn.goal_encoder", 2, d, &mut rng);
        let mut trajectory_encoders = Vec::with_capacity(stages);
        let mut decoders = Vec::with_capacity(stages);
        let mut transformers = Vec::new();
        let mut fusions = Vec::with_capacity(stages);
        for (i, &l) in levels.iter().enumerate() {
            trajectory_encoders.push(Linear::new(
                &mut params,
                &format!("rrn.stage{i}.trajectory_encoder"),
                c * l,
                d,
                &mut rng,
            ));
            if !shared || i == 0 {
                transformers.push(transformer(i, &mut params, &mut rng));
            }
            fusions.push(if config.fusion_mode.has_cross_attention() && i > 0 {
                Some(CrossAttention::new(&mut params, &format!("rrn.stage{i}.fusion"), d, config.heads, &mut rng))
            } else {
                None
            });
            decoders.push(Linear::new(&mut params, &format!("rrn.stage{i}.decoder"), d, c * l, &mut rng));
        }
        Ok(Self {
            config,
            layout: RrnLayout {
                trajectory_encoders,
                goal_encoder,
                transformers,
                decoders,
                fusions,
            },
            params,
        })
    }

    pub fn stages(&self) -> usize {
        self.config.gl.len()
    }

    fn transformer(&self, stage: usize) -> &Encoder {
        if self.config.fusion_mode == FusionMode::WeightShared {
            &self.layout.transformers[0]
        } else {
            &self.layout.transformers[stage]
        }
    }

    pub fn count_parameters(&self) -> ParamBreakdown {
        let l = &self.layout;
        let trajectory_encoders = l.trajectory_encoders.iter().map(Linear::param_count).sum();
        let goal_encoder = l.goal_encoder.param_count();
        let transformer = l.transformers.iter().map(Encoder::param_count).sum();
        let decoders = l.decoders.iter().map(Linear::param_count).sum();
        let fusion = l.fusions.iter().flatten().map(CrossAttention::param_count).sum();
        let total = trajectory_encoders + goal_encoder + transformer + decoders + fusion;
        debug_assert_eq!(total, self.params.scalar_count());
        ParamBreakdown {
            trajectory_encoders,
            goal_encoder,
            transformer,
            transformer_sets: l.transformers.len(),
            decoders,
            fusion,
            total,
        }
    }

    /// Zeroes every refinement decoder (weights and biases).
    pub fn zero_decoders(&mut self) {
        for d in self.layout.decoders.clone() {
            d.zero(&mut self.params);
        }
    }

    /// Goal embedding `B × D`, shared by all stages.
    pub fn embed_goals(&self, g: &mut Graph, goals: Var) -> Var {
        let e = self.layout.goal_encoder.forward(g, &self.params, goals);
        g.gelu(e)
    }

    /// Input tokens of `stage`: trajectory + goal + timestep embeddings,
    /// `(B·T/l) × D`.
    pub fn embed_inputs(&self, g: &mut Graph, stage: usize, state: Var, goal_embedding: Var, batch: usize) -> Var {
        let l = self.config.gl.levels()[stage];
        let (t, c, d) = (self.config.horizon, self.config.channels(), self.config.embed_dim);
        let segments = t / l;
        let view = g.reshape(state, batch * segments, c * l);
        let ex = self.layout.trajectory_encoders[stage].forward(g, &self.params, view);
        let ex = g.gelu(ex);
        let eg = g.repeat_rows(goal_embedding, segments);
        let table = timestep_encoding(t, l, d).expect("levels validated at construction");
        let et = g.constant(tile_rows(&table, batch));
        let sum = g.add(eg, et);
        g.add(sum, ex)
    }

    /// One refinement stage. Returns the `(B·T) × C` delta and the embedding
    /// handed to the next stage for fusion.
    pub fn rrn_step(
        &self,
        g: &mut Graph,
        stage: usize,
        state: Var,
        goal_embedding: Var,
        prev_embedding: Option<Var>,
        batch: usize,
    ) -> Result<(Var, Var)> {
        let mode = self.config.fusion_mode;
        let fusion = self.layout.fusions.get(stage).copied().flatten();
        let prev = match (fusion, prev_embedding) {
            (Some(_), None) => {
                return Err(Error::Usage(format!("stage {stage} fuses with the previous embedding, none given")))
            }
            (Some(f), Some(p)) => Some((f, p)),
            (None, _) => None,
        };
        let l = self.config.gl.levels()[stage];
        let (t, c) = (self.config.horizon, self.config.channels());
        let emb = self.embed_inputs(g, stage, state, goal_embedding, batch);
        let (features, next) = match (mode, prev) {
            (FusionMode::PreFusion, Some((f, p))) => {
                let fused = f.forward(g, &self.params, emb, p, batch);
                (self.transformer(stage).forward(g, &self.params, fused, batch, false), fused)
            }
            (FusionMode::PostFusion, Some((f, p))) => {
                let h = self.transformer(stage).forward(g, &self.params, emb, batch, false);
                let fused = f.forward(g, &self.params, h, p, batch);
                (fused, fused)
            }
            (FusionMode::PreFusion, None) => {
                let h = self.transformer(stage).forward(g, &self.params, emb, batch, false);
                (h, emb)
            }
            _ => {
                let h = self.transformer(stage).forward(g, &self.params, emb, batch, false);
                (h, h)
            }
        };
        let act = g.gelu(features);
        let delta = self.layout.decoders[stage].forward(g, &self.params, act);
        debug_assert_eq!(g.value(delta).shape(), (batch * t / l, c * l));
        let delta = g.reshape(delta, batch * t, c);
        Ok((delta, next))
    }

    /// Runs every stage in order, accumulating refinements. Node tags are set
    /// to `stage + 1` while a stage is recorded.
    pub fn refine_vars(&self, g: &mut Graph, input: &RefineInput<'_>) -> Result<RefinementVars> {
        let (t, c) = (self.config.horizon, self.config.channels());
        let b = input.batch;
        if input.proposals.shape() != (b * t, c) || input.goals.shape() != (b, 2) {
            return Err(Error::Config(format!(
                "refinement input shapes {:?}/{:?} do not match batch {b} of {t}x{c}",
                input.proposals.shape(),
                input.goals.shape()
            )));
        }
        let restore = (!self.config.refine_history).then(|| {
            let keep: Vec<bool> = (0..b * t).map(|r| r % t >= self.config.history_len).collect();
            let mut history = input.proposals.clone();
            for (r, k) in keep.iter().enumerate() {
                if *k {
                    history.row_mut(r).fill(0.0);
                }
            }
            (keep, history)
        });
        g.set_tag(0);
        let x0 = g.constant(input.proposals.clone());
        let goals = g.constant(input.goals.clone());
        let goal_embedding = self.embed_goals(g, goals);
        let history = restore.as_ref().map(|(_, h)| g.constant(h.clone()));
        let mut out = RefinementVars {
            deltas: Vec::new(),
            stage_states: vec![x0],
            embeddings: Vec::new(),
        };
        let mut state = x0;
        let mut prev = None;
        for stage in 0..self.stages() {
            g.set_tag(stage as u32 + 1);
            let (delta, emb) = self.rrn_step(g, stage, state, goal_embedding, prev, b)?;
            state = g.add(state, delta);
            if let (Some((keep, _)), Some(h)) = (&restore, history) {
                let future = g.mask_rows(state, keep.clone());
                state = g.add(future, h);
            }
            out.deltas.push(delta);
            out.stage_states.push(state);
            out.embeddings.push(emb);
            prev = Some(emb);
        }
        g.set_tag(0);
        Ok(out)
    }

    /// Refines a single proposal towards `goal` (both window-normalized).
    pub fn refine_all(&self, proposal: &Proposal, goal: [f64; 2]) -> Result<RefinementBundle> {
        let state = self.model_state(&proposal.state);
        let goals = Matrix::from_vec(1, 2, vec![goal[0], goal[1]]);
        let mut g = Graph::inference();
        let vars = self.refine_vars(
            &mut g,
            &RefineInput {
                proposals: &state,
                goals: &goals,
                batch: 1,
            },
        )?;
        Ok(RefinementBundle {
            deltas: vars.deltas.iter().map(|v| g.value(*v).clone()).collect(),
            stage_states: vars.stage_states.iter().map(|v| g.value(*v).clone()).collect(),
            final_state: g.value(vars.final_state()).clone(),
        })
    }

    /// Restricts a `T × 4` augmented state to the channels this model uses.
    pub fn model_state(&self, state: &AugmentedState) -> Matrix {
        select_channels(&state.values, self.config.channels())
    }
}

pub(crate) fn select_channels(state: &Matrix, channels: usize) -> Matrix {
    if state.cols() == channels {
        return state.clone();
    }
    let mut out = Matrix::zeros(state.rows(), channels);
    for r in 0..state.rows() {
        out.row_mut(r).copy_from_slice(&state.row(r)[..channels]);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::augment_positions;
    use crate::proposal::initial_proposal;

    fn tiny(mode: FusionMode, gl: &[usize]) -> RrnConfig {
        RrnConfig {
            embed_dim: 8,
            heads: 2,
            ff_dim: 16,
            gl: GranularityList(gl.to_vec()),
            fusion_mode: mode,
            ..RrnConfig::default()
        }
    }

    fn sample_proposal() -> Proposal {
        let pts: Vec<[f64; 2]> = (0..8).map(|t| [0.4 * t as f64 - 2.8, 0.05 * (t * t) as f64 - 2.45]).collect();
        initial_proposal(&augment_positions(&pts).values, [3.0, 1.5], 20).unwrap()
    }

    #[test]
    fn timestep_rows() {
        let fine = timestep_encoding(20, 1, 16).unwrap();
        assert_eq!(fine.rows(), 20);
        assert_eq!(fine.row(4), crate::nn::sinusoid(5.0, 16).as_slice());
        let coarse = timestep_encoding(20, 10, 16).unwrap();
        assert_eq!(coarse.rows(), 2);
        assert_eq!(coarse.row(0), crate::nn::sinusoid(1.0, 16).as_slice());
        assert_eq!(coarse.row(1), crate::nn::sinusoid(11.0, 16).as_slice());
        assert!(fine.data().iter().all(|v| (-1.0..=1.0).contains(v)));
        assert!(timestep_encoding(20, 3, 16).is_err());
    }

    #[test]
    fn goal_encoder_has_192_parameters_at_width_64() {
        let m = RrnModel::new(RrnConfig::default(), 0).unwrap();
        let b = m.count_parameters();
        assert_eq!(b.goal_encoder, 192);
        assert_eq!(b.transformer_sets, 1);
        assert_eq!(b.total, m.params.scalar_count());
    }

    #[test]
    fn no_fusion_quadruples_transformer() {
        let shared = RrnModel::new(RrnConfig::default(), 0).unwrap().count_parameters();
        let separate = RrnModel::new(
            RrnConfig {
                fusion_mode: FusionMode::NoFusion,
                ..RrnConfig::default()
            },
            0,
        )
        .unwrap()
        .count_parameters();
        assert_eq!(separate.transformer, 4 * shared.transformer);
        assert_eq!(separate.transformer_sets, 4);
    }

    #[test]
    fn token_counts_per_level() {
        let m = RrnModel::new(tiny(FusionMode::WeightShared, &[10, 4, 2, 1]), 1).unwrap();
        let p = sample_proposal();
        let mut g = Graph::inference();
        let x = g.constant(m.model_state(&p.state));
        let goal = g.constant(Matrix::from_vec(1, 2, vec![3.0, 1.5]));
        let ge = m.embed_goals(&mut g, goal);
        let counts: Vec<usize> = (0..4)
            .map(|s| {
                let tokens = m.embed_inputs(&mut g, s, x, ge, 1);
                g.value(tokens).rows()
            })
            .collect();
        assert_eq!(counts, vec![2, 5, 10, 20]);
    }

    #[test]
    fn embeddings_are_additive() {
        let mut m = RrnModel::new(tiny(FusionMode::WeightShared, &[4]), 2).unwrap();
        for lin in [m.layout.trajectory_encoders[0], m.layout.goal_encoder] {
            m.params.value_mut(lin.bias).data_mut().fill(0.0);
        }
        let mut g = Graph::inference();
        let x = g.constant(Matrix::zeros(20, 4));
        let goal = g.constant(Matrix::zeros(1, 2));
        let ge = m.embed_goals(&mut g, goal);
        let tokens = m.embed_inputs(&mut g, 0, x, ge, 1);
        assert_eq!(g.value(tokens), &timestep_encoding(20, 4, 8).unwrap());

        let p = sample_proposal();
        let state = g.constant(m.model_state(&p.state));
        let mut tok = Vec::new();
        for goal in [[1.0, 2.0], [-0.5, 0.25]] {
            let gv = g.constant(Matrix::from_vec(1, 2, goal.to_vec()));
            let ge = m.embed_goals(&mut g, gv);
            let tokens = m.embed_inputs(&mut g, 0, state, ge, 1);
            tok.push(g.value(tokens).clone());
        }
        let diff0: Vec<f64> = tok[0].row(0).iter().zip(tok[1].row(0)).map(|(a, b)| a - b).collect();
        for r in 1..tok[0].rows() {
            for (c, (a, b)) in tok[0].row(r).iter().zip(tok[1].row(r)).enumerate() {
                assert!((a - b - diff0[c]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn zero_decoders_keep_proposal() {
        for mode in FusionMode::ALL {
            let mut m = RrnModel::new(tiny(mode, &[10, 4, 2, 1]), 3).unwrap();
            m.zero_decoders();
            let p = sample_proposal();
            let bundle = m.refine_all(&p, p.goal).unwrap();
            assert_eq!(bundle.final_state, p.state.values, "{mode:?}");
            assert!(bundle.deltas.iter().all(|d| d.data().iter().all(|v| *v == 0.0)));
        }
    }

    #[test]
    fn single_stage_bundle() {
        let m = RrnModel::new(tiny(FusionMode::WeightShared, &[1]), 4).unwrap();
        let p = sample_proposal();
        let b = m.refine_all(&p, p.goal).unwrap();
        assert_eq!(b.deltas.len(), 1);
        assert_eq!(b.stage_states.len(), 2);
        let mut expected = p.state.values.clone();
        expected.add_assign(&b.deltas[0]);
        assert_eq!(b.final_state, expected);
        assert_eq!(b.deltas[0].shape(), (20, 4));
        assert_eq!(b, m.refine_all(&p, p.goal).unwrap());
    }

    #[test]
    fn fusion_requires_previous_embedding() {
        let m = RrnModel::new(tiny(FusionMode::PreFusion, &[10, 1]), 5).unwrap();
        let mut g = Graph::inference();
        let x = g.constant(Matrix::zeros(20, 4));
        let goal = g.constant(Matrix::zeros(1, 2));
        let ge = m.embed_goals(&mut g, goal);
        assert!(m.rrn_step(&mut g, 0, x, ge, None, 1).is_ok());
        assert!(matches!(m.rrn_step(&mut g, 1, x, ge, None, 1), Err(Error::Usage(_))));
    }

    #[test]
    fn history_can_be_pinned() {
        let mut cfg = tiny(FusionMode::WeightShared, &[10, 4, 2, 1]);
        cfg.refine_history = false;
        let m = RrnModel::new(cfg, 6).unwrap();
        let p = sample_proposal();
        let b = m.refine_all(&p, p.goal).unwrap();
        for s in &b.stage_states {
            for r in 0..8 {
                assert_eq!(s.row(r), p.state.values.row(r));
            }
        }
        assert_ne!(b.final_state.row(12), p.state.values.row(12));
    }

    #[test]
    fn positions_only_variant() {
        let mut cfg = tiny(FusionMode::WeightShared, &[10, 4, 2, 1]);
        cfg.velocity_augmentation = false;
        let m = RrnModel::new(cfg, 7).unwrap();
        let p = sample_proposal();
        let b = m.refine_all(&p, p.goal).unwrap();
        assert_eq!(b.final_state.shape(), (20, 2));
    }

    #[test]
    fn level_order_matters() {
        let p = sample_proposal();
        let a = RrnModel::new(tiny(FusionMode::WeightShared, &[10, 4, 2, 1]), 8).unwrap();
        let b = RrnModel::new(tiny(FusionMode::WeightShared, &[1, 2, 4, 10]), 8).unwrap();
        assert_ne!(
            a.refine_all(&p, p.goal).unwrap().final_state,
            b.refine_all(&p, p.goal).unwrap().final_state
        );
    }

    #[test]
    fn invalid_levels_rejected() {
        assert!(matches!(
            RrnModel::new(tiny(FusionMode::WeightShared, &[8, 2, 1]), 0),
            Err(Error::GranularityList { .. })
        ));
        assert_eq!(FusionMode::parse("post-fusion").unwrap(), FusionMode::PostFusion);
    }
}
