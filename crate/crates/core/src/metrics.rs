//! Best-of-N displacement metrics and dataset evaluation.

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::data::{TrajectoryWindow, Unit};
use crate::error::{Error, Result};
use crate::goal::GoalPredictor;
use crate::rrn::RrnModel;
use crate::train::{prepare_samples, stack};
use crate::autodiff::Graph;
use crate::rrn::RefineInput;

fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    libm::hypot(a[0] - b[0], a[1] - b[1])
}

/// Mean Euclidean distance over frames.
pub fn ade(pred: &[[f64; 2]], gt: &[[f64; 2]]) -> f64 {
    assert_eq!(pred.len(), gt.len(), "ade: length mismatch");
    assert!(!gt.is_empty(), "ade: empty trajectory");
    pred.iter().zip(gt).map(|(p, g)| dist(*p, *g)).sum::<f64>() / gt.len() as f64
}

/// Euclidean distance at the last frame.
pub fn fde(pred: &[[f64; 2]], gt: &[[f64; 2]]) -> f64 {
    assert_eq!(pred.len(), gt.len(), "fde: length mismatch");
    dist(*pred.last().expect("fde: empty trajectory"), *gt.last().unwrap())
}

/// `(min ADE, min FDE)` over modes; the two minima are taken independently.
pub fn best_of_n(preds: &[Vec<[f64; 2]>], gt: &[[f64; 2]]) -> Result<(f64, f64)> {
    if preds.is_empty() {
        return Err(Error::Config("best-of-N needs at least one mode".into()));
    }
    Ok(preds.iter().fold((f64::INFINITY, f64::INFINITY), |(a, f), p| {
        (a.min(ade(p, gt)), f.min(fde(p, gt)))
    }))
}

/// Multi-modal future predictions of one window in scene coordinates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Forecast {
    pub goals: Vec<[f64; 2]>,
    /// `stages[s][mode]` is the future after `s` refinements; `stages[0]` is
    /// the initial proposal, the last entry the final prediction.
    pub stages: Vec<Vec<Vec<[f64; 2]>>>,
}

impl Forecast {
    pub fn final_modes(&self) -> &[Vec<[f64; 2]>] {
        self.stages.last().expect("forecast without stages")
    }
}

/// Anything producing multi-modal future trajectories for windows.
pub trait Forecaster {
    fn forecast(&self, windows: &[TrajectoryWindow]) -> Result<Vec<Forecast>>;
}

/// Goal predictor plus RRN stack, with the unit the model was trained in.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Pipeline {
    pub goal: GoalPredictor,
    pub rrn: RrnModel,
    pub unit: Unit,
}

const EVAL_CHUNK: usize = 32;

impl Forecaster for Pipeline {
    fn forecast(&self, windows: &[TrajectoryWindow]) -> Result<Vec<Forecast>> {
        let cfg = &self.rrn.config;
        let (t, h, c) = (cfg.horizon, cfg.history_len, cfg.channels());
        if let Some(w) = windows.iter().find(|w| w.history.len() != h || w.horizon() != t) {
            return Err(Error::Config(alloc::format!(
                "window of agent {} has {}+{} frames, model expects {h}+{}",
                w.agent_id,
                w.history.len(),
                w.future.len(),
                t - h
            )));
        }
        let mut out = Vec::with_capacity(windows.len());
        for chunk in windows.chunks(EVAL_CHUNK) {
            let samples = prepare_samples(&self.goal, chunk, h)?;
            let modes = self.goal.config.modes;
            let pairs: Vec<_> = (0..samples.len()).flat_map(|s| (0..modes).map(move |m| (s, m))).collect();
            let batch = stack(&samples, &pairs, c);
            let mut g = Graph::inference();
            let vars = self.rrn.refine_vars(
                &mut g,
                &RefineInput {
                    proposals: &batch.proposals,
                    goals: &batch.goals,
                    batch: batch.len,
                },
            )?;
            for (si, s) in samples.iter().enumerate() {
                let o = s.origin;
                let stages = vars
                    .stage_states
                    .iter()
                    .map(|v| {
                        let x = g.value(*v);
                        (0..modes)
                            .map(|m| {
                                let base = (si * modes + m) * t;
                                (h..t).map(|r| [x[(base + r, 0)] + o[0], x[(base + r, 1)] + o[1]]).collect()
                            })
                            .collect()
                    })
                    .collect();
                out.push(Forecast {
                    goals: s.goals.denormalized(o),
                    stages,
                });
            }
        }
        Ok(out)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub ade: f64,
    pub fde: f64,
    /// Best-of-N ADE after the proposal and after each refinement stage.
    pub per_stage_ade: Vec<f64>,
    pub samples: usize,
}

/// Dataset-mean best-of-N metrics from precomputed forecasts.
pub fn report_from_forecasts(forecasts: &[Forecast], windows: &[TrajectoryWindow]) -> Result<MetricReport> {
    if windows.is_empty() {
        return Err(Error::Config("evaluation set is empty".into()));
    }
    if forecasts.len() != windows.len() {
        return Err(Error::Config("forecast count does not match window count".into()));
    }
    let stages = forecasts[0].stages.len();
    let mut per_stage = alloc::vec![0.0; stages];
    let (mut ade_sum, mut fde_sum) = (0.0, 0.0);
    for (f, w) in forecasts.iter().zip(windows) {
        if f.stages.len() != stages {
            return Err(Error::Config("forecasts disagree on stage count".into()));
        }
        let (a, d) = best_of_n(f.final_modes(), &w.future)?;
        ade_sum += a;
        fde_sum += d;
        for (acc, modes) in per_stage.iter_mut().zip(&f.stages) {
            *acc += best_of_n(modes, &w.future)?.0;
        }
    }
    let n = windows.len() as f64;
    Ok(MetricReport {
        ade: ade_sum / n,
        fde: fde_sum / n,
        per_stage_ade: per_stage.into_iter().map(|s| s / n).collect(),
        samples: windows.len(),
    })
}

pub fn evaluate(model: &impl Forecaster, test_set: &[TrajectoryWindow]) -> Result<MetricReport> {
    if test_set.is_empty() {
        return Err(Error::Config("evaluation set is empty".into()));
    }
    report_from_forecasts(&model.forecast(test_set)?, test_set)
}

/// Like [`evaluate`], but refuses data recorded in a different unit.
pub fn evaluate_pipeline(model: &Pipeline, test_set: &[TrajectoryWindow], data_unit: Unit) -> Result<MetricReport> {
    if data_unit != model.unit {
        return Err(Error::Config(alloc::format!(
            "model was trained on {:?} data but the test set is in {:?}",
            model.unit, data_unit
        )));
    }
    evaluate(model, test_set)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn ade_fde_examples() {
        let gt: Vec<[f64; 2]> = (0..12).map(|t| [t as f64, 0.5 * t as f64]).collect();
        assert_eq!(ade(&gt, &gt), 0.0);
        assert_eq!(fde(&gt, &gt), 0.0);
        let off: Vec<_> = gt.iter().map(|p| [p[0] + 3.0, p[1] + 4.0]).collect();
        assert_eq!(ade(&off, &gt), 5.0);
        assert_eq!(fde(&off, &gt), 5.0);
        let mut one = gt.clone();
        one[3][0] += 1.0;
        assert_eq!(ade(&one, &gt), 1.0 / 12.0);
        let mut last = gt.clone();
        last[11][1] += 2.0;
        last[0][0] += 7.0;
        assert_eq!(fde(&last, &gt), 2.0);
    }

    #[test]
    fn best_of_n_basics() {
        let gt: Vec<[f64; 2]> = (0..12).map(|t| [t as f64, 0.0]).collect();
        let off: Vec<_> = gt.iter().map(|p| [p[0] + 3.0, p[1] + 4.0]).collect();
        assert_eq!(best_of_n(&[off.clone()], &gt).unwrap(), (5.0, 5.0));
        assert_eq!(best_of_n(&[off, gt.clone()], &gt).unwrap(), (0.0, 0.0));
        assert!(best_of_n(&[], &gt).is_err());
    }

    #[test]
    fn independent_minima() {
        let gt = vec![[0.0, 0.0], [0.0, 0.0]];
        // mode a: good average, bad end; mode b: bad average, perfect end
        let a = vec![[0.0, 0.0], [1.0, 0.0]];
        let b = vec![[3.0, 0.0], [0.0, 0.0]];
        assert_eq!(best_of_n(&[a, b], &gt).unwrap(), (0.5, 0.0));
    }

    struct Oracle;

    impl Forecaster for Oracle {
        fn forecast(&self, windows: &[TrajectoryWindow]) -> Result<Vec<Forecast>> {
            Ok(windows
                .iter()
                .map(|w| Forecast {
                    goals: vec![*w.future.last().unwrap()],
                    stages: vec![vec![w.future.clone()]; 3],
                })
                .collect())
        }
    }

    #[test]
    fn oracle_scores_zero() {
        let ws = crate::data::synthesize(crate::data::SyntheticKind::Sine, 5, 1).unwrap();
        let r = evaluate(&Oracle, &ws).unwrap();
        assert_eq!((r.ade, r.fde), (0.0, 0.0));
        assert_eq!(r.per_stage_ade, vec![0.0; 3]);
        assert!(evaluate(&Oracle, &[]).is_err());
    }
}
