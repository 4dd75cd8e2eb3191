#![allow(dead_code)]

use mgtraj_core::data::{augment_velocity, synthesize_mixed};
use mgtraj_core::goal::GoalSet;
use mgtraj_core::granularity::GranularityList;
use mgtraj_core::proposal::initial_proposal;
use mgtraj_core::rrn::{FusionMode, RrnConfig};
use mgtraj_core::train::PreparedSample;
use mgtraj_core::Matrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn tiny_config(fusion_mode: FusionMode, gl: &[usize]) -> RrnConfig {
    RrnConfig {
        embed_dim: 8,
        heads: 2,
        ff_dim: 16,
        gl: GranularityList(gl.to_vec()),
        fusion_mode,
        ..RrnConfig::default()
    }
}

/// Synthetic windows with goals scattered around the true endpoint.
pub fn samples(windows: usize, modes: usize, seed: u64) -> Vec<PreparedSample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    synthesize_mixed(windows, seed)
        .unwrap()
        .iter()
        .map(|w| {
            let (norm, origin) = w.normalized();
            let gt = augment_velocity(&norm);
            let end = *norm.future.last().unwrap();
            let goals: Vec<[f64; 2]> = (0..modes)
                .map(|_| [end[0] + rng.gen_range(-1.0..1.0), end[1] + rng.gen_range(-1.0..1.0)])
                .collect();
            let h = norm.history.len();
            let hist = Matrix::from_vec(h, 4, gt.values.data()[..h * 4].to_vec());
            let proposals = goals
                .iter()
                .map(|g| initial_proposal(&hist, *g, gt.horizon()).unwrap().state.values)
                .collect();
            PreparedSample {
                origin,
                ground_truth: gt,
                goals: GoalSet { goals },
                proposals,
            }
        })
        .collect()
}

/// Norm-wise relative error `‖a − b‖ / max(‖a‖, ‖b‖, floor)`. The floor keeps
/// identically-zero gradients (e.g. attention key biases, which softmax
/// cancels) from dividing finite-difference noise by zero.
pub fn relative_error(a: &[f64], b: &[f64], floor: f64) -> f64 {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    diff / norm(a).max(norm(b)).max(floor)
}
