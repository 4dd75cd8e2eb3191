mod common;

use common::tiny_config;
use mgtraj_core::data::{augment_velocity, downsample, extract_windows, RawScene, Record, TrajectoryWindow, Unit};
use mgtraj_core::metrics::{ade, best_of_n, fde};
use mgtraj_core::proposal::initial_proposal;
use mgtraj_core::rrn::{FusionMode, RrnModel};
use mgtraj_core::train::{cosine_lr, multimodal_loss, reduction_weights, total_loss, ModalReduction};
use mgtraj_core::Matrix;
use proptest::prelude::*;

fn point() -> impl Strategy<Value = [f64; 2]> {
    (-50.0..50.0f64, -50.0..50.0f64).prop_map(|(x, y)| [x, y])
}

fn path(len: usize) -> impl Strategy<Value = Vec<[f64; 2]>> {
    prop::collection::vec(point(), len)
}

fn window(points: Vec<[f64; 2]>) -> TrajectoryWindow {
    TrajectoryWindow {
        history: points[..8].to_vec(),
        future: points[8..].to_vec(),
        delta_t: 0.4,
        scene_id: "p".into(),
        agent_id: 0,
        start_frame: 0,
    }
}

/// Sorted distinct frame indices for one agent, possibly with gaps.
fn frames() -> impl Strategy<Value = Vec<i64>> {
    prop::collection::btree_set(0i64..120, 0..80).prop_map(|s| s.into_iter().collect())
}

fn runs(frames: &[i64]) -> Vec<usize> {
    let mut out = Vec::new();
    let mut len = 0;
    for (i, f) in frames.iter().enumerate() {
        if i > 0 && *f == frames[i - 1] + 1 {
            len += 1;
        } else {
            if len > 0 {
                out.push(len);
            }
            len = 1;
        }
    }
    if len > 0 {
        out.push(len);
    }
    out
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn velocity_cumsum_reconstructs_positions(points in path(20)) {
        let state = augment_velocity(&window(points.clone()));
        let mut p = points[0];
        for (t, expected) in points.iter().enumerate() {
            if t > 0 {
                let v = state.velocity(t);
                p = [p[0] + v[0], p[1] + v[1]];
            }
            prop_assert!((p[0] - expected[0]).abs() <= 1e-9 && (p[1] - expected[1]).abs() <= 1e-9);
        }
        prop_assert_eq!(state.velocity(0), state.velocity(1));
    }

    #[test]
    fn window_count_matches_formula(a in frames(), b in frames(), stride in 1usize..4) {
        let mut records = Vec::new();
        for (agent, fs) in [(1i64, &a), (2, &b)] {
            for &f in fs.iter() {
                records.push(Record { frame: f, agent, position: [f as f64, agent as f64] });
            }
        }
        let scene = RawScene::new("s", records, Unit::Meters, 2.5).unwrap();
        let windows = extract_windows(&scene, 8, 12, stride).unwrap();
        let expected: usize = runs(&a)
            .into_iter()
            .chain(runs(&b))
            .map(|len| (len + stride).saturating_sub(20) / stride)
            .sum();
        prop_assert_eq!(windows.len(), expected);
        for w in &windows {
            let xs: Vec<f64> = w.positions().map(|p| p[0]).collect();
            prop_assert!(xs.windows(2).all(|s| s[1] == s[0] + 1.0));
        }
    }

    #[test]
    fn downsample_preserves_agent_order(a in frames(), k in 1usize..5) {
        let records = a.iter().map(|&f| Record { frame: f, agent: 3, position: [f as f64, 0.0] }).collect();
        let scene = RawScene::new("s", records, Unit::Meters, 2.5 * k as f64).unwrap();
        let down = downsample(&scene, 2.5).unwrap();
        let xs: Vec<f64> = down.records().iter().map(|r| r.position[0]).collect();
        prop_assert!(xs.windows(2).all(|s| s[0] < s[1]));
        prop_assert_eq!(xs.len(), a.iter().filter(|&&f| f % k as i64 == 0).count());
    }

    #[test]
    fn best_of_n_is_monotone_when_appending_modes(
        modes in prop::collection::vec(path(12), 1..20),
        extra in path(12),
        gt in path(12),
    ) {
        let (a1, f1) = best_of_n(&modes, &gt).unwrap();
        let mut more = modes.clone();
        more.push(extra);
        let (a2, f2) = best_of_n(&more, &gt).unwrap();
        prop_assert!(a2 <= a1 && f2 <= f1);
        let brute_a = modes.iter().map(|m| ade(m, &gt)).fold(f64::INFINITY, f64::min);
        let brute_f = modes.iter().map(|m| fde(m, &gt)).fold(f64::INFINITY, f64::min);
        prop_assert_eq!((a1, f1), (brute_a, brute_f));
    }

    #[test]
    fn metrics_are_translation_invariant(pred in path(12), gt in path(12), shift in point()) {
        let mv = |v: &[[f64; 2]]| v.iter().map(|p| [p[0] + shift[0], p[1] + shift[1]]).collect::<Vec<_>>();
        let tol = 1e-12 * 200.0;
        prop_assert!((ade(&mv(&pred), &mv(&gt)) - ade(&pred, &gt)).abs() <= tol);
        prop_assert!((fde(&mv(&pred), &mv(&gt)) - fde(&pred, &gt)).abs() <= tol);
    }

    #[test]
    fn proposal_shape_and_constant_velocity(hist in path(8), goal in point()) {
        let state = mgtraj_core::data::augment_positions(&hist).values;
        let p = initial_proposal(&state, goal, 20).unwrap();
        let v = &p.state.values;
        for r in 0..8 {
            prop_assert_eq!(v.row(r), state.row(r));
        }
        prop_assert_eq!(p.state.position(19), goal);
        let vel = p.state.velocity(8);
        for t in 8..20 {
            prop_assert_eq!(p.state.velocity(t), vel);
        }
        let scale = goal.iter().chain(&hist[7]).fold(1.0f64, |m, x| m.max(x.abs()));
        for t in 9..20 {
            for c in 0..2 {
                let step = p.state.position(t)[c] - p.state.position(t - 1)[c];
                prop_assert!((step - vel[c]).abs() <= 1e-13 * scale);
            }
        }
    }

    #[test]
    fn cosine_lr_stays_in_range_and_decreases(total in 1usize..500, lr_min in 0.0..1e-3f64, extra in 0.0..1e-2f64) {
        let lr_init = lr_min + extra;
        let mut prev = f64::INFINITY;
        for step in 0..=total {
            let lr = cosine_lr(step, total, lr_init, lr_min);
            prop_assert!(lr >= lr_min - 1e-18 && lr <= lr_init + 1e-18 && lr <= prev);
            prev = lr;
        }
    }

    #[test]
    fn loss_combination_rules(lp in 0.0..10.0f64, lv in 0.0..10.0f64, per_mode in prop::collection::vec(0.0..10.0f64, 1..20)) {
        prop_assert_eq!(total_loss(lp, lv, 0.0), lp);
        let wta = multimodal_loss(&per_mode, ModalReduction::WinnerTakesAll).unwrap();
        prop_assert_eq!(wta, per_mode.iter().cloned().fold(f64::INFINITY, f64::min));
        let (weights, winners) = reduction_weights(&per_mode, per_mode.len(), ModalReduction::WinnerTakesAll);
        prop_assert_eq!(per_mode[winners[0]], wta);
        prop_assert_eq!(weights[winners[0]], 1.0);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn refinement_accumulates_deltas(seed in any::<u64>(), hist in path(8), goal in point(), mode_idx in 0usize..4) {
        let mode = FusionMode::ALL[mode_idx];
        let model = RrnModel::new(tiny_config(mode, &[10, 4, 2, 1]), seed).unwrap();
        let state = mgtraj_core::data::augment_positions(&hist).values;
        let proposal = initial_proposal(&state, goal, 20).unwrap();
        let bundle = model.refine_all(&proposal, goal).unwrap();
        let mut acc: Matrix = proposal.state.values.clone();
        prop_assert_eq!(bundle.deltas.len(), 4);
        prop_assert_eq!(&bundle.stage_states[0], &proposal.state.values);
        for (delta, stage) in bundle.deltas.iter().zip(&bundle.stage_states[1..]) {
            acc.add_assign(delta);
            prop_assert_eq!(&acc, stage);
        }
        prop_assert_eq!(&acc, &bundle.final_state);

        let mut zeroed = model.clone();
        zeroed.zero_decoders();
        prop_assert_eq!(zeroed.refine_all(&proposal, goal).unwrap().final_state, proposal.state.values);
    }
}
