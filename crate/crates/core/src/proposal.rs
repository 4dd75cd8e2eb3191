//! Initial trajectory proposal: straight-line interpolation from the last
//! observed position to a goal, at constant velocity.

use alloc::format;

use serde::{Deserialize, Serialize};

use crate::data::AugmentedState;
use crate::error::{Error, Result};
use crate::tensor::Matrix;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Proposal {
    pub state: AugmentedState,
    pub goal: [f64; 2],
}

/// Builds the `horizon × 4` proposal for one goal.
///
/// Observed rows are copied verbatim. For future frame `t` (1-based, past the
/// `T_h` observed ones) the position is `p̄ + (t − T_h)/(T − T_h) · (goal − p̄)`
/// with `p̄` the last observed position, and the velocity is the constant
/// `(goal − p̄)/(T − T_h)`. The final row holds the goal itself.
pub fn initial_proposal(history_state: &Matrix, goal: [f64; 2], horizon: usize) -> Result<Proposal> {
    let observed = history_state.rows();
    if history_state.cols() != AugmentedState::CHANNELS {
        return Err(Error::Config(format!(
            "history state must have {} channels, got {}",
            AugmentedState::CHANNELS,
            history_state.cols()
        )));
    }
    if observed == 0 || horizon <= observed {
        return Err(Error::Config(format!(
            "horizon {horizon} must exceed the {observed} observed frames"
        )));
    }
    if !history_state.is_finite() || !(goal[0].is_finite() && goal[1].is_finite()) {
        return Err(Error::Config("proposal inputs must be finite".into()));
    }
    let span = (horizon - observed) as f64;
    let last = [history_state[(observed - 1, 0)], history_state[(observed - 1, 1)]];
    let disp = [goal[0] - last[0], goal[1] - last[1]];
    let vel = [disp[0] / span, disp[1] / span];

    let mut values = Matrix::zeros(horizon, AugmentedState::CHANNELS);
    for r in 0..observed {
        values.row_mut(r).copy_from_slice(history_state.row(r));
    }
    for r in observed..horizon {
        let frac = (r + 1 - observed) as f64 / span;
        values.row_mut(r).copy_from_slice(&[
            last[0] + frac * disp[0],
            last[1] + frac * disp[1],
            vel[0],
            vel[1],
        ]);
    }
    values[(horizon - 1, 0)] = goal[0];
    values[(horizon - 1, 1)] = goal[1];
    Ok(Proposal {
        state: AugmentedState { values },
        goal,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::augment_positions;
    use alloc::vec::Vec;

    fn still_history(p: [f64; 2]) -> Matrix {
        augment_positions(&[p; 8]).values
    }

    #[test]
    fn unit_step_example() {
        let p = initial_proposal(&still_history([0.0, 0.0]), [12.0, 0.0], 20).unwrap();
        assert_eq!(p.state.position(8), [1.0, 0.0]);
        assert_eq!(p.state.position(19), [12.0, 0.0]);
        assert!((8..20).all(|t| p.state.velocity(t) == [1.0, 0.0]));
    }

    #[test]
    fn zero_displacement() {
        let p = initial_proposal(&still_history([4.0, -1.0]), [4.0, -1.0], 20).unwrap();
        assert!((8..20).all(|t| p.state.position(t) == [4.0, -1.0] && p.state.velocity(t) == [0.0, 0.0]));
    }

    #[test]
    fn midpoint_example() {
        let p = initial_proposal(&still_history([2.0, 2.0]), [2.0, 14.0], 20).unwrap();
        // frame 14 (1-based) is row 13
        assert_eq!(p.state.position(13), [2.0, 8.0]);
    }

    #[test]
    fn history_copied_and_goal_exact() {
        let pts: Vec<[f64; 2]> = (0..8).map(|t| [0.3 * t as f64, 0.1 * (t * t) as f64]).collect();
        let h = augment_positions(&pts).values;
        let goal = [1.0 / 3.0, -7.0 / 11.0];
        let p = initial_proposal(&h, goal, 20).unwrap();
        for r in 0..8 {
            assert_eq!(p.state.values.row(r), h.row(r));
        }
        assert_eq!(p.state.position(19), goal);
    }

    #[test]
    fn bad_horizon() {
        assert!(matches!(initial_proposal(&still_history([0.0, 0.0]), [1.0, 1.0], 8), Err(Error::Config(_))));
    }
}
