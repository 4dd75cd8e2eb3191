//! Conversion between the finest `T × C` state and granularity-`l` views.
//!
//! A level `l` is a segment LENGTH: the view has `T / l` rows, row `s` holding
//! frames `s·l .. (s+1)·l` flattened frame-major (all channels of the first
//! frame, then the next frame). Because states are row-major this is a pure
//! reinterpretation of the same buffer.

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Matrix;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GranularView {
    pub level: usize,
    pub horizon: usize,
    pub data: Matrix,
}

impl GranularView {
    pub fn segments(&self) -> usize {
        self.data.rows()
    }
}

/// Ordered granularity levels, applied first to last.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct GranularityList(pub Vec<usize>);

impl GranularityList {
    pub fn paper_default() -> Self {
        Self(vec![10, 4, 2, 1])
    }

    pub fn levels(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

fn check_level(level: usize, horizon: usize) -> Result<()> {
    if level == 0 || !horizon.is_multiple_of(level) {
        return Err(Error::Granularity { level, horizon });
    }
    Ok(())
}

pub fn to_granularity(state: &Matrix, level: usize) -> Result<GranularView> {
    let horizon = state.rows();
    check_level(level, horizon)?;
    let channels = state.cols();
    Ok(GranularView {
        level,
        horizon,
        data: state.clone().reshaped(horizon / level, channels * level),
    })
}

pub fn from_granularity(view: &GranularView) -> Result<Matrix> {
    let GranularView { level, horizon, data } = view;
    check_level(*level, *horizon)?;
    if data.rows() * level != *horizon || data.cols() % level != 0 {
        return Err(Error::GranularityShape(alloc::format!(
            "{}x{} data is not a level-{level} view of a {horizon}-frame state",
            data.rows(),
            data.cols()
        )));
    }
    Ok(data.clone().reshaped(*horizon, data.cols() / level))
}

/// Any order and repeats are accepted; every level must divide `horizon`.
pub fn validate_gl(gl: &GranularityList, horizon: usize) -> Result<()> {
    if gl.is_empty() {
        return Err(Error::Config("granularity list is empty".into()));
    }
    let mut offending: Vec<usize> = gl
        .levels()
        .iter()
        .copied()
        .filter(|&l| l == 0 || !horizon.is_multiple_of(l))
        .collect();
    offending.dedup();
    if offending.is_empty() {
        Ok(())
    } else {
        Err(Error::GranularityList { offending, horizon })
    }
}
