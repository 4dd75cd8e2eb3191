//! Goal-guided multi-granularity trajectory prediction.
//!
//! A causal-transformer goal predictor proposes `N` endpoints per agent; each
//! endpoint yields a straight-line proposal over the full horizon, which a
//! stack of recursive refinement networks corrects coarse-to-fine, one
//! granularity level per stage. Everything here is `no_std` + `alloc`; file
//! IO, configuration and the command line live in the `mgtraj` crate.

#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod autodiff;
pub mod data;
pub mod error;
pub mod goal;
pub mod granularity;
pub mod metrics;
pub mod nn;
pub mod params;
pub mod proposal;
pub mod rrn;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use tensor::Matrix;
