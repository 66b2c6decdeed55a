//! Numerical laboratory for in-context sequential prediction on linear
//! Gaussian state-space task families.
//!
//! The crate bundles exact references (Kalman filter, importance-sampled
//! Bayes predictor, HMM forward algorithm), trainable predictors with exact
//! reverse-mode gradients (selective SSM, non-selective ablation, linear and
//! softmax attention), a meta-training loop, and the experiment drivers that
//! compare them.
// `!(x > 0.0)`-style guards are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod harness;
pub mod lgssm;
pub mod models;
pub mod numerics;
pub mod oracle;
pub mod par;
pub mod tasks;
pub mod training;

pub use error::{Error, Result};
