//! Residual-fusion long-tailed classification lab.
//!
//! A desk-scale training stack for studying parameter-space re-balancing on
//! class-imbalanced data: a minimal reverse-mode autodiff engine over dense
//! `f64` matrices, long-tailed dataset construction, a multi-branch model
//! head with a shared classifier and residual logit fusion, the nested
//! branch losses that train it, and the trainer/evaluation machinery needed
//! to run paired-seed experiments.

pub mod data;
pub mod error;
pub mod gradcheck;
pub mod loss;
pub mod model;
pub mod report;
pub mod rng;
pub mod schedule;
pub mod tape;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
pub use tensor::{Parameter, Tensor2D};
