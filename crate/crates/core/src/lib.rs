//! Sensitivity attribution for multi-modal trajectory predictors.

// `!(x > 0.0)` style checks are used on purpose so NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod attribution;
pub mod autodiff;
pub mod error;
pub mod perturb;
pub mod planner;
pub mod predictor;
pub mod ranges;
pub mod report;
pub mod scenario;
pub mod scene_io;
pub mod seeding;
pub mod stats;
pub mod types;

pub use error::{Error, Result};
