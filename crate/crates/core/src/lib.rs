//! Fairness-aware single-tower news ranking.

pub mod autodiff;
pub mod data;
pub mod error;
pub mod evaluation;
pub mod model;
pub mod training;

pub use error::{Error, Result};
