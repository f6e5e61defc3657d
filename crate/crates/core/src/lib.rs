//! Semi-supervised classification by conditional rotation angle estimation.
//!
//! The crate bundles a small reverse-mode differentiation engine, a
//! rotation-sensitive synthetic glyph benchmark, an MLP with one rotation
//! head per class, the training objectives for the conditional method and
//! its baselines, evaluation diagnostics and an experiment runner.

pub mod autodiff;
pub mod data;
pub mod diagnostics;
pub mod error;
pub mod experiment;
pub mod methods;
pub mod model;
pub mod rng;

pub use error::{Error, Result};
