//! Desk-scale engine for 3-D multi-label cardiac segmentation experiments.
//!
//! The crate is self-contained: a dense tensor type with reverse-mode
//! autodiff ([`tensor`]), the neural building blocks and full models
//! ([`nn`], [`models`]), the training loop with loss/optimizer/schedule
//! and augmentation ([`training`]), volumetric evaluation metrics and
//! post-processing ([`metrics`]), and a deterministic synthetic phantom
//! dataset generator ([`phantom`]).
//!
//! Everything runs on CPU. Heavy kernels fan out over rayon when the
//! `parallel` feature (default) is enabled; the sequential fallback uses
//! the same chunked loops and produces bit-identical results.

pub mod checks;
pub mod error;
pub mod exec;
pub mod metrics;
pub mod models;
pub mod nn;
pub mod phantom;
pub mod resample;
pub mod tensor;
pub mod training;
pub mod volume;

pub use error::{Error, Result};
pub use tensor::Tensor;
