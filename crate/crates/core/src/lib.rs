//! Contextual column embeddings for tabular binary classification.
//!
//! The crate is self-contained: a small dense-tensor autodiff engine, column
//! embedding + self-attention models, supervised and self-supervised
//! training loops, semi-supervised wrappers, and evaluation utilities
//! (ranking AUC, linear probes, corruption robustness, embedding export).

pub mod data;
pub mod eval;
pub mod model;
pub mod params;
pub mod pretrain;
pub mod train;
pub mod rng;
pub mod synth;
pub mod tensor;

pub use params::ParamStore;
pub use tensor::{Scalar, Tensor, TensorError};
