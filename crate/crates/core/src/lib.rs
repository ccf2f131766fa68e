//! Temporal positive-pair mining for camera-trap footage, self-supervised
//! and supervised embedding objectives with analytic gradients, a small
//! trainable encoder on synthetic identities, and retrieval/downstream
//! evaluation metrics.

pub mod cli;
pub mod embedding;
pub mod error;
pub mod evalkit;
pub mod experiment;
pub mod losszoo;
pub mod matrix;
pub mod microtrain;
pub mod par;
pub mod trapstream;

pub use error::{Error, Result};
pub use matrix::Matrix;
