//! Test-time adversarial correction in embedding space.
//!
//! The crate bundles a small differentiable image-encoder stack, a cosine
//! zero-shot head, image augmentations with exact VJPs, the drift-consistency
//! correction and its baselines, a family of L-infinity attacks, and an
//! evaluation harness over a synthetic task.

pub mod atac;
pub mod attacks;
pub mod augment;
pub mod baselines;
pub mod config;
pub mod data;
pub mod embedding;
pub mod encoder;
pub mod error;
pub mod eval;
pub mod head;
pub mod image;
pub mod imgio;
pub mod report;
pub mod rng;
pub mod store;
pub mod structured;

pub use error::{Error, Result};
pub use image::ImageTensor;
