//! Texture-centric image classification in low data regimes with
//! shared-weight local/global self-distillation.
//!
//! A full image (global view) and a random square crop of it (local view)
//! pass through one network. The global logits train against the ground
//! truth and also provide a hard teacher label for the local logits; a focal
//! loss replaces cross-entropy for that distillation term when each class has
//! only a handful of training images.

pub mod backbone;
pub mod data_manifest;
pub mod error;
pub mod experiment;
pub mod image_pipeline;
pub mod nn;
pub mod objectives;
pub mod rng;
pub mod trainer;

pub use error::{Error, Result};
