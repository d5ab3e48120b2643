//! Exemplar-guided face editing by region inpainting.
//!
//! This crate holds the allocation-only core: tensors and a reverse-mode
//! autograd tape, the exemplar encoder with attribute-block filtering, the
//! inpainting generator, the discriminator and attribute classifier, every
//! training objective, the training step, and the synthetic face generator
//! used for desk-scale verification. It has no I/O and builds with
//! `default-features = false` for `no_std` targets.
#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod adversary;
pub mod data;
pub mod edit;
pub mod error;
pub mod eval;
pub mod generator;
pub mod graph;
pub mod kernels;
pub mod latent;
pub mod losses;
pub mod model;
pub mod nn;
pub mod synth;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use losses::{LossReport, LossWeights, Variant};
pub use model::{ArchConfig, ModelBundle};
pub use tensor::{Real, Tensor};
pub use train::{StepOptions, Trainer};
