//! Gesture generation lab: a desk-scale pipeline for studying how the
//! dimensionality of the pose representation (2D vs 3D) affects audio-driven
//! gesture synthesis.
//!
//! The crate provides:
//!
//! - a directional-vector pose model over a 10-joint upper body ([`pose`],
//!   [`skeleton`]),
//! - a small differentiable-compute core with hand-written backward passes
//!   ([`tensor`], [`nn`], [`optim`], [`gradcheck`]),
//! - audio ingestion, conditioning features and onset-based beat detection
//!   ([`audio`]),
//! - a synthetic paired audio–gesture corpus with known beat structure
//!   ([`dataset`]),
//! - two gesture generators (a DDPM with classifier-free guidance in
//!   [`diffusion`], a bi-directional GRU decoder in [`recurrent`]),
//! - a dilated temporal-convolution 2D→3D lifter ([`lifter`]),
//! - the evaluation metric suite: Fréchet gesture distance, beat consistency
//!   and diversity over learned features ([`metrics`], [`linalg`]),
//! - experiment orchestration and report emission ([`harness`]).
//!
//! Everything is seeded and deterministic: identical seeds produce
//! byte-identical datasets, model bundles and reports.

pub mod audio;
pub mod bundle;
pub mod dataset;
pub mod diffusion;
pub mod error;
pub mod gradcheck;
pub mod harness;
pub mod lifter;
pub mod linalg;
pub mod metrics;
pub mod nn;
pub mod optim;
pub mod pose;
pub mod recurrent;
pub mod rng;
pub mod skeleton;
pub mod tensor;

pub use error::{Error, Result};
