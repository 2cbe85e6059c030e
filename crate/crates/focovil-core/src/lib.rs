//! Multi-view skeleton sequence representation learning.
//!
//! The crate covers the full pipeline:
//!
//! * [`skeleton`] — skeleton sequence data model, coordinate normalization,
//!   linear resampling, and rigid view alignment built from four body
//!   landmarks (root, spine, left hip, right hip).
//! * [`synth`] — deterministic synthetic multi-view corpus generator
//!   (class-specific sinusoidal joint motion, per-view rotation/offset, and
//!   per-view occlusion noise).
//! * [`autodiff`] — dense tensors and a reverse-mode differentiation tape
//!   with gradient checking against central differences.
//! * [`model`] — shared bidirectional GRU encoder, projection head, and
//!   zero-input GRU decoder.
//! * [`losses`] — multi-view contrastive loss, its focalized variant with
//!   self-paced positive/negative weights, and sequence reconstruction loss.
//! * [`training`] — Adam, minibatch assembly, the training loop, and the
//!   ablation runner.
//! * [`evaluation`] — embedding extraction, 1-NN and linear-probe
//!   classification, k-means++ and diagonal-covariance GMM clustering,
//!   purity, adjusted Rand index, and confusion matrices.
//!
//! The crate is `no_std`-compatible (`alloc` required): disable the default
//! `std` feature and enable `libm` to supply transcendental float functions.
//! All randomness flows through seeded ChaCha8 streams, so every pipeline
//! stage is bit-for-bit reproducible for a fixed configuration.

#![cfg_attr(not(feature = "std"), no_std)]
#![forbid(unsafe_code)]

extern crate alloc;

#[cfg(all(not(feature = "std"), not(feature = "libm")))]
compile_error!("focovil-core needs either the `std` feature or the `libm` feature");

pub mod autodiff;
pub mod error;
pub mod evaluation;
pub mod losses;
pub(crate) mod math;
pub mod model;
pub mod rng;
pub mod skeleton;
pub mod synth;
pub mod training;

pub use error::{Error, Result};
