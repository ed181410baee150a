//! Audio-visual saliency prediction with dual domain-adversarial training.
//!
//! The crate is self-contained: a small reverse-mode autodiff engine
//! ([`autodiff`]), the two-branch saliency network with cross-modal
//! attention fusion and two gradient-reversal domain discriminators
//! ([`model`]), the training objectives ([`losses`]), Adam training with
//! domain-adaptation ablations ([`train`]), the standard saliency metrics
//! ([`metrics`]) and a synthetic cross-domain clip generator ([`data`]).

pub mod autodiff;
pub mod data;
pub mod error;
pub mod experiment;
pub mod gradcheck;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod tensor;
pub mod train;

pub use autodiff::{Graph, Padding, Var};
pub use error::{Error, Result};
pub use tensor::{Real, Tensor};
