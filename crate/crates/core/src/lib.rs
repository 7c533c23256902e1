//! Source-invariant feature learning with adversarial penalization.
//!
//! A small convolutional feature extractor feeds two heads: a disease
//! classifier and a source discriminator. Training pits the extractor
//! against the discriminator, either through a gradient-reversal node or by
//! alternating frozen updates, so the learned features stop encoding which
//! source an image came from. The [`datapipe`] module generates multi-source
//! image sets with planted spurious cues, [`training`] runs the
//! leave-one-source-out protocol, [`eval`] scores it with AUC-ROC, and
//! [`attribution`] produces Grad-CAM heatmaps.

pub mod attribution;
pub mod autodiff;
pub mod cli;
pub mod datapipe;
pub mod error;
pub mod eval;
pub mod model;
pub mod objectives;
pub mod training;

pub use autodiff::{Graph, Tensor, Var};
pub use error::{Error, Result};
