//! Few-shot unsupervised image-to-image translation.
//!
//! The crate bundles a two-encoder generator with an AdaIN decoder and a
//! class-conditional discriminator ([`model`]), the adversarial training
//! objective with RMSProp updates and checkpointing ([`objective`]),
//! detection-driven dataset curation ([`dataset`]), two instance-aware
//! translation variants ([`variants`]) and LPIPS / Inception Score
//! evaluation ([`evaluation`]). The [`cli`] module backs the `funit` binary.

pub mod cli;
pub mod dataset;
pub mod error;
pub mod evaluation;
pub mod imaging;
pub mod model;
pub mod nn;
pub mod objective;
pub mod synthetic;
pub mod variants;

pub use error::{Error, Result};
pub use imaging::{ImageTensor, PixelRect};
