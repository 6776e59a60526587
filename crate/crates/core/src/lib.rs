//! Adversarial autoencoders whose prior is learned by a code-generator network.
//!
//! A code generator maps Gaussian noise (optionally concatenated with a one-hot
//! category) to latent codes. It is trained through the decoder against an image
//! discriminator, while the autoencoder is regularized toward the generated codes
//! by a code discriminator. Training alternates the two phases per mini-batch.

pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod data;
pub mod error;
pub mod evaluation;
pub mod model;
pub mod networks;
pub mod objectives;
pub mod optim;
pub mod rng;
pub mod sampling;
pub mod training;

pub use config::{Conditioning, TrainingConfig};
pub use error::{Error, Result};
pub use model::Model;
