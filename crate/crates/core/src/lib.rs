//! A desk-scale laboratory for visual question answering models.
//!
//! Three answer mechanisms share one autodiff core and one synthetic
//! dataset: a conditional GAN trained with a matching-aware discriminator,
//! an autoencoder that embeds the concatenated image and question features,
//! and a co-attention classifier whose pairwise combiner is either addition
//! or multimodal compact bilinear (MCB) pooling.

pub mod data;
pub mod error;
pub mod experiment;
pub mod fusion;
pub mod models;
pub mod nn;
pub mod signal;
pub mod training;

pub use error::{Error, Result};
