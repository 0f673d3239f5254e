//! Answer models: generators and discriminator for adversarial training,
//! the autoencoder classifier, and the co-attention classifier.

mod autoencoder;
mod checkpoint;
mod coattention;
mod discriminator;
mod encoder;
mod generator;

pub use autoencoder::{Autoencoder, AutoencoderOutput, AutoencoderSpec};
pub use checkpoint::{Checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use coattention::{
    CoAttention, CoAttentionOutput, CoAttentionSpec, Combiner, CoattentionInput,
};
pub use discriminator::{
    ConditionSource, Discriminator, DiscriminatorSpec, Perturbation, OUTPUT_MARGIN,
};
pub use encoder::{Encoded, EncoderSpec, QuestionImageEncoder};
pub use generator::{Generator, GeneratorArch, GeneratorSpec, NoiseMode};

use crate::error::{Error, Result};
use crate::nn::argmax;

/// A length-`K` score vector over the answer vocabulary.
#[derive(Debug, Clone, PartialEq)]
pub struct AnswerScores {
    scores: Vec<f64>,
}

impl AnswerScores {
    pub fn new(scores: Vec<f64>) -> Self {
        Self { scores }
    }

    /// Rejects empty or non-finite score vectors.
    pub fn checked(scores: Vec<f64>) -> Result<Self> {
        if scores.is_empty() {
            return Err(Error::InvalidArgument("empty answer scores".into()));
        }
        if scores.iter().any(|s| !s.is_finite()) {
            return Err(Error::NonFinite("answer scores".into()));
        }
        Ok(Self { scores })
    }

    pub fn scores(&self) -> &[f64] {
        &self.scores
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    /// Index of the largest score; ties go to the lowest index.
    pub fn argmax(&self) -> usize {
        argmax(&self.scores)
    }
}
