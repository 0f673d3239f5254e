use rand::Rng;

use super::common::{bag_of_words, cross_entropy, image_batch, mse, Batcher, LossKind, LossLog, LossRow};
use crate::data::VqaRecord;
use crate::error::{Error, Result};
use crate::models::{Autoencoder, AutoencoderSpec, CoAttention, CoAttentionSpec, CoattentionInput};
use crate::nn::{sgd_step, Access, Graph, ParamStore, Tensor};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TaskConfig {
    pub alpha: f64,
    pub steps: usize,
    pub batch: usize,
    /// Weight of the classification term in the autoencoder objective.
    pub lambda: f64,
}

impl Default for TaskConfig {
    fn default() -> Self {
        Self {
            alpha: 0.1,
            steps: 2000,
            batch: 32,
            lambda: 1.0,
        }
    }
}

/// An autoencoder classifier over `[image; bag of words]`.
#[derive(Debug, Clone, PartialEq)]
pub struct AutoencoderModel {
    pub store: ParamStore,
    pub model: Autoencoder,
    pub vocab: usize,
}

impl AutoencoderModel {
    /// `spec.input_dim` must equal the image dim plus `vocab`.
    pub fn new(spec: AutoencoderSpec, vocab: usize) -> Result<Self> {
        let mut store = ParamStore::new();
        let model = Autoencoder::new(&mut store, spec)?;
        Ok(Self { store, model, vocab })
    }

    pub fn features(&self, batch: &[&VqaRecord]) -> Result<Tensor> {
        let rows: Vec<Vec<f64>> = batch
            .iter()
            .map(|r| {
                let mut v = r.image_features.clone();
                v.extend(bag_of_words(&r.question_tokens, self.vocab));
                v
            })
            .collect();
        let t = Tensor::from_rows(&rows)?;
        if t.cols() != self.model.spec().input_dim {
            return Err(Error::Shape(format!(
                "autoencoder expects {} features, records give {}",
                self.model.spec().input_dim,
                t.cols()
            )));
        }
        Ok(t)
    }

    pub fn predict(&self, records: &[VqaRecord]) -> Result<Vec<usize>> {
        let batch: Vec<&VqaRecord> = records.iter().collect();
        let mut g = Graph::new();
        let x = g.input(self.features(&batch)?);
        let out = self.model.forward(&mut g, &self.store, x, Access::Frozen)?;
        Ok(g.value(out.scores).argmax_rows())
    }
}

/// Minimizes `MSE(reconstruction, input) + λ · CE(scores, answer)`.
/// Rows of the log hold the combined loss.
pub fn train_autoencoder_vqa<R: Rng + ?Sized>(
    model: &mut AutoencoderModel,
    records: &[VqaRecord],
    config: &TaskConfig,
    rng: &mut R,
) -> Result<LossLog> {
    if config.lambda.is_nan() || config.lambda < 0.0 {
        return Err(Error::config("lambda", "must be >= 0"));
    }
    let mut log = LossLog::new(LossKind::Task);
    let mut batcher = Batcher::new(records.len(), config.batch)?;
    for step in 1..=config.steps {
        let batch: Vec<&VqaRecord> = batcher.next(rng).into_iter().map(|i| &records[i]).collect();
        let mut g = Graph::new();
        let x = g.input(model.features(&batch)?);
        let out = model.model.forward(&mut g, &model.store, x, Access::Tracked)?;
        let mut loss = mse(&mut g, out.reconstruction, x)?;
        if config.lambda > 0.0 {
            let labels: Vec<usize> = batch.iter().map(|r| r.ground_truth).collect();
            let ce = cross_entropy(&mut g, out.scores, &labels)?;
            let weighted = g.scale(ce, config.lambda);
            loss = g.add(loss, weighted)?;
        }
        log.push(LossRow {
            step,
            primary: g.value(loss).data()[0],
            secondary: 0.0,
            saturation_count: 0,
        })?;
        let grads = g.backward_scalar(loss)?;
        sgd_step(&mut model.store, &grads, config.alpha)?;
    }
    Ok(log)
}

/// A co-attention classifier with its parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionModel {
    pub store: ParamStore,
    pub model: CoAttention,
}

impl AttentionModel {
    pub fn new(spec: CoAttentionSpec) -> Result<Self> {
        let mut store = ParamStore::new();
        let model = CoAttention::new(&mut store, spec)?;
        Ok(Self { store, model })
    }

    /// Scores and attention weights for a batch, outside any training trace.
    pub fn run(&self, batch: &[&VqaRecord]) -> Result<(Tensor, Tensor, Tensor)> {
        let images = image_batch(batch)?;
        let questions: Vec<&[usize]> = batch.iter().map(|r| r.question_tokens.as_slice()).collect();
        let mut g = Graph::new();
        let input = CoattentionInput {
            images: &images,
            questions: &questions,
        };
        let out = self.model.forward(&mut g, &self.store, input, Access::Frozen)?;
        Ok((
            g.value(out.scores).clone(),
            g.value(out.q_weights).clone(),
            g.value(out.v_weights).clone(),
        ))
    }

    pub fn predict(&self, records: &[VqaRecord]) -> Result<Vec<usize>> {
        let batch: Vec<&VqaRecord> = records.iter().collect();
        Ok(self.run(&batch)?.0.argmax_rows())
    }
}

/// Cross-entropy training of the co-attention scores.
pub fn train_attention<R: Rng + ?Sized>(
    model: &mut AttentionModel,
    records: &[VqaRecord],
    config: &TaskConfig,
    rng: &mut R,
) -> Result<LossLog> {
    let mut log = LossLog::new(LossKind::Task);
    let mut batcher = Batcher::new(records.len(), config.batch)?;
    for step in 1..=config.steps {
        let batch: Vec<&VqaRecord> = batcher.next(rng).into_iter().map(|i| &records[i]).collect();
        let images = image_batch(&batch)?;
        let questions: Vec<&[usize]> = batch.iter().map(|r| r.question_tokens.as_slice()).collect();
        let mut g = Graph::new();
        let input = CoattentionInput {
            images: &images,
            questions: &questions,
        };
        let out = model.model.forward(&mut g, &model.store, input, Access::Tracked)?;
        let labels: Vec<usize> = batch.iter().map(|r| r.ground_truth).collect();
        let loss = cross_entropy(&mut g, out.scores, &labels)?;
        log.push(LossRow {
            step,
            primary: g.value(loss).data()[0],
            secondary: 0.0,
            saturation_count: 0,
        })?;
        let grads = g.backward_scalar(loss)?;
        sgd_step(&mut model.store, &grads, config.alpha)?;
    }
    Ok(log)
}

/// Fraction of `records` whose argmax answer equals the ground truth.
pub fn accuracy(predictions: &[usize], records: &[VqaRecord]) -> f64 {
    if records.is_empty() {
        return 0.0;
    }
    let hits = predictions
        .iter()
        .zip(records)
        .filter(|(p, r)| **p == r.ground_truth)
        .count();
    hits as f64 / records.len() as f64
}
