//! Fuses the same image and question batch with the simple, full and MCB
//! strategies.

use vqa_lab::data::{generate_dataset, DatasetConfig};
use vqa_lab::fusion::FusionStrategy;
use vqa_lab::models::{EncoderSpec, QuestionImageEncoder};
use vqa_lab::nn::{Access, Graph, InitMode, InitScheme, ParamStore};
use vqa_lab::training::image_batch;

fn main() -> vqa_lab::Result<()> {
    let data = DatasetConfig {
        n_records: 4,
        ..DatasetConfig::default()
    };
    let records = generate_dataset(&data)?;
    let batch: Vec<_> = records.iter().collect();
    let images = image_batch(&batch)?;
    let questions: Vec<&[usize]> = records.iter().map(|r| r.question_tokens.as_slice()).collect();

    for fusion in [FusionStrategy::Simple, FusionStrategy::Full, FusionStrategy::Mcb] {
        let mut store = ParamStore::new();
        let encoder = QuestionImageEncoder::new(
            &mut store,
            EncoderSpec {
                vocab: data.vocab,
                embed_dim: 16,
                rnn_hidden: 32,
                image_dim: data.image_dim,
                fusion,
                fused_dim: 32,
                sketch_dim: 256,
                sketch_seed: 5,
                init: InitMode::new(InitScheme::I2, 5),
            },
        )?;
        let mut g = Graph::new();
        let enc = encoder.encode(&mut g, &store, &images, &questions, Access::Frozen)?;
        let fused = g.value(enc.fused);
        let norm: f64 = fused.row_slice(0).iter().map(|v| v * v).sum::<f64>().sqrt();
        println!(
            "{fusion:>6}: {} x {} fused, {} trainable scalars, row 0 norm {norm:.3}",
            fused.rows(),
            fused.cols(),
            store.scalar_count()
        );
    }
    Ok(())
}
