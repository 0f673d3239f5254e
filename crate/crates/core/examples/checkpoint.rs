//! Saves a trained model to a checkpoint and restores it into a fresh one.

use vqa_lab::experiment::{prepare_records, train_model, Method, RunConfig, TrainedModel};
use vqa_lab::models::Checkpoint;

fn main() -> vqa_lab::Result<()> {
    let mut cfg = RunConfig {
        method: Method::Attention,
        steps: 50,
        ..RunConfig::default()
    };
    cfg.data.n_records = 200;
    let records = prepare_records(&cfg)?;
    let (model, _) = train_model(&cfg, &records)?;

    let dir = std::env::temp_dir().join("vqa-lab-checkpoint-example");
    std::fs::create_dir_all(&dir)?;
    let path = dir.join("checkpoint.bin");
    model.checkpoint(&cfg).save(&path)?;
    let restored = TrainedModel::restore(&cfg, &Checkpoint::load(&path)?)?;

    let same = model.predict(&records, 0)? == restored.predict(&records, 0)?;
    println!("{} bytes written, predictions identical after reload: {same}", std::fs::metadata(&path)?.len());
    Ok(())
}
