//! Trains the conditional GAN with a matching-aware discriminator on a small
//! synthetic set and scores it on the held-out split.

use vqa_lab::experiment::{execute, prepare_records, Method, RunConfig};
use vqa_lab::models::{GeneratorArch, NoiseMode};
use vqa_lab::nn::InitScheme;

fn main() -> vqa_lab::Result<()> {
    let mut cfg = RunConfig {
        method: Method::Gan,
        arch: GeneratorArch::Simp,
        noise_mode: NoiseMode::N0,
        init: InitScheme::I2,
        steps: 400,
        ..RunConfig::default()
    };
    cfg.pretrain.pretrain_g = true;
    cfg.pretrain.pretrain_steps = 300;
    cfg.data.n_records = 1500;
    let records = prepare_records(&cfg)?;
    let outcome = execute(&cfg, &records)?;
    for (name, log) in &outcome.logs {
        println!("{name}: {} logged steps", log.len());
    }
    let b = outcome.breakdown;
    println!("All {:.2} | yes/no {:.2} | number {:.2} | other {:.2}", b.all, b.yes_no, b.number, b.other);
    Ok(())
}
