//! Trains the autoencoder whose bottleneck code feeds an answer classifier.

use vqa_lab::experiment::{execute, prepare_records, Method, RunConfig};

fn main() -> vqa_lab::Result<()> {
    let mut cfg = RunConfig {
        method: Method::Autoencoder,
        steps: 600,
        ..RunConfig::default()
    };
    cfg.data.n_records = 1500;
    let records = prepare_records(&cfg)?;
    let outcome = execute(&cfg, &records)?;
    let log = outcome.loss_log();
    println!("{} steps trained", log.len());
    let b = outcome.breakdown;
    println!("All {:.2} | yes/no {:.2} | number {:.2} | other {:.2}", b.all, b.yes_no, b.number, b.other);
    Ok(())
}
