//! Co-attention over question words and image regions, combining pairs by
//! addition and by MCB.

use vqa_lab::experiment::{execute, prepare_records, Method, RunConfig};
use vqa_lab::models::Combiner;

fn main() -> vqa_lab::Result<()> {
    for combiner in [Combiner::Addition, Combiner::Mcb] {
        let mut cfg = RunConfig {
            method: Method::Attention,
            combiner,
            steps: 600,
            ..RunConfig::default()
        };
        cfg.data.n_records = 1500;
        let records = prepare_records(&cfg)?;
        let b = execute(&cfg, &records)?.breakdown;
        println!("{combiner:>8}: All {:.2} | other {:.2}", b.all, b.other);
    }
    Ok(())
}
