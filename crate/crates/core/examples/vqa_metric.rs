//! Consensus scoring against ten human answers, strict and official.

use vqa_lab::data::{vqa_score, MetricMode, HUMAN_ANSWERS};

fn main() -> vqa_lab::Result<()> {
    println!("matches  strict  official");
    for m in 0..=HUMAN_ANSWERS {
        let mut humans = [0usize; HUMAN_ANSWERS];
        humans[..m].fill(1);
        println!(
            "{m:>7}  {:>6.3}  {:>8.3}",
            vqa_score(1, &humans, MetricMode::Strict)?,
            vqa_score(1, &humans, MetricMode::Official)?
        );
    }
    Ok(())
}
