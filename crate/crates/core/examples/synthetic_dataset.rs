//! Generates a skewed synthetic dataset and shows how the skew knob moves
//! answers onto each type's modal answer.

use vqa_lab::data::{generate_dataset, DatasetConfig, QuestionType};

fn main() -> vqa_lab::Result<()> {
    for skew in [0.0, 0.5, 0.9] {
        let cfg = DatasetConfig {
            n_records: 2000,
            prior_skew: skew,
            ..DatasetConfig::default()
        };
        let layout = cfg.layout();
        let records = generate_dataset(&cfg)?;
        print!("skew {skew:.1}:");
        for t in QuestionType::ALL {
            let of_type: Vec<_> = records.iter().filter(|r| r.question_type == t).collect();
            let modal = of_type.iter().filter(|r| r.ground_truth == layout.modal(t)).count();
            print!(
                "  {t} {} ({:.0}% '{}')",
                of_type.len(),
                100.0 * modal as f64 / of_type.len() as f64,
                layout.name(layout.modal(t))
            );
        }
        println!();
    }
    Ok(())
}
