//! Synthetic VQA-style records, the consensus metric, per-type evaluation
//! and JSONL persistence.

mod eval;
mod generate;
mod jsonl;
mod metric;
mod record;

pub use eval::{evaluate_model, evaluate_predictions, EvalBreakdown};
pub use generate::{
    generate_dataset, train_validation_split, AnswerLayout, DatasetConfig, SyntheticWorld, Template,
};
pub use jsonl::{load_dataset, save_dataset, write_dataset};
pub use metric::{score_from_matches, vqa_score, MetricMode, CONSENSUS};
pub use record::{QuestionType, VqaRecord, HUMAN_ANSWERS};
