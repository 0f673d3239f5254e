use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const HUMAN_ANSWERS: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QuestionType {
    YesNo,
    Number,
    Other,
}

impl QuestionType {
    pub const ALL: [QuestionType; 3] = [QuestionType::YesNo, QuestionType::Number, QuestionType::Other];

    pub fn as_str(self) -> &'static str {
        match self {
            QuestionType::YesNo => "yes_no",
            QuestionType::Number => "number",
            QuestionType::Other => "other",
        }
    }

    pub fn index(self) -> usize {
        match self {
            QuestionType::YesNo => 0,
            QuestionType::Number => 1,
            QuestionType::Other => 2,
        }
    }
}

impl std::fmt::Display for QuestionType {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One synthetic example. Serialized field names form the JSONL schema.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VqaRecord {
    #[serde(rename = "img")]
    pub image_features: Vec<f64>,
    #[serde(rename = "q")]
    pub question_tokens: Vec<usize>,
    #[serde(rename = "humans")]
    pub human_answers: [usize; HUMAN_ANSWERS],
    #[serde(rename = "type")]
    pub question_type: QuestionType,
    #[serde(rename = "gt")]
    pub ground_truth: usize,
}

impl VqaRecord {
    pub fn matches(&self, answer: usize) -> usize {
        self.human_answers.iter().filter(|&&a| a == answer).count()
    }

    /// Checks the record-level invariants; `vocab`/`answers` bound the ids.
    pub fn validate(&self, vocab: Option<usize>, answers: Option<usize>) -> Result<()> {
        if !self.human_answers.contains(&self.ground_truth) {
            return Err(Error::InvalidArgument(format!(
                "ground truth {} not among the human answers",
                self.ground_truth
            )));
        }
        if let Some(v) = vocab {
            if let Some(position) = self.question_tokens.iter().position(|&t| t >= v) {
                return Err(Error::OutOfVocabulary {
                    position,
                    token: self.question_tokens[position],
                    vocab: v,
                });
            }
        }
        if let Some(k) = answers {
            if self.human_answers.iter().any(|&a| a >= k) {
                return Err(Error::InvalidArgument(format!(
                    "human answer outside the {k}-answer vocabulary"
                )));
            }
        }
        if self.image_features.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("image features".into()));
        }
        Ok(())
    }
}
