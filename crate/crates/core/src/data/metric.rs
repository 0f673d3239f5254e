use super::record::HUMAN_ANSWERS;
use crate::error::{Error, Result};

/// Number of matching annotators that earns full credit.
pub const CONSENSUS: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum MetricMode {
    /// 1 if at least three annotators gave the answer, else 0.
    #[default]
    Strict,
    /// `min(matches / 3, 1)`.
    Official,
}

impl std::str::FromStr for MetricMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "strict" => Ok(MetricMode::Strict),
            "official" => Ok(MetricMode::Official),
            other => Err(format!("unknown metric `{other}` (strict, official)")),
        }
    }
}

impl std::fmt::Display for MetricMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            MetricMode::Strict => "strict",
            MetricMode::Official => "official",
        })
    }
}

/// Consensus score of `predicted` against the annotators' answers.
pub fn vqa_score(predicted: usize, human_answers: &[usize], mode: MetricMode) -> Result<f64> {
    if human_answers.len() != HUMAN_ANSWERS {
        return Err(Error::InvalidArgument(format!(
            "expected {HUMAN_ANSWERS} human answers, got {}",
            human_answers.len()
        )));
    }
    let matches = human_answers.iter().filter(|&&a| a == predicted).count();
    Ok(score_from_matches(matches, mode))
}

pub fn score_from_matches(matches: usize, mode: MetricMode) -> f64 {
    match mode {
        MetricMode::Strict => {
            if matches >= CONSENSUS {
                1.0
            } else {
                0.0
            }
        }
        MetricMode::Official => (matches as f64 / CONSENSUS as f64).min(1.0),
    }
}
