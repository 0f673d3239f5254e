use std::io::Write;

use super::metric::{vqa_score, MetricMode};
use super::record::{QuestionType, VqaRecord};
use crate::error::{Error, Result};

/// Mean scores in `[0, 100]`, overall and per question type.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct EvalBreakdown {
    pub all: f64,
    pub yes_no: f64,
    pub number: f64,
    pub other: f64,
    /// Records per type, in `yes_no, number, other` order.
    pub counts: [usize; 3],
}

impl EvalBreakdown {
    pub fn by_type(&self, t: QuestionType) -> f64 {
        match t {
            QuestionType::YesNo => self.yes_no,
            QuestionType::Number => self.number,
            QuestionType::Other => self.other,
        }
    }

    /// `type,score` CSV with one row for `all` and one per type.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["type", "score"])?;
        for (name, v) in [
            ("all", self.all),
            ("yes_no", self.yes_no),
            ("number", self.number),
            ("other", self.other),
        ] {
            w.write_record([name.to_string(), format!("{v:.4}")])?;
        }
        w.flush()?;
        Ok(())
    }
}

impl std::fmt::Display for EvalBreakdown {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "all {:.2} | yes/no {:.2} | number {:.2} | other {:.2}",
            self.all, self.yes_no, self.number, self.other
        )
    }
}

/// Scores predicted answer ids against the records.
pub fn evaluate_predictions(
    records: &[VqaRecord],
    predictions: &[usize],
    mode: MetricMode,
) -> Result<EvalBreakdown> {
    if records.is_empty() {
        return Err(Error::InvalidArgument("cannot evaluate an empty dataset".into()));
    }
    if records.len() != predictions.len() {
        return Err(Error::Shape(format!(
            "{} predictions for {} records",
            predictions.len(),
            records.len()
        )));
    }
    let mut sums = [0.0; 3];
    let mut counts = [0usize; 3];
    for (r, &p) in records.iter().zip(predictions) {
        let i = r.question_type.index();
        sums[i] += vqa_score(p, &r.human_answers, mode)?;
        counts[i] += 1;
    }
    let mean = |i: usize| {
        if counts[i] == 0 {
            0.0
        } else {
            100.0 * sums[i] / counts[i] as f64
        }
    };
    Ok(EvalBreakdown {
        all: 100.0 * sums.iter().sum::<f64>() / records.len() as f64,
        yes_no: mean(0),
        number: mean(1),
        other: mean(2),
        counts,
    })
}

/// Runs `predict` over `records` in chunks of `batch` and scores the argmax answers.
pub fn evaluate_model<F>(
    records: &[VqaRecord],
    mode: MetricMode,
    batch: usize,
    mut predict: F,
) -> Result<EvalBreakdown>
where
    F: FnMut(&[VqaRecord]) -> Result<Vec<usize>>,
{
    let mut preds = Vec::with_capacity(records.len());
    for chunk in records.chunks(batch.max(1)) {
        let p = predict(chunk)?;
        if p.len() != chunk.len() {
            return Err(Error::Shape("predictor returned wrong count".into()));
        }
        preds.extend(p);
    }
    evaluate_predictions(records, &preds, mode)
}
