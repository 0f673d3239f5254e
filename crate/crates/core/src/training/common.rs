use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;

use crate::data::VqaRecord;
use crate::error::{Error, Result};
use crate::nn::{Graph, Tensor, Var};

/// Cycles through shuffled epochs of record indices.
#[derive(Debug, Clone)]
pub struct Batcher {
    order: Vec<usize>,
    cursor: usize,
    batch: usize,
}

impl Batcher {
    pub fn new(n: usize, batch: usize) -> Result<Self> {
        if n == 0 || batch == 0 {
            return Err(Error::InvalidArgument(format!(
                "cannot batch {n} records by {batch}"
            )));
        }
        Ok(Self {
            order: (0..n).collect(),
            cursor: n,
            batch: batch.min(n),
        })
    }

    /// The next `batch` indices; reshuffles when an epoch runs out.
    pub fn next<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Vec<usize> {
        if self.cursor + self.batch > self.order.len() {
            self.order.shuffle(rng);
            self.cursor = 0;
        }
        let out = self.order[self.cursor..self.cursor + self.batch].to_vec();
        self.cursor += self.batch;
        out
    }
}

/// `[B, K]` targets: `1 - smoothing` on the label, the rest spread evenly.
pub fn one_hot(labels: &[usize], k: usize, smoothing: f64) -> Tensor {
    let off = if k > 1 { smoothing / (k - 1) as f64 } else { 0.0 };
    let mut t = Tensor::full(vec![labels.len(), k], off);
    for (r, &l) in labels.iter().enumerate() {
        t.data_mut()[r * k + l] = 1.0 - smoothing;
    }
    t
}

/// Mean softmax cross-entropy of `scores: [B, K]` against integer labels.
pub fn cross_entropy(g: &mut Graph, scores: Var, labels: &[usize]) -> Result<Var> {
    let (b, k) = (g.value(scores).rows(), g.value(scores).cols());
    if labels.len() != b {
        return Err(Error::Shape(format!("{} labels for {b} rows", labels.len())));
    }
    if let Some(&l) = labels.iter().find(|&&l| l >= k) {
        return Err(Error::InvalidArgument(format!("label {l} outside {k} answers")));
    }
    let lp = g.log_softmax_rows(scores);
    let mut pick = Tensor::zeros(vec![b, k]);
    for (r, &l) in labels.iter().enumerate() {
        pick.data_mut()[r * k + l] = -1.0 / b as f64;
    }
    let pick = g.input(pick);
    let picked = g.mul(lp, pick)?;
    Ok(g.sum(picked))
}

/// Mean squared error over all entries.
pub fn mse(g: &mut Graph, a: Var, b: Var) -> Result<Var> {
    let d = g.sub(a, b)?;
    let sq = g.mul(d, d)?;
    Ok(g.mean(sq))
}

/// `[B, d_i]` image rows of the selected records.
pub fn image_batch(records: &[&VqaRecord]) -> Result<Tensor> {
    let rows: Vec<Vec<f64>> = records.iter().map(|r| r.image_features.clone()).collect();
    Tensor::from_rows(&rows)
}

/// Normalized bag-of-words vector of a token sequence.
pub fn bag_of_words(tokens: &[usize], vocab: usize) -> Vec<f64> {
    let mut v = vec![0.0; vocab];
    for &t in tokens {
        if t < vocab {
            v[t] += 1.0;
        }
    }
    let n = tokens.len().max(1) as f64;
    v.iter_mut().for_each(|x| *x /= n);
    v
}

/// What one logged row measures.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossKind {
    /// Discriminator and generator objectives.
    Adversarial,
    /// A single task loss.
    Task,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossRow {
    pub step: usize,
    /// `L_D`, or the task loss.
    pub primary: f64,
    /// `L_G`; unused for task losses.
    pub secondary: f64,
    pub saturation_count: usize,
}

/// Per-step loss log.
#[derive(Debug, Clone, PartialEq)]
pub struct LossLog {
    pub kind: LossKind,
    pub rows: Vec<LossRow>,
}

impl LossLog {
    pub fn new(kind: LossKind) -> Self {
        Self {
            kind,
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: LossRow) -> Result<()> {
        if !row.primary.is_finite() || !row.secondary.is_finite() {
            return Err(Error::NonFinite(format!(
                "loss at step {} (last good step {})",
                row.step,
                self.rows.last().map_or(0, |r| r.step)
            )));
        }
        self.rows.push(row);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        match self.kind {
            LossKind::Adversarial => w.write_record(["step", "l_d", "l_g", "saturation_count"])?,
            LossKind::Task => w.write_record(["step", "loss", "saturation_count"])?,
        }
        for r in &self.rows {
            let mut rec = vec![r.step.to_string(), r.primary.to_string()];
            if self.kind == LossKind::Adversarial {
                rec.push(r.secondary.to_string());
            }
            rec.push(r.saturation_count.to_string());
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.write_csv(std::fs::File::create(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn batcher_covers_each_epoch() {
        let mut b = Batcher::new(10, 5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut seen = [b.next(&mut rng), b.next(&mut rng)].concat();
        seen.sort_unstable();
        assert_eq!(seen, (0..10).collect::<Vec<_>>());
    }

    #[test]
    fn cross_entropy_of_uniform_scores() {
        let mut g = Graph::new();
        let s = g.input(Tensor::zeros(vec![2, 4]));
        let l = cross_entropy(&mut g, s, &[0, 3]).unwrap();
        assert!((g.value(l).data()[0] - 4f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn one_hot_rows_sum_to_one() {
        let t = one_hot(&[1, 0], 4, 0.1);
        assert!((t.row_slice(0).iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert_eq!(t.row_slice(0)[1], 0.9);
    }

    #[test]
    fn loss_csv_layout() {
        let mut log = LossLog::new(LossKind::Adversarial);
        log.push(LossRow { step: 1, primary: -1.5, secondary: -0.5, saturation_count: 2 }).unwrap();
        assert!(log
            .push(LossRow { step: 2, primary: f64::NAN, secondary: 0.0, saturation_count: 0 })
            .is_err());
        let mut buf = Vec::new();
        log.write_csv(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "step,l_d,l_g,saturation_count\n1,-1.5,-0.5,2\n");
    }
}
