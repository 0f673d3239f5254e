use std::ops::Range;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use super::record::{QuestionType, VqaRecord, HUMAN_ANSWERS};
use crate::error::{Error, Result};
use crate::nn::splitmix64;

/// Knobs of the synthetic generator.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetConfig {
    pub n_records: usize,
    /// Image feature dim `d_i`.
    pub image_dim: usize,
    /// Image vectors are read as this many equal-width region features.
    pub regions: usize,
    pub vocab: usize,
    /// Answer vocabulary size `K`.
    pub answers: usize,
    /// Proportions of yes/no, number and other questions.
    pub type_mix: [f64; 3],
    /// Probability that a ground truth is replaced by its type's modal answer.
    pub prior_skew: f64,
    /// Probability that a simulated annotator gives the ground truth.
    pub annotator_agreement: f64,
    pub clusters: usize,
    pub templates_per_type: usize,
    pub noise_std: f64,
    pub seed: u64,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            n_records: 5000,
            image_dim: 64,
            regions: 4,
            vocab: 40,
            answers: 32,
            type_mix: [0.4, 0.3, 0.3],
            prior_skew: 0.2,
            annotator_agreement: 0.8,
            clusters: 16,
            templates_per_type: 4,
            noise_std: 1.0,
            seed: 0,
        }
    }
}

impl DatasetConfig {
    pub fn validate(&self) -> Result<()> {
        let mix_sum: f64 = self.type_mix.iter().sum();
        if self.type_mix.iter().any(|p| !(0.0..=1.0).contains(p)) || (mix_sum - 1.0).abs() > 1e-9 {
            return Err(Error::config(
                "type mix",
                format!("proportions {:?} must be in [0,1] and sum to 1 (sum {mix_sum})", self.type_mix),
            ));
        }
        if !(0.0..=1.0).contains(&self.prior_skew) {
            return Err(Error::config("prior_skew", "must lie in [0, 1]"));
        }
        if !(0.0..=1.0).contains(&self.annotator_agreement) {
            return Err(Error::config("annotator_agreement", "must lie in [0, 1]"));
        }
        if self.answers < 8 {
            return Err(Error::config("answers", "need at least 8 answers"));
        }
        if self.vocab < 8 {
            return Err(Error::config("vocab", "need at least 8 tokens"));
        }
        if self.image_dim == 0 || self.regions == 0 || !self.image_dim.is_multiple_of(self.regions) {
            return Err(Error::config(
                "image_dim",
                format!("{} must be a positive multiple of regions={}", self.image_dim, self.regions),
            ));
        }
        if self.clusters == 0 {
            return Err(Error::config("clusters", "must be positive"));
        }
        if self.templates_per_type == 0 {
            return Err(Error::config("templates_per_type", "must be positive"));
        }
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            return Err(Error::config("noise_std", "must be finite and >= 0"));
        }
        Ok(())
    }

    pub fn layout(&self) -> AnswerLayout {
        AnswerLayout::new(self.answers)
    }
}

/// How answer ids split across question types.
///
/// `0` is "yes", `1` is "no", then the number answers `0, 1, 2, ...`, then
/// the other answers.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AnswerLayout {
    pub answers: usize,
    numbers: usize,
}

impl AnswerLayout {
    pub fn new(answers: usize) -> Self {
        Self {
            answers,
            numbers: (answers.saturating_sub(2)) / 2,
        }
    }

    pub fn range(&self, t: QuestionType) -> Range<usize> {
        match t {
            QuestionType::YesNo => 0..2,
            QuestionType::Number => 2..2 + self.numbers,
            QuestionType::Other => 2 + self.numbers..self.answers,
        }
    }

    /// The over-represented answer of a type: "yes", "2", and the first
    /// other answer.
    pub fn modal(&self, t: QuestionType) -> usize {
        match t {
            QuestionType::YesNo => 0,
            QuestionType::Number => 2 + 2.min(self.numbers.saturating_sub(1)),
            QuestionType::Other => 2 + self.numbers,
        }
    }

    pub fn name(&self, id: usize) -> String {
        match id {
            0 => "yes".into(),
            1 => "no".into(),
            _ if id < 2 + self.numbers => (id - 2).to_string(),
            _ => format!("other{}", id - 2 - self.numbers),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Template {
    pub question_type: QuestionType,
    pub tokens: Vec<usize>,
}

/// The hidden rule behind a dataset: cluster centers, question templates and
/// the `(template, cluster) -> answer` table.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticWorld {
    pub layout: AnswerLayout,
    pub templates: Vec<Template>,
    pub centers: Vec<Vec<f64>>,
    /// `table[template][cluster]`
    pub table: Vec<Vec<usize>>,
}

const LEAD_TOKENS: usize = 3;
const GOLDEN: u64 = 0x9e37_79b9_7f4a_7c15;

impl SyntheticWorld {
    pub fn new(config: &DatasetConfig) -> Result<Self> {
        config.validate()?;
        let layout = config.layout();
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut templates: Vec<Template> = Vec::new();
        for qt in QuestionType::ALL {
            for _ in 0..config.templates_per_type {
                let mut attempts = 0;
                loop {
                    let len = rng.random_range(4..=6);
                    let mut tokens = vec![qt.index()];
                    tokens.extend((1..len).map(|_| rng.random_range(LEAD_TOKENS..config.vocab)));
                    if !templates.iter().any(|t| t.tokens == tokens) {
                        templates.push(Template {
                            question_type: qt,
                            tokens,
                        });
                        break;
                    }
                    attempts += 1;
                    if attempts > 1000 {
                        return Err(Error::config("vocab", "too small for distinct templates"));
                    }
                }
            }
        }
        let centers = (0..config.clusters)
            .map(|_| {
                (0..config.image_dim)
                    .map(|_| StandardNormal.sample(&mut rng))
                    .collect()
            })
            .collect();
        let table = templates
            .iter()
            .map(|t| {
                let range = layout.range(t.question_type);
                (0..config.clusters)
                    .map(|_| rng.random_range(range.clone()))
                    .collect()
            })
            .collect();
        Ok(Self {
            layout,
            templates,
            centers,
            table,
        })
    }

    fn templates_of(&self, t: QuestionType) -> Vec<usize> {
        (0..self.templates.len())
            .filter(|&i| self.templates[i].question_type == t)
            .collect()
    }

    /// Record `index`, drawn from its own counter-derived stream.
    pub fn record(&self, config: &DatasetConfig, index: usize) -> VqaRecord {
        let seed = splitmix64(config.seed ^ (index as u64 + 1).wrapping_mul(GOLDEN));
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let u: f64 = rng.random();
        let qtype = if u < config.type_mix[0] {
            QuestionType::YesNo
        } else if u < config.type_mix[0] + config.type_mix[1] {
            QuestionType::Number
        } else {
            QuestionType::Other
        };
        let candidates = self.templates_of(qtype);
        let template = candidates[rng.random_range(0..candidates.len())];
        let cluster = rng.random_range(0..self.centers.len());
        let image_features = self.centers[cluster]
            .iter()
            .map(|c| {
                let z: f64 = StandardNormal.sample(&mut rng);
                c + config.noise_std * z
            })
            .collect();
        let latent = self.table[template][cluster];
        let ground_truth = if rng.random::<f64>() < config.prior_skew {
            self.layout.modal(qtype)
        } else {
            latent
        };
        let range = self.layout.range(qtype);
        let mut humans = [0usize; HUMAN_ANSWERS];
        for h in humans.iter_mut() {
            *h = if rng.random::<f64>() < config.annotator_agreement {
                ground_truth
            } else {
                rng.random_range(range.clone())
            };
        }
        make_ground_truth_mode(&mut humans, ground_truth);
        VqaRecord {
            image_features,
            question_tokens: self.templates[template].tokens.clone(),
            human_answers: humans,
            question_type: qtype,
            ground_truth,
        }
    }
}

/// Rewrites the most frequent competitor until `gt` is the strict mode.
fn make_ground_truth_mode(humans: &mut [usize; HUMAN_ANSWERS], gt: usize) {
    loop {
        let count = |a: usize| humans.iter().filter(|&&h| h == a).count();
        let gt_count = count(gt);
        let rival = humans
            .iter()
            .copied()
            .filter(|&a| a != gt)
            .max_by_key(|&a| (count(a), std::cmp::Reverse(a)));
        match rival {
            Some(r) if count(r) >= gt_count => {
                let pos = humans.iter().position(|&h| h == r).expect("rival present");
                humans[pos] = gt;
            }
            _ => break,
        }
    }
}

/// Generates `config.n_records` records; a pure function of `config`.
pub fn generate_dataset(config: &DatasetConfig) -> Result<Vec<VqaRecord>> {
    let world = SyntheticWorld::new(config)?;
    // Each record draws from its own index-derived stream, so the
    // parallel map is order-independent.
    Ok((0..config.n_records).into_par_iter().map(|i| world.record(config, i)).collect())
}

/// Splits off the last `fraction` of records as validation data.
pub fn train_validation_split(records: &[VqaRecord], fraction: f64) -> (&[VqaRecord], &[VqaRecord]) {
    let n_val = ((records.len() as f64) * fraction).round() as usize;
    records.split_at(records.len() - n_val.min(records.len()))
}
