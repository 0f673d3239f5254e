use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::data::{DatasetConfig, MetricMode};
use crate::error::{Error, Result};
use crate::fusion::FusionStrategy;
use crate::models::{Combiner, ConditionSource, GeneratorArch, NoiseMode};
use crate::nn::{splitmix64, InitMode, InitScheme, DEFAULT_DROPOUT};
use crate::training::{PretrainPlan, UpdateConvention};

/// Environment variable that overrides the configured seed.
pub const SEED_ENV: &str = "VFL_SEED";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Method {
    /// The generator trained as a plain softmax classifier, no discriminator.
    GClassifier,
    Gan,
    Autoencoder,
    Attention,
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Method::GClassifier => "g_classifier",
            Method::Gan => "gan",
            Method::Autoencoder => "autoencoder",
            Method::Attention => "attention",
        })
    }
}

impl FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "g_classifier" => Ok(Method::GClassifier),
            "gan" => Ok(Method::Gan),
            "autoencoder" => Ok(Method::Autoencoder),
            "attention" => Ok(Method::Attention),
            other => Err(format!(
                "unknown method `{other}` (g_classifier, gan, autoencoder, attention)"
            )),
        }
    }
}

/// Everything one training run needs. Defaults for step size, batch and
/// step counts are desk-scale choices, not published values.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub method: Method,
    pub arch: GeneratorArch,
    pub fusion: FusionStrategy,
    pub noise_mode: NoiseMode,
    pub init: InitScheme,
    pub pretrain: PretrainPlan,
    pub combiner: Combiner,
    /// Synthetic data knobs; its seed is ignored in favour of `seed`.
    pub data: DatasetConfig,
    /// Load records from this JSONL file instead of generating them.
    pub dataset: Option<PathBuf>,
    pub embed_dim: usize,
    pub rnn_hidden: usize,
    /// `d_f`.
    pub fused_dim: usize,
    /// `Z`, the N1 noise width.
    pub noise_dim: usize,
    /// `d_s`.
    pub sketch_dim: usize,
    pub g_hidden: Vec<usize>,
    pub d_hidden: Vec<usize>,
    pub condition_source: ConditionSource,
    pub softmax_output: bool,
    pub convention: UpdateConvention,
    pub d_noise_start: f64,
    pub answer_smoothing: f64,
    pub code_dim: usize,
    pub ae_hidden: Vec<usize>,
    pub lambda: f64,
    pub att_hidden: usize,
    pub att_classifier_hidden: usize,
    pub dropout: f64,
    pub layer_norm: bool,
    pub alpha: f64,
    pub batch: usize,
    pub steps: usize,
    pub seed: u64,
    pub metric: MetricMode,
    pub validation_fraction: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            method: Method::Gan,
            arch: GeneratorArch::Full,
            fusion: FusionStrategy::Full,
            noise_mode: NoiseMode::N2,
            init: InitScheme::I1,
            pretrain: PretrainPlan::default(),
            combiner: Combiner::Addition,
            data: DatasetConfig::default(),
            dataset: None,
            embed_dim: 16,
            rnn_hidden: 32,
            fused_dim: 64,
            noise_dim: 16,
            sketch_dim: 128,
            g_hidden: vec![256, 256, 256],
            d_hidden: vec![256, 128],
            condition_source: ConditionSource::Fused,
            softmax_output: false,
            convention: UpdateConvention::Ascent,
            d_noise_start: 0.1,
            answer_smoothing: 0.0,
            code_dim: 32,
            ae_hidden: vec![64],
            lambda: 1.0,
            att_hidden: 64,
            att_classifier_hidden: 64,
            dropout: DEFAULT_DROPOUT,
            layer_norm: false,
            alpha: 0.1,
            batch: 32,
            steps: 2000,
            seed: 0,
            metric: MetricMode::Strict,
            validation_fraction: 0.2,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    value
        .trim()
        .parse::<T>()
        .map_err(|e| Error::config(key, format!("cannot parse `{value}`: {e}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value.trim().to_ascii_lowercase().as_str() {
        "true" | "yes" | "1" | "on" => Ok(true),
        "false" | "no" | "0" | "off" => Ok(false),
        _ => Err(Error::config(key, format!("expected true/false, got `{value}`"))),
    }
}

fn parse_list<T: FromStr>(key: &str, value: &str) -> Result<Vec<T>>
where
    T::Err: std::fmt::Display,
{
    let v = value.trim();
    if v.is_empty() || v == "-" {
        return Ok(Vec::new());
    }
    v.split(',').map(|p| parse(key, p)).collect()
}

fn join<T: ToString>(v: &[T]) -> String {
    if v.is_empty() {
        "-".into()
    } else {
        v.iter().map(ToString::to_string).collect::<Vec<_>>().join(",")
    }
}

fn convention_name(c: UpdateConvention) -> &'static str {
    match c {
        UpdateConvention::Ascent => "ascent",
        UpdateConvention::LiteralDescent => "literal_descent",
    }
}

impl RunConfig {
    /// Every key `set` accepts, in the order `to_text` writes them.
    pub const KEYS: &'static [&'static str] = &[
        "method", "arch", "fusion", "noise_mode", "init", "pretrain_g", "pretrain_d",
        "g_input_noise_std", "d_input_noise_std", "pretrain_steps", "combiner", "n_records",
        "image_dim", "regions", "vocab", "answers", "type_mix", "prior_skew",
        "annotator_agreement", "clusters", "templates_per_type", "feature_noise_std", "dataset",
        "embed_dim", "rnn_hidden", "fused_dim", "noise_dim", "sketch_dim", "g_hidden", "d_hidden",
        "condition_source", "softmax_output", "convention", "d_noise_start", "answer_smoothing",
        "code_dim", "ae_hidden", "lambda", "att_hidden", "att_classifier_hidden", "dropout",
        "layer_norm", "alpha", "batch", "steps", "seed", "metric", "validation_fraction",
    ];

    /// Sets one field from its text form.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key {
            "method" => self.method = parse(key, v)?,
            "arch" => self.arch = parse(key, v)?,
            "fusion" => self.fusion = parse(key, v)?,
            "noise_mode" => self.noise_mode = parse(key, v)?,
            "init" => self.init = parse(key, v)?,
            "pretrain_g" => self.pretrain.pretrain_g = parse_bool(key, v)?,
            "pretrain_d" => self.pretrain.pretrain_d = parse_bool(key, v)?,
            "g_input_noise_std" => self.pretrain.g_input_noise_std = parse(key, v)?,
            "d_input_noise_std" => self.pretrain.d_input_noise_std = parse(key, v)?,
            "pretrain_steps" => self.pretrain.pretrain_steps = parse(key, v)?,
            "combiner" => self.combiner = parse(key, v)?,
            "n_records" => self.data.n_records = parse(key, v)?,
            "image_dim" => self.data.image_dim = parse(key, v)?,
            "regions" => self.data.regions = parse(key, v)?,
            "vocab" => self.data.vocab = parse(key, v)?,
            "answers" => self.data.answers = parse(key, v)?,
            "type_mix" => {
                let mix: Vec<f64> = parse_list(key, v)?;
                self.data.type_mix = mix
                    .try_into()
                    .map_err(|_| Error::config("type mix", "expected three proportions"))?;
            }
            "prior_skew" => self.data.prior_skew = parse(key, v)?,
            "annotator_agreement" => self.data.annotator_agreement = parse(key, v)?,
            "clusters" => self.data.clusters = parse(key, v)?,
            "templates_per_type" => self.data.templates_per_type = parse(key, v)?,
            "feature_noise_std" => self.data.noise_std = parse(key, v)?,
            "dataset" => self.dataset = (!v.is_empty() && v != "-").then(|| PathBuf::from(v)),
            "embed_dim" => self.embed_dim = parse(key, v)?,
            "rnn_hidden" => self.rnn_hidden = parse(key, v)?,
            "fused_dim" => self.fused_dim = parse(key, v)?,
            "noise_dim" => self.noise_dim = parse(key, v)?,
            "sketch_dim" => self.sketch_dim = parse(key, v)?,
            "g_hidden" => self.g_hidden = parse_list(key, v)?,
            "d_hidden" => self.d_hidden = parse_list(key, v)?,
            "condition_source" => self.condition_source = parse(key, v)?,
            "softmax_output" => self.softmax_output = parse_bool(key, v)?,
            "convention" => {
                self.convention = match v.to_ascii_lowercase().as_str() {
                    "ascent" => UpdateConvention::Ascent,
                    "literal_descent" => UpdateConvention::LiteralDescent,
                    _ => {
                        return Err(Error::config(
                            key,
                            format!("unknown convention `{v}` (ascent, literal_descent)"),
                        ))
                    }
                }
            }
            "d_noise_start" => self.d_noise_start = parse(key, v)?,
            "answer_smoothing" => self.answer_smoothing = parse(key, v)?,
            "code_dim" => self.code_dim = parse(key, v)?,
            "ae_hidden" => self.ae_hidden = parse_list(key, v)?,
            "lambda" => self.lambda = parse(key, v)?,
            "att_hidden" => self.att_hidden = parse(key, v)?,
            "att_classifier_hidden" => self.att_classifier_hidden = parse(key, v)?,
            "dropout" => self.dropout = parse(key, v)?,
            "layer_norm" => self.layer_norm = parse_bool(key, v)?,
            "alpha" => self.alpha = parse(key, v)?,
            "batch" => self.batch = parse(key, v)?,
            "steps" => self.steps = parse(key, v)?,
            "seed" => self.seed = parse(key, v)?,
            "metric" => self.metric = parse(key, v)?,
            "validation_fraction" => self.validation_fraction = parse(key, v)?,
            _ => return Err(Error::config(key, "unknown key")),
        }
        Ok(())
    }

    /// Text form of one field, as `set` reads it back.
    pub fn get(&self, key: &str) -> Option<String> {
        Some(match key {
            "method" => self.method.to_string(),
            "arch" => self.arch.to_string(),
            "fusion" => self.fusion.to_string(),
            "noise_mode" => self.noise_mode.to_string(),
            "init" => self.init.to_string(),
            "pretrain_g" => self.pretrain.pretrain_g.to_string(),
            "pretrain_d" => self.pretrain.pretrain_d.to_string(),
            "g_input_noise_std" => self.pretrain.g_input_noise_std.to_string(),
            "d_input_noise_std" => self.pretrain.d_input_noise_std.to_string(),
            "pretrain_steps" => self.pretrain.pretrain_steps.to_string(),
            "combiner" => self.combiner.to_string(),
            "n_records" => self.data.n_records.to_string(),
            "image_dim" => self.data.image_dim.to_string(),
            "regions" => self.data.regions.to_string(),
            "vocab" => self.data.vocab.to_string(),
            "answers" => self.data.answers.to_string(),
            "type_mix" => join(&self.data.type_mix),
            "prior_skew" => self.data.prior_skew.to_string(),
            "annotator_agreement" => self.data.annotator_agreement.to_string(),
            "clusters" => self.data.clusters.to_string(),
            "templates_per_type" => self.data.templates_per_type.to_string(),
            "feature_noise_std" => self.data.noise_std.to_string(),
            "dataset" => self
                .dataset
                .as_ref()
                .map_or_else(|| "-".to_string(), |p| p.display().to_string()),
            "embed_dim" => self.embed_dim.to_string(),
            "rnn_hidden" => self.rnn_hidden.to_string(),
            "fused_dim" => self.fused_dim.to_string(),
            "noise_dim" => self.noise_dim.to_string(),
            "sketch_dim" => self.sketch_dim.to_string(),
            "g_hidden" => join(&self.g_hidden),
            "d_hidden" => join(&self.d_hidden),
            "condition_source" => self.condition_source.to_string(),
            "softmax_output" => self.softmax_output.to_string(),
            "convention" => convention_name(self.convention).to_string(),
            "d_noise_start" => self.d_noise_start.to_string(),
            "answer_smoothing" => self.answer_smoothing.to_string(),
            "code_dim" => self.code_dim.to_string(),
            "ae_hidden" => join(&self.ae_hidden),
            "lambda" => self.lambda.to_string(),
            "att_hidden" => self.att_hidden.to_string(),
            "att_classifier_hidden" => self.att_classifier_hidden.to_string(),
            "dropout" => self.dropout.to_string(),
            "layer_norm" => self.layer_norm.to_string(),
            "alpha" => self.alpha.to_string(),
            "batch" => self.batch.to_string(),
            "steps" => self.steps.to_string(),
            "seed" => self.seed.to_string(),
            "metric" => self.metric.to_string(),
            "validation_fraction" => self.validation_fraction.to_string(),
            _ => return None,
        })
    }

    /// Parses `key = value` lines over the defaults; `#` starts a comment.
    /// Does not validate; call [`RunConfig::validate`].
    pub fn parse_text(text: &str, path: &Path) -> Result<Self> {
        let mut cfg = RunConfig::default();
        for (key, value, line) in key_values(text, path)? {
            cfg.set(&key, &value).map_err(|e| at_line(e, path, line))?;
        }
        Ok(cfg)
    }

    /// Reads, parses, applies the seed override and validates.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::config("config", format!("cannot read {}: {e}", path.display())))?;
        let mut cfg = Self::parse_text(&text, path)?;
        cfg.apply_env_seed()?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Replaces `seed` with `VFL_SEED` when that is set.
    pub fn apply_env_seed(&mut self) -> Result<()> {
        if let Some(seed) = env_seed()? {
            self.seed = seed;
        }
        Ok(())
    }

    /// Full `key = value` listing that `parse_text` reads back unchanged.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for key in Self::KEYS {
            let _ = writeln!(s, "{key} = {}", self.get(key).expect("listed key"));
        }
        s
    }

    /// The dataset this run trains on.
    pub fn dataset_config(&self) -> DatasetConfig {
        DatasetConfig {
            seed: self.seed,
            ..self.data.clone()
        }
    }

    /// Deterministic init for one model part.
    pub fn init_mode(&self, part: u64) -> InitMode {
        InitMode::new(self.init, splitmix64(self.seed ^ 0x1A17).wrapping_add(part))
    }

    /// Seed of the run's training stream.
    pub fn train_seed(&self) -> u64 {
        splitmix64(self.seed ^ 0x7EA1)
    }

    /// Checks every field against the contracts of the parts it feeds.
    pub fn validate(&self) -> Result<()> {
        if self.dataset.is_none() {
            self.dataset_config().validate()?;
        }
        let positive = [
            ("n_records", self.data.n_records),
            ("embed_dim", self.embed_dim),
            ("rnn_hidden", self.rnn_hidden),
            ("fused_dim", self.fused_dim),
            ("noise_dim", self.noise_dim),
            ("code_dim", self.code_dim),
            ("att_hidden", self.att_hidden),
            ("att_classifier_hidden", self.att_classifier_hidden),
            ("batch", self.batch),
        ];
        for (field, v) in positive {
            if v == 0 {
                return Err(Error::config(field, "must be positive"));
            }
        }
        if !self.sketch_dim.is_power_of_two() || self.sketch_dim < 2 {
            return Err(Error::config("sketch_dim", format!("{} is not a power of two >= 2", self.sketch_dim)));
        }
        if self.arch == GeneratorArch::Full && self.g_hidden.len() != 3 {
            return Err(Error::config("g_hidden", "the full generator needs exactly three widths"));
        }
        for (field, widths) in [("g_hidden", &self.g_hidden), ("d_hidden", &self.d_hidden), ("ae_hidden", &self.ae_hidden)] {
            if widths.contains(&0) {
                return Err(Error::config(field, "widths must be positive"));
            }
        }
        if self.code_dim >= self.data.image_dim + self.data.vocab {
            return Err(Error::config("code_dim", "must be below image_dim + vocab"));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::config("dropout", "must lie in [0, 1)"));
        }
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(Error::config("alpha", "must be positive and finite"));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::config("lambda", "must be finite and >= 0"));
        }
        if !(self.d_noise_start >= 0.0 && self.d_noise_start.is_finite()) {
            return Err(Error::config("d_noise_start", "must be finite and >= 0"));
        }
        if !(0.0..1.0).contains(&self.answer_smoothing) {
            return Err(Error::config("answer_smoothing", "must lie in [0, 1)"));
        }
        if !(self.validation_fraction > 0.0 && self.validation_fraction < 1.0) {
            return Err(Error::config("validation_fraction", "must lie in (0, 1)"));
        }
        self.pretrain.validate()?;
        if self.method == Method::Gan && self.batch < 2 {
            return Err(Error::config("batch", "GAN-CLS needs at least two records per batch"));
        }
        Ok(())
    }

    /// Short row label, e.g. `GAN_full-N2-I1` or `attention+mcb`.
    pub fn label(&self) -> String {
        match self.method {
            Method::GClassifier => format!("G_{}-{}-{}", self.arch, self.noise_mode, self.init),
            Method::Gan => format!("GAN_{}-{}-{}", self.arch, self.noise_mode, self.init),
            Method::Autoencoder => "autoencoder".into(),
            Method::Attention => match self.combiner {
                Combiner::Addition => "attention".into(),
                Combiner::Mcb => "attention+mcb".into(),
            },
        }
    }
}

/// `VFL_SEED` as a seed, if set.
pub fn env_seed() -> Result<Option<u64>> {
    match std::env::var(SEED_ENV) {
        Ok(v) => v
            .trim()
            .parse()
            .map(Some)
            .map_err(|e| Error::config(SEED_ENV, format!("`{v}` is not a seed: {e}"))),
        Err(_) => Ok(None),
    }
}

/// `(key, value, line)` triples of a flat config text.
pub(crate) fn key_values(text: &str, path: &Path) -> Result<Vec<(String, String, usize)>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                msg: format!("expected `key = value`, got `{line}`"),
            });
        };
        out.push((k.trim().to_string(), v.trim().to_string(), i + 1));
    }
    Ok(out)
}

pub(crate) fn at_line(e: Error, path: &Path, line: usize) -> Error {
    match e {
        Error::Config { field, msg } => Error::Config {
            field,
            msg: format!("{msg} ({}:{line})", path.display()),
        },
        other => other,
    }
}
