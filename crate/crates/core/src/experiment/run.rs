use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::{Method, RunConfig};
use crate::data::{evaluate_model, generate_dataset, load_dataset, train_validation_split, EvalBreakdown, VqaRecord};
use crate::error::{Error, Result};
use crate::models::{
    AutoencoderSpec, CoAttentionSpec, Checkpoint, DiscriminatorSpec, EncoderSpec, GeneratorSpec,
};
use crate::nn::{splitmix64, ParamStore};
use crate::training::{
    pretrain_discriminator, pretrain_generator, train_attention, train_autoencoder_vqa, train_gan,
    AttentionModel, AutoencoderModel, GanClsState, GanConfig, GanModel, LossLog, TaskConfig,
};

/// Evaluation batch size; only bounds trace memory.
const EVAL_BATCH: usize = 256;

/// A model of any method together with its parameters.
#[derive(Debug, Clone, PartialEq)]
pub enum TrainedModel {
    Gan(GanModel),
    Autoencoder(AutoencoderModel),
    Attention(AttentionModel),
}

impl TrainedModel {
    /// Freshly initialized model for `cfg`.
    pub fn build(cfg: &RunConfig) -> Result<Self> {
        Ok(match cfg.method {
            Method::GClassifier | Method::Gan => TrainedModel::Gan(GanModel::new(
                EncoderSpec {
                    vocab: cfg.data.vocab,
                    embed_dim: cfg.embed_dim,
                    rnn_hidden: cfg.rnn_hidden,
                    image_dim: cfg.data.image_dim,
                    fusion: cfg.fusion,
                    fused_dim: cfg.fused_dim,
                    sketch_dim: cfg.sketch_dim,
                    sketch_seed: splitmix64(cfg.seed ^ 0x5CE7),
                    init: cfg.init_mode(1),
                },
                GeneratorSpec {
                    arch: cfg.arch,
                    noise_mode: cfg.noise_mode,
                    noise_dim: cfg.noise_dim,
                    fused_dim: 0,
                    answers: cfg.data.answers,
                    hidden: cfg.g_hidden.clone(),
                    dropout: cfg.dropout,
                    layer_norm: cfg.layer_norm,
                    init: cfg.init_mode(2),
                },
                DiscriminatorSpec {
                    hidden: cfg.d_hidden.clone(),
                    condition_source: cfg.condition_source,
                    condition_dim: 0,
                    answers: 0,
                    input_noise_std: cfg.pretrain.d_input_noise_std,
                    dropout: cfg.dropout,
                    layer_norm: cfg.layer_norm,
                    init: cfg.init_mode(3),
                },
                cfg.softmax_output,
            )?),
            Method::Autoencoder => TrainedModel::Autoencoder(AutoencoderModel::new(
                AutoencoderSpec {
                    input_dim: cfg.data.image_dim + cfg.data.vocab,
                    code_dim: cfg.code_dim,
                    head_hidden: cfg.ae_hidden.clone(),
                    answers: cfg.data.answers,
                    init: cfg.init_mode(4),
                },
                cfg.data.vocab,
            )?),
            Method::Attention => TrainedModel::Attention(AttentionModel::new(CoAttentionSpec {
                vocab: cfg.data.vocab,
                embed_dim: cfg.embed_dim,
                image_dim: cfg.data.image_dim,
                regions: cfg.data.regions,
                hidden: cfg.att_hidden,
                combiner: cfg.combiner,
                sketch_dim: cfg.sketch_dim,
                sketch_seed: splitmix64(cfg.seed ^ 0x5CE7),
                classifier_hidden: cfg.att_classifier_hidden,
                answers: cfg.data.answers,
                init: cfg.init_mode(5),
            })?),
        })
    }

    pub fn store(&self) -> &ParamStore {
        match self {
            TrainedModel::Gan(m) => &m.store,
            TrainedModel::Autoencoder(m) => &m.store,
            TrainedModel::Attention(m) => &m.store,
        }
    }

    pub fn store_mut(&mut self) -> &mut ParamStore {
        match self {
            TrainedModel::Gan(m) => &mut m.store,
            TrainedModel::Autoencoder(m) => &mut m.store,
            TrainedModel::Attention(m) => &mut m.store,
        }
    }

    /// Argmax answers; generator noise comes from a stream fixed by `seed`.
    pub fn predict(&self, records: &[VqaRecord], seed: u64) -> Result<Vec<usize>> {
        match self {
            TrainedModel::Gan(m) => m.predict(records, &mut ChaCha8Rng::seed_from_u64(seed)),
            TrainedModel::Autoencoder(m) => m.predict(records),
            TrainedModel::Attention(m) => m.predict(records),
        }
    }

    pub fn checkpoint(&self, cfg: &RunConfig) -> Checkpoint {
        Checkpoint::from_store(arch_tag(cfg), dims(cfg), cfg.init_mode(0), self.store())
    }

    /// Rebuilds the model for `cfg` and loads the checkpoint into it.
    pub fn restore(cfg: &RunConfig, ckpt: &Checkpoint) -> Result<Self> {
        let mut m = Self::build(cfg)?;
        ckpt.restore(&arch_tag(cfg), &dims(cfg), m.store_mut())?;
        Ok(m)
    }
}

fn arch_tag(cfg: &RunConfig) -> String {
    match cfg.method {
        Method::GClassifier | Method::Gan => format!(
            "{}:{}:{}:{}:{}",
            cfg.method, cfg.arch, cfg.noise_mode, cfg.fusion, cfg.condition_source
        ),
        Method::Autoencoder => "autoencoder".into(),
        Method::Attention => format!("attention:{}", cfg.combiner),
    }
}

fn dims(cfg: &RunConfig) -> Vec<u64> {
    let mut d = vec![
        cfg.data.image_dim,
        cfg.data.vocab,
        cfg.data.answers,
        cfg.embed_dim,
        cfg.rnn_hidden,
        cfg.fused_dim,
        cfg.noise_dim,
        cfg.sketch_dim,
    ];
    d.extend(&cfg.g_hidden);
    d.push(0);
    d.extend(&cfg.d_hidden);
    d.into_iter().map(|v| v as u64).collect()
}

/// Records for `cfg`: loaded from `cfg.dataset` or generated from its seed.
pub fn prepare_records(cfg: &RunConfig) -> Result<Vec<VqaRecord>> {
    let records = match &cfg.dataset {
        Some(path) => load_dataset(path)?,
        None => generate_dataset(&cfg.dataset_config())?,
    };
    for (i, r) in records.iter().enumerate() {
        if r.image_features.len() != cfg.data.image_dim {
            return Err(Error::config(
                "image_dim",
                format!("record {i} has {} image features", r.image_features.len()),
            ));
        }
        r.validate(Some(cfg.data.vocab), Some(cfg.data.answers))
            .map_err(|e| Error::config("dataset", format!("record {i}: {e}")))?;
    }
    Ok(records)
}

/// Named loss logs of one run, in the order they were produced.
pub type RunLogs = Vec<(String, LossLog)>;

/// Trains a fresh model for `cfg` on `train`.
///
/// `g_classifier` runs `steps` steps of noisy cross-entropy on the
/// generator; `gan` runs the configured pretraining and then `steps`
/// GAN-CLS steps.
pub fn train_model(cfg: &RunConfig, train: &[VqaRecord]) -> Result<(TrainedModel, RunLogs)> {
    let mut model = TrainedModel::build(cfg)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.train_seed());
    let mut logs = Vec::new();
    let task = TaskConfig {
        alpha: cfg.alpha,
        steps: cfg.steps,
        batch: cfg.batch,
        lambda: cfg.lambda,
    };
    match (&mut model, cfg.method) {
        (TrainedModel::Gan(m), Method::GClassifier) => {
            let plan = crate::training::PretrainPlan {
                pretrain_g: true,
                pretrain_steps: cfg.steps,
                ..cfg.pretrain
            };
            logs.push(("loss".into(), pretrain_generator(m, train, &plan, cfg.alpha, cfg.batch, &mut rng)?));
        }
        (TrainedModel::Gan(m), _) => {
            if cfg.pretrain.pretrain_g {
                let log = pretrain_generator(m, train, &cfg.pretrain, cfg.alpha, cfg.batch, &mut rng)?;
                logs.push(("pretrain_g".into(), log));
            }
            if cfg.pretrain.pretrain_d {
                let log = pretrain_discriminator(m, train, &cfg.pretrain, cfg.alpha, cfg.batch, &mut rng)?;
                logs.push(("pretrain_d".into(), log));
            }
            let config = GanConfig {
                alpha: cfg.alpha,
                steps: cfg.steps,
                batch: cfg.batch,
                convention: cfg.convention,
                d_noise_start: cfg.d_noise_start,
                answer_smoothing: cfg.answer_smoothing,
            };
            let mut state = GanClsState::new(m.clone(), config);
            train_gan(&mut state, train, &mut rng)?;
            *m = state.model;
            logs.push(("loss".into(), state.log));
        }
        (TrainedModel::Autoencoder(m), _) => {
            logs.push(("loss".into(), train_autoencoder_vqa(m, train, &task, &mut rng)?));
        }
        (TrainedModel::Attention(m), _) => {
            logs.push(("loss".into(), train_attention(m, train, &task, &mut rng)?));
        }
    }
    Ok((model, logs))
}

/// Scores `model` on `records` under `cfg.metric`.
pub fn evaluate(cfg: &RunConfig, model: &TrainedModel, records: &[VqaRecord]) -> Result<EvalBreakdown> {
    let mut chunk = 0u64;
    let seed = splitmix64(cfg.seed ^ 0xE7A1);
    evaluate_model(records, cfg.metric, EVAL_BATCH, |c| {
        chunk += 1;
        model.predict(c, seed.wrapping_add(chunk))
    })
}

/// Result of [`execute`].
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub model: TrainedModel,
    pub logs: RunLogs,
    /// Scores on the validation split.
    pub breakdown: EvalBreakdown,
}

impl RunOutcome {
    /// The main training log (the adversarial one for GAN runs).
    pub fn loss_log(&self) -> &LossLog {
        &self.logs.iter().find(|(n, _)| n == "loss").expect("every run logs `loss`").1
    }
}

/// Splits, trains on the front part and scores the held-out tail.
pub fn execute(cfg: &RunConfig, records: &[VqaRecord]) -> Result<RunOutcome> {
    cfg.validate()?;
    let (train, val) = train_validation_split(records, cfg.validation_fraction);
    if train.len() < 2 || val.is_empty() {
        return Err(Error::config(
            "n_records",
            format!("{} records leave no usable train/validation split", records.len()),
        ));
    }
    let (model, logs) = train_model(cfg, train)?;
    let breakdown = evaluate(cfg, &model, val)?;
    Ok(RunOutcome { model, logs, breakdown })
}

/// Writes `checkpoint.bin`, one CSV per loss log and `eval.csv` into `dir`.
pub fn save_outcome(cfg: &RunConfig, outcome: &RunOutcome, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    outcome.model.checkpoint(cfg).save(&dir.join("checkpoint.bin"))?;
    for (name, log) in &outcome.logs {
        log.save(&dir.join(format!("{name}.csv")))?;
    }
    outcome
        .breakdown
        .write_csv(std::fs::File::create(dir.join("eval.csv"))?)?;
    std::fs::write(dir.join("config.cfg"), cfg.to_text())?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::Combiner;

    fn tiny(method: Method) -> RunConfig {
        let mut c = RunConfig {
            method,
            embed_dim: 4,
            rnn_hidden: 8,
            fused_dim: 8,
            noise_dim: 4,
            sketch_dim: 16,
            g_hidden: vec![16, 16, 16],
            d_hidden: vec![16],
            code_dim: 8,
            ae_hidden: vec![16],
            att_hidden: 8,
            att_classifier_hidden: 8,
            steps: 12,
            batch: 8,
            seed: 5,
            ..RunConfig::default()
        };
        c.data.n_records = 120;
        c.data.image_dim = 16;
        c.data.vocab = 12;
        c.data.answers = 8;
        c.data.templates_per_type = 2;
        c.pretrain.pretrain_steps = 5;
        c
    }

    #[test]
    fn gan_log_has_one_row_per_step() {
        let mut cfg = tiny(Method::Gan);
        cfg.pretrain.pretrain_g = true;
        cfg.pretrain.pretrain_d = true;
        let records = prepare_records(&cfg).unwrap();
        let out = execute(&cfg, &records).unwrap();
        assert_eq!(out.loss_log().len(), cfg.steps);
        let names: Vec<&str> = out.logs.iter().map(|(n, _)| n.as_str()).collect();
        assert_eq!(names, ["pretrain_g", "pretrain_d", "loss"]);
        assert_eq!(out.logs[0].1.len(), 5);
    }

    #[test]
    fn zero_steps_keep_initialization() {
        for method in [Method::Gan, Method::GClassifier, Method::Autoencoder, Method::Attention] {
            let mut cfg = tiny(method);
            cfg.steps = 0;
            let records = prepare_records(&cfg).unwrap();
            let out = execute(&cfg, &records).unwrap();
            assert_eq!(out.model, TrainedModel::build(&cfg).unwrap(), "{method}");
        }
    }

    #[test]
    fn reruns_are_identical() {
        for method in [Method::Gan, Method::Autoencoder, Method::Attention] {
            let cfg = tiny(method);
            let records = prepare_records(&cfg).unwrap();
            let a = execute(&cfg, &records).unwrap();
            let b = execute(&cfg, &records).unwrap();
            assert_eq!(a.breakdown, b.breakdown);
            assert_eq!(a.model, b.model);
        }
    }

    #[test]
    fn checkpoint_restores_predictions() {
        let mut att = tiny(Method::Attention);
        att.combiner = Combiner::Mcb;
        for cfg in [tiny(Method::Gan), tiny(Method::Autoencoder), att] {
            let records = prepare_records(&cfg).unwrap();
            let out = execute(&cfg, &records).unwrap();
            let mut bytes = Vec::new();
            out.model.checkpoint(&cfg).write_to(&mut bytes).unwrap();
            let back = TrainedModel::restore(&cfg, &Checkpoint::read_from(bytes.as_slice()).unwrap()).unwrap();
            assert_eq!(back, out.model);
            assert_eq!(evaluate(&cfg, &back, &records).unwrap(), evaluate(&cfg, &out.model, &records).unwrap());
        }
    }

    #[test]
    fn checkpoint_for_other_method_is_rejected() {
        let cfg = tiny(Method::Autoencoder);
        let ckpt = TrainedModel::build(&cfg).unwrap().checkpoint(&cfg);
        assert!(matches!(TrainedModel::restore(&tiny(Method::Attention), &ckpt), Err(Error::Checkpoint(_))));
    }

    #[test]
    fn divergence_is_numerical() {
        let mut cfg = tiny(Method::Autoencoder);
        cfg.alpha = 1e150;
        let records = prepare_records(&cfg).unwrap();
        let e = execute(&cfg, &records).unwrap_err();
        assert!(e.is_numerical(), "{e}");
        assert_eq!(e.exit_code(), 3);
    }

    #[test]
    fn dataset_must_fit_the_config() {
        let cfg = tiny(Method::Gan);
        let records = prepare_records(&cfg).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.jsonl");
        crate::data::save_dataset(&records, &path).unwrap();
        let mut other = cfg.clone();
        other.dataset = Some(path);
        assert_eq!(prepare_records(&other).unwrap(), records);
        other.data.image_dim = 8;
        assert!(prepare_records(&other).unwrap_err().is_config());
    }
}
