use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use super::common::{cross_entropy, image_batch, one_hot, Batcher, LossKind, LossLog, LossRow};
use super::mismatch::sample_mismatched;
use crate::data::VqaRecord;
use crate::error::{Error, Result};
use crate::models::{
    ConditionSource, Discriminator, DiscriminatorSpec, Encoded, EncoderSpec, Generator,
    GeneratorSpec, Perturbation, QuestionImageEncoder,
};
use crate::nn::{sgd_step, Access, Graph, ParamId, ParamStore, Tensor, Var};

/// Probabilities are clamped to `[EPS, 1 - EPS]` before taking logs.
pub const SATURATION_EPS: f64 = 1e-7;

/// Retries when a sampled batch admits no answer-distinct mismatch.
const MISMATCH_RETRIES: usize = 64;

/// Direction of the parameter updates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum UpdateConvention {
    /// Ascend `L_D` for D and `L_G` for G (descent on the negations).
    #[default]
    Ascent,
    /// Descend `L_D` and `L_G` as literally written in the update rule.
    LiteralDescent,
}

impl std::fmt::Display for UpdateConvention {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            UpdateConvention::Ascent => "ascent",
            UpdateConvention::LiteralDescent => "literal-descent",
        })
    }
}

impl std::str::FromStr for UpdateConvention {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "ascent" => Ok(UpdateConvention::Ascent),
            "literal-descent" | "literal_descent" | "descent" => Ok(UpdateConvention::LiteralDescent),
            other => Err(format!("unknown update convention `{other}` (ascent, literal-descent)")),
        }
    }
}

/// Question encoder, fusion, generator and discriminator sharing one store.
#[derive(Debug, Clone, PartialEq)]
pub struct GanModel {
    pub store: ParamStore,
    pub encoder: QuestionImageEncoder,
    pub generator: Generator,
    pub discriminator: Discriminator,
    /// Feed `softmax(G output)` to D instead of raw scores.
    pub softmax_output: bool,
}

impl GanModel {
    /// Builds all parts; the generator's fused width and the discriminator's
    /// condition width are taken from the encoder.
    pub fn new(
        encoder: EncoderSpec,
        mut generator: GeneratorSpec,
        mut discriminator: DiscriminatorSpec,
        softmax_output: bool,
    ) -> Result<Self> {
        let mut store = ParamStore::new();
        let encoder = QuestionImageEncoder::new(&mut store, encoder)?;
        generator.fused_dim = encoder.out_dim();
        discriminator.answers = generator.answers;
        discriminator.condition_dim = match discriminator.condition_source {
            ConditionSource::Fused => encoder.out_dim(),
            ConditionSource::RawConcat => encoder.raw_dim(),
        };
        let generator = Generator::new(&mut store, generator)?;
        let discriminator = Discriminator::new(&mut store, discriminator)?;
        Ok(Self {
            store,
            encoder,
            generator,
            discriminator,
            softmax_output,
        })
    }

    pub fn answers(&self) -> usize {
        self.generator.spec().answers
    }

    /// Encoder and generator parameters: everything G's objective trains.
    pub fn generator_side_ids(&self) -> Vec<ParamId> {
        [self.encoder.param_ids(), self.generator.param_ids()].concat()
    }

    pub fn encode(&self, g: &mut Graph, batch: &[&VqaRecord], access: Access) -> Result<Encoded> {
        let images = image_batch(batch)?;
        let questions: Vec<&[usize]> = batch.iter().map(|r| r.question_tokens.as_slice()).collect();
        self.encoder.encode(g, &self.store, &images, &questions, access)
    }

    /// The discriminator's condition, cut off from the encoder's gradients.
    pub fn condition(&self, g: &mut Graph, enc: &Encoded) -> Result<Var> {
        match self.discriminator.spec().condition_source {
            ConditionSource::Fused => Ok(g.detach(enc.fused)),
            ConditionSource::RawConcat => {
                let q = g.detach(enc.question);
                g.concat_cols(&[enc.image, q])
            }
        }
    }

    fn d_view(&self, g: &mut Graph, scores: Var) -> Var {
        if self.softmax_output {
            g.softmax_rows(scores)
        } else {
            scores
        }
    }

    /// Evaluation-mode argmax answers; generator noise comes from `rng`.
    pub fn predict<R: Rng + ?Sized>(&self, records: &[VqaRecord], rng: &mut R) -> Result<Vec<usize>> {
        let batch: Vec<&VqaRecord> = records.iter().collect();
        let mut g = Graph::new();
        let enc = self.encode(&mut g, &batch, Access::Frozen)?;
        let z = self.generator.sample_noise(batch.len(), rng);
        let out = self
            .generator
            .forward(&mut g, &self.store, enc.fused, z.as_ref(), Access::Frozen, false, rng)?;
        Ok(g.value(out).argmax_rows())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GanConfig {
    pub alpha: f64,
    pub steps: usize,
    pub batch: usize,
    pub convention: UpdateConvention,
    /// Discriminator input noise at step 1, decaying linearly to 0 at `steps`.
    pub d_noise_start: f64,
    /// Label smoothing of the real answer vectors shown to D.
    pub answer_smoothing: f64,
}

impl Default for GanConfig {
    fn default() -> Self {
        Self {
            alpha: 0.1,
            steps: 2000,
            batch: 32,
            convention: UpdateConvention::Ascent,
            d_noise_start: 0.1,
            answer_smoothing: 0.0,
        }
    }
}

impl GanConfig {
    /// Noise std used for step `n` (1-based).
    pub fn d_noise_at(&self, n: usize) -> f64 {
        if self.steps <= 1 {
            return self.d_noise_start;
        }
        let frac = (n.saturating_sub(1)) as f64 / (self.steps - 1) as f64;
        (self.d_noise_start * (1.0 - frac)).max(0.0)
    }
}

/// Mutable training state of one adversarial run.
#[derive(Debug, Clone)]
pub struct GanClsState {
    pub model: GanModel,
    pub config: GanConfig,
    /// Completed steps.
    pub step: usize,
    pub log: LossLog,
    /// Clamped probabilities over the whole run.
    pub saturations: usize,
}

impl GanClsState {
    pub fn new(model: GanModel, config: GanConfig) -> Self {
        Self {
            model,
            config,
            step: 0,
            log: LossLog::new(LossKind::Adversarial),
            saturations: 0,
        }
    }
}

/// Batch means `L_D = log s_r + (log(1 - s_w) + log(1 - s_f)) / 2` and
/// `L_G = log s_f`, with every probability clamped to `[EPS, 1 - EPS]`.
///
/// `s_f_d` and `s_f_g` are the same forward value seen through the
/// discriminator's and the generator's branch of the trace.
pub fn gan_losses(
    g: &mut Graph,
    s_r: Var,
    s_w: Var,
    s_f_d: Var,
    s_f_g: Var,
) -> Result<(Var, Var, usize)> {
    let lo = SATURATION_EPS;
    let hi = 1.0 - SATURATION_EPS;
    let saturated = [s_r, s_w, s_f_d]
        .iter()
        .flat_map(|&v| g.value(v).data().to_vec())
        .filter(|&s| !(lo..=hi).contains(&s))
        .count();
    let log_of = |g: &mut Graph, s: Var| {
        let c = g.clamp(s, lo, hi);
        g.log(c)
    };
    let log_not = |g: &mut Graph, s: Var| {
        let c = g.clamp(s, lo, hi);
        let neg = g.scale(c, -1.0);
        let one_minus = g.offset(neg, 1.0);
        g.log(one_minus)
    };
    let lr = log_of(g, s_r);
    let lw = log_not(g, s_w);
    let lf = log_not(g, s_f_d);
    let fake_terms = g.add(lw, lf)?;
    let half = g.scale(fake_terms, 0.5);
    let per_row = g.add(lr, half)?;
    let l_d = g.mean(per_row);
    let lg = log_of(g, s_f_g);
    let l_g = g.mean(lg);
    Ok((l_d, l_g, saturated))
}

fn draw_batch<'a, R: Rng + ?Sized>(
    records: &'a [VqaRecord],
    batcher: &mut Batcher,
    rng: &mut R,
) -> Result<(Vec<&'a VqaRecord>, Vec<usize>)> {
    let mut last = None;
    for _ in 0..MISMATCH_RETRIES {
        let batch: Vec<&VqaRecord> = batcher.next(rng).into_iter().map(|i| &records[i]).collect();
        let answers: Vec<usize> = batch.iter().map(|r| r.ground_truth).collect();
        match sample_mismatched(&answers, rng) {
            Ok(p) => return Ok((batch, p)),
            Err(e) => last = Some(e),
        }
    }
    Err(last.unwrap_or_else(|| Error::NoMismatch("no batch".into())))
}

struct StepTrace {
    graph: Graph,
    l_d: Var,
    l_g: Var,
    saturated: usize,
}

fn build_step<R: Rng + ?Sized>(
    model: &GanModel,
    config: &GanConfig,
    batch: &[&VqaRecord],
    partner: &[usize],
    d_noise: f64,
    train: bool,
    rng: &mut R,
) -> Result<StepTrace> {
    let b = batch.len();
    let mut g = Graph::new();
    let enc = model.encode(&mut g, batch, Access::Tracked)?;
    let cond = model.condition(&mut g, &enc)?;
    let cond_wrong = g.gather_rows(cond, partner)?;
    let labels: Vec<usize> = batch.iter().map(|r| r.ground_truth).collect();
    let x = g.input(one_hot(&labels, model.answers(), config.answer_smoothing));

    let z = model.generator.sample_noise(b, rng);
    let x_hat = model.generator.forward(
        &mut g,
        &model.store,
        enc.fused,
        z.as_ref(),
        Access::Tracked,
        train,
        rng,
    )?;
    let x_hat = model.d_view(&mut g, x_hat);
    let x_hat_d = g.detach(x_hat);

    let d = &model.discriminator;
    let p_r = d.sample_perturbation(b, train, d_noise, rng);
    let p_w = d.sample_perturbation(b, train, d_noise, rng);
    let p_f = d.sample_perturbation(b, train, d_noise, rng);
    let s_r = d.forward_with(&mut g, &model.store, x, cond, &p_r, Access::Tracked)?;
    let s_w = d.forward_with(&mut g, &model.store, x, cond_wrong, &p_w, Access::Tracked)?;
    let s_f_d = d.forward_with(&mut g, &model.store, x_hat_d, cond, &p_f, Access::Tracked)?;
    let s_f_g = d.forward_with(&mut g, &model.store, x_hat, cond, &p_f, Access::Frozen)?;
    let (l_d, l_g, saturated) = gan_losses(&mut g, s_r, s_w, s_f_d, s_f_g)?;
    Ok(StepTrace {
        graph: g,
        l_d,
        l_g,
        saturated,
    })
}

/// Evaluation-mode trace of both objectives `(graph, L_D, L_G)`: no input
/// noise or dropout, generator noise from `rng`.
pub fn gan_objective_trace<R: Rng + ?Sized>(
    model: &GanModel,
    config: &GanConfig,
    batch: &[&VqaRecord],
    partner: &[usize],
    rng: &mut R,
) -> Result<(Graph, Var, Var)> {
    let t = build_step(model, config, batch, partner, 0.0, false, rng)?;
    Ok((t.graph, t.l_d, t.l_g))
}

/// One adversarial update on `batch` with mismatch partners `partner`.
/// Returns the batch losses `(L_D, L_G)` measured before the update.
pub fn gan_cls_step_with<R: Rng + ?Sized>(
    state: &mut GanClsState,
    batch: &[&VqaRecord],
    partner: &[usize],
    rng: &mut R,
) -> Result<(f64, f64)> {
    if batch.is_empty() || partner.len() != batch.len() {
        return Err(Error::InvalidArgument("empty batch or partner mismatch".into()));
    }
    let n = state.step + 1;
    let d_noise = state.config.d_noise_at(n);
    let mut t = build_step(&state.model, &state.config, batch, partner, d_noise, true, rng)?;
    let l_d = t.graph.value(t.l_d).data()[0];
    let l_g = t.graph.value(t.l_g).data()[0];
    if !l_d.is_finite() || !l_g.is_finite() {
        return Err(Error::NonFinite(format!(
            "GAN losses at step {n} (last good step {})",
            state.step
        )));
    }
    // D's objective reaches only D (all of its inputs are detached) and G's
    // reaches only the generator side (D is frozen on that branch), so one
    // backward pass over their sum yields both players' gradients.
    let sign = match state.config.convention {
        UpdateConvention::Ascent => -1.0,
        UpdateConvention::LiteralDescent => 1.0,
    };
    let both = t.graph.add(t.l_d, t.l_g)?;
    let objective = t.graph.scale(both, sign);
    let grads = t.graph.backward_scalar(objective)?;
    sgd_step(&mut state.model.store, &grads, state.config.alpha)?;
    state.step = n;
    state.saturations += t.saturated;
    state.log.push(LossRow {
        step: n,
        primary: l_d,
        secondary: l_g,
        saturation_count: t.saturated,
    })?;
    Ok((l_d, l_g))
}

/// One adversarial update; mismatch partners are drawn from `rng`.
pub fn gan_cls_step<R: Rng + ?Sized>(
    state: &mut GanClsState,
    batch: &[&VqaRecord],
    rng: &mut R,
) -> Result<(f64, f64)> {
    let answers: Vec<usize> = batch.iter().map(|r| r.ground_truth).collect();
    let partner = sample_mismatched(&answers, rng)?;
    gan_cls_step_with(state, batch, &partner, rng)
}

/// `(L_D, L_G)` on a batch without noise, dropout or updates.
pub fn evaluate_gan_losses<R: Rng + ?Sized>(
    model: &GanModel,
    config: &GanConfig,
    batch: &[&VqaRecord],
    partner: &[usize],
    rng: &mut R,
) -> Result<(f64, f64)> {
    let t = build_step(model, config, batch, partner, 0.0, false, rng)?;
    Ok((t.graph.value(t.l_d).data()[0], t.graph.value(t.l_g).data()[0]))
}

/// Runs `config.steps` adversarial steps over `records`.
pub fn train_gan<R: Rng + ?Sized>(state: &mut GanClsState, records: &[VqaRecord], rng: &mut R) -> Result<()> {
    let mut batcher = Batcher::new(records.len(), state.config.batch)?;
    while state.step < state.config.steps {
        let (batch, partner) = draw_batch(records, &mut batcher, rng)?;
        gan_cls_step_with(state, &batch, &partner, rng)?;
    }
    Ok(())
}

/// Which parts are pretrained before adversarial training, and how.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PretrainPlan {
    pub pretrain_g: bool,
    pub pretrain_d: bool,
    pub g_input_noise_std: f64,
    pub d_input_noise_std: f64,
    pub pretrain_steps: usize,
}

impl Default for PretrainPlan {
    fn default() -> Self {
        Self {
            pretrain_g: false,
            pretrain_d: false,
            g_input_noise_std: 0.1,
            d_input_noise_std: 0.1,
            pretrain_steps: 500,
        }
    }
}

impl PretrainPlan {
    pub fn validate(&self) -> Result<()> {
        for (field, v) in [
            ("g_input_noise_std", self.g_input_noise_std),
            ("d_input_noise_std", self.d_input_noise_std),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::config(field, format!("must be finite and >= 0, got {v}")));
            }
        }
        Ok(())
    }
}

/// Trains the encoder and generator as a softmax classifier, with Gaussian
/// noise of std `plan.g_input_noise_std` added to the fused embedding.
pub fn pretrain_generator<R: Rng + ?Sized>(
    model: &mut GanModel,
    records: &[VqaRecord],
    plan: &PretrainPlan,
    alpha: f64,
    batch: usize,
    rng: &mut R,
) -> Result<LossLog> {
    plan.validate()?;
    let mut log = LossLog::new(LossKind::Task);
    if plan.pretrain_steps == 0 {
        return Ok(log);
    }
    let ids = model.generator_side_ids();
    let mut batcher = Batcher::new(records.len(), batch)?;
    for step in 1..=plan.pretrain_steps {
        let batch: Vec<&VqaRecord> = batcher.next(rng).into_iter().map(|i| &records[i]).collect();
        let mut g = Graph::new();
        let enc = model.encode(&mut g, &batch, Access::Tracked)?;
        let mut fused = enc.fused;
        if plan.g_input_noise_std > 0.0 {
            let (rows, cols) = (g.value(fused).rows(), g.value(fused).cols());
            let data = (0..rows * cols)
                .map(|_| {
                    let e: f64 = StandardNormal.sample(&mut *rng);
                    plan.g_input_noise_std * e
                })
                .collect();
            let noise = g.input(Tensor::new(vec![rows, cols], data)?);
            fused = g.add(fused, noise)?;
        }
        let z = model.generator.sample_noise(batch.len(), rng);
        let scores = model
            .generator
            .forward(&mut g, &model.store, fused, z.as_ref(), Access::Tracked, true, rng)?;
        let labels: Vec<usize> = batch.iter().map(|r| r.ground_truth).collect();
        let loss = cross_entropy(&mut g, scores, &labels)?;
        let value = g.value(loss).data()[0];
        log.push(LossRow {
            step,
            primary: value,
            secondary: 0.0,
            saturation_count: 0,
        })?;
        let grads = g.backward_scalar(loss)?.restrict(&ids);
        sgd_step(&mut model.store, &grads, alpha)?;
    }
    Ok(log)
}

/// Trains D to score `(true answer, matched condition)` as real and
/// `(true answer, mismatched condition)` as fake, with input noise
/// `plan.d_input_noise_std`.
pub fn pretrain_discriminator<R: Rng + ?Sized>(
    model: &mut GanModel,
    records: &[VqaRecord],
    plan: &PretrainPlan,
    alpha: f64,
    batch: usize,
    rng: &mut R,
) -> Result<LossLog> {
    plan.validate()?;
    let mut log = LossLog::new(LossKind::Task);
    if plan.pretrain_steps == 0 {
        return Ok(log);
    }
    let ids = model.discriminator.param_ids();
    let mut batcher = Batcher::new(records.len(), batch)?;
    for step in 1..=plan.pretrain_steps {
        let (batch, partner) = draw_batch(records, &mut batcher, rng)?;
        let b = batch.len();
        let mut g = Graph::new();
        let enc = model.encode(&mut g, &batch, Access::Frozen)?;
        let cond = model.condition(&mut g, &enc)?;
        let wrong = g.gather_rows(cond, &partner)?;
        let labels: Vec<usize> = batch.iter().map(|r| r.ground_truth).collect();
        let x = g.input(one_hot(&labels, model.answers(), 0.0));
        let d = &model.discriminator;
        let p_r = d.sample_perturbation(b, true, plan.d_input_noise_std, rng);
        let p_w = d.sample_perturbation(b, true, plan.d_input_noise_std, rng);
        let s_r = d.forward_with(&mut g, &model.store, x, cond, &p_r, Access::Tracked)?;
        let s_w = d.forward_with(&mut g, &model.store, x, wrong, &p_w, Access::Tracked)?;
        let loss = bce_real_fake(&mut g, s_r, s_w)?;
        log.push(LossRow {
            step,
            primary: g.value(loss).data()[0],
            secondary: 0.0,
            saturation_count: 0,
        })?;
        let grads = g.backward_scalar(loss)?.restrict(&ids);
        sgd_step(&mut model.store, &grads, alpha)?;
    }
    Ok(log)
}

/// `-mean(log s_real + log(1 - s_fake))`.
fn bce_real_fake(g: &mut Graph, s_real: Var, s_fake: Var) -> Result<Var> {
    let lo = SATURATION_EPS;
    let hi = 1.0 - SATURATION_EPS;
    let r = g.clamp(s_real, lo, hi);
    let lr = g.log(r);
    let f = g.clamp(s_fake, lo, hi);
    let nf = g.scale(f, -1.0);
    let one_minus = g.offset(nf, 1.0);
    let lf = g.log(one_minus);
    let sum = g.add(lr, lf)?;
    let m = g.mean(sum);
    Ok(g.scale(m, -1.0))
}

/// Fraction of records whose matched pair D scores above a mismatched one;
/// ties count half.
pub fn discriminator_ranking<R: Rng + ?Sized>(
    model: &GanModel,
    records: &[VqaRecord],
    rng: &mut R,
) -> Result<f64> {
    let batch: Vec<&VqaRecord> = records.iter().collect();
    let answers: Vec<usize> = batch.iter().map(|r| r.ground_truth).collect();
    let partner = sample_mismatched(&answers, rng)?;
    let mut g = Graph::new();
    let enc = model.encode(&mut g, &batch, Access::Frozen)?;
    let cond = model.condition(&mut g, &enc)?;
    let wrong = g.gather_rows(cond, &partner)?;
    let x = g.input(one_hot(&answers, model.answers(), 0.0));
    let none = Perturbation::default();
    let s_r = model.discriminator.forward_with(&mut g, &model.store, x, cond, &none, Access::Frozen)?;
    let s_w = model.discriminator.forward_with(&mut g, &model.store, x, wrong, &none, Access::Frozen)?;
    let wins: f64 = g
        .value(s_r)
        .data()
        .iter()
        .zip(g.value(s_w).data())
        .map(|(r, w)| match r.partial_cmp(w) {
            Some(std::cmp::Ordering::Greater) => 1.0,
            Some(std::cmp::Ordering::Equal) => 0.5,
            _ => 0.0,
        })
        .sum();
    Ok(wins / batch.len() as f64)
}
