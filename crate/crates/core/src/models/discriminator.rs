use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::nn::{Access, Graph, InitMode, Initializer, Mlp, ParamId, ParamStore, Tensor, Var};

/// Keeps the sigmoid output strictly inside (0, 1) in floating point.
pub const OUTPUT_MARGIN: f64 = 1e-12;

/// What the discriminator is conditioned on besides the answer vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ConditionSource {
    /// The fused image-question embedding.
    Fused,
    /// Raw `[image features; question feature]`.
    RawConcat,
}

impl std::fmt::Display for ConditionSource {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ConditionSource::Fused => "fused",
            ConditionSource::RawConcat => "raw-concat",
        })
    }
}

impl std::str::FromStr for ConditionSource {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "fused" => Ok(ConditionSource::Fused),
            "raw-concat" | "raw_concat" | "raw" => Ok(ConditionSource::RawConcat),
            other => Err(format!("unknown condition source `{other}` (fused, raw-concat)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiscriminatorSpec {
    pub hidden: Vec<usize>,
    pub condition_source: ConditionSource,
    pub condition_dim: usize,
    pub answers: usize,
    /// Std of the Gaussian added to the input in training mode.
    pub input_noise_std: f64,
    pub dropout: f64,
    pub layer_norm: bool,
    pub init: InitMode,
}

/// Input noise and dropout masks for one discriminator call, sampled up
/// front so the same perturbation can be replayed in another trace.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Perturbation {
    pub input_noise: Option<Tensor>,
    pub masks: Vec<Option<Tensor>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Discriminator {
    spec: DiscriminatorSpec,
    mlp: Mlp,
}

impl Discriminator {
    pub fn new(store: &mut ParamStore, spec: DiscriminatorSpec) -> Result<Self> {
        if spec.answers == 0 || spec.condition_dim == 0 {
            return Err(Error::InvalidArgument("discriminator dims must be positive".into()));
        }
        if spec.input_noise_std.is_nan() || spec.input_noise_std < 0.0 {
            return Err(Error::InvalidArgument("input noise std must be >= 0".into()));
        }
        let mut init = Initializer::new(spec.init);
        let mut b = Mlp::builder(store, &mut init, "discriminator", spec.answers + spec.condition_dim);
        for &w in &spec.hidden {
            b = b
                .linear(w)?
                .layer_norm_if(spec.layer_norm)?
                .relu()?
                .dropout(spec.dropout)?;
        }
        let mlp = b.linear(1)?.sigmoid()?.build();
        Ok(Self { spec, mlp })
    }

    pub fn spec(&self) -> &DiscriminatorSpec {
        &self.spec
    }

    pub fn input_dim(&self) -> usize {
        self.mlp.in_dim()
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        self.mlp.param_ids()
    }

    pub fn mlp(&self) -> &Mlp {
        &self.mlp
    }

    /// Samples noise (std `noise_std`) and dropout masks; empty outside training.
    pub fn sample_perturbation<R: Rng + ?Sized>(
        &self,
        rows: usize,
        train: bool,
        noise_std: f64,
        rng: &mut R,
    ) -> Perturbation {
        if !train {
            return Perturbation::default();
        }
        let input_noise = (noise_std > 0.0).then(|| {
            let n = rows * self.input_dim();
            let data = (0..n)
                .map(|_| {
                    let e: f64 = StandardNormal.sample(&mut *rng);
                    noise_std * e
                })
                .collect();
            Tensor::new(vec![rows, self.input_dim()], data).expect("noise dims")
        });
        let masks = self.mlp.sample_masks(rows, true, rng);
        Perturbation { input_noise, masks }
    }

    /// Probabilities `[B, 1]` that `(answer, condition)` is a real matching pair.
    pub fn forward_with(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        answer: Var,
        condition: Var,
        perturbation: &Perturbation,
        access: Access,
    ) -> Result<Var> {
        if g.value(answer).cols() != self.spec.answers {
            return Err(Error::Shape(format!(
                "discriminator expects {} answer scores, got {}",
                self.spec.answers,
                g.value(answer).cols()
            )));
        }
        if g.value(condition).cols() != self.spec.condition_dim {
            return Err(Error::Shape(format!(
                "discriminator expects condition dim {}, got {}",
                self.spec.condition_dim,
                g.value(condition).cols()
            )));
        }
        let mut x = g.concat_cols(&[answer, condition])?;
        if let Some(eps) = &perturbation.input_noise {
            let e = g.input(eps.clone());
            x = g.add(x, e)?;
        }
        let s = self.mlp.forward_with_masks(g, store, x, access, &perturbation.masks)?;
        Ok(g.clamp(s, OUTPUT_MARGIN, 1.0 - OUTPUT_MARGIN))
    }

    #[allow(clippy::too_many_arguments)]
    pub fn forward<R: Rng + ?Sized>(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        answer: Var,
        condition: Var,
        access: Access,
        train: bool,
        rng: &mut R,
    ) -> Result<Var> {
        let p = self.sample_perturbation(g.value(answer).rows(), train, self.spec.input_noise_std, rng);
        self.forward_with(g, store, answer, condition, &p, access)
    }

    /// Scores one `(answer, condition)` pair outside any training trace.
    pub fn score<R: Rng + ?Sized>(
        &self,
        store: &ParamStore,
        answer: &[f64],
        condition: &[f64],
        train: bool,
        rng: &mut R,
    ) -> Result<f64> {
        let mut g = Graph::new();
        let a = g.input(Tensor::row(answer.to_vec()));
        let c = g.input(Tensor::row(condition.to_vec()));
        let s = self.forward(&mut g, store, a, c, Access::Frozen, train, rng)?;
        Ok(g.value(s).data()[0])
    }
}
