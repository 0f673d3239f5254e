use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use super::AnswerScores;
use crate::error::{Error, Result};
use crate::nn::{Access, Graph, InitMode, Initializer, Mlp, ParamId, ParamStore, Tensor, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum GeneratorArch {
    /// One linear layer.
    Simp,
    /// Three ReLU layers followed by a linear layer.
    Full,
}

impl std::fmt::Display for GeneratorArch {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            GeneratorArch::Simp => "simp",
            GeneratorArch::Full => "full",
        })
    }
}

impl std::str::FromStr for GeneratorArch {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "simp" | "simple" => Ok(GeneratorArch::Simp),
            "full" => Ok(GeneratorArch::Full),
            other => Err(format!("unknown generator arch `{other}` (simp, full)")),
        }
    }
}

/// How noise enters the generator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum NoiseMode {
    /// Fused embedding only.
    N0,
    /// `[fused; z]`, `z ~ N(0, 1)^Z`.
    N1,
    /// `fused + z`, `z ~ N(0, 1)^{d_f}`.
    N2,
}

impl std::fmt::Display for NoiseMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            NoiseMode::N0 => "N0",
            NoiseMode::N1 => "N1",
            NoiseMode::N2 => "N2",
        })
    }
}

impl std::str::FromStr for NoiseMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_uppercase().as_str() {
            "N0" => Ok(NoiseMode::N0),
            "N1" => Ok(NoiseMode::N1),
            "N2" => Ok(NoiseMode::N2),
            other => Err(format!("unknown noise mode `{other}` (N0, N1, N2)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorSpec {
    pub arch: GeneratorArch,
    pub noise_mode: NoiseMode,
    /// `Z`, used by `N1` only.
    pub noise_dim: usize,
    pub fused_dim: usize,
    pub answers: usize,
    /// Hidden widths of the full generator.
    pub hidden: Vec<usize>,
    pub dropout: f64,
    pub layer_norm: bool,
    pub init: InitMode,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Generator {
    spec: GeneratorSpec,
    mlp: Mlp,
}

impl Generator {
    pub fn new(store: &mut ParamStore, spec: GeneratorSpec) -> Result<Self> {
        if spec.answers == 0 || spec.fused_dim == 0 {
            return Err(Error::InvalidArgument("generator dims must be positive".into()));
        }
        if spec.noise_mode == NoiseMode::N1 && spec.noise_dim == 0 {
            return Err(Error::InvalidArgument("N1 needs a positive noise dim".into()));
        }
        let in_dim = match spec.noise_mode {
            NoiseMode::N1 => spec.fused_dim + spec.noise_dim,
            _ => spec.fused_dim,
        };
        let mut init = Initializer::new(spec.init);
        let mut b = Mlp::builder(store, &mut init, "generator", in_dim);
        if spec.arch == GeneratorArch::Full {
            if spec.hidden.len() != 3 {
                return Err(Error::InvalidArgument(format!(
                    "full generator has three hidden layers, got widths {:?}",
                    spec.hidden
                )));
            }
            for &w in &spec.hidden {
                b = b
                    .linear(w)?
                    .layer_norm_if(spec.layer_norm)?
                    .relu()?
                    .dropout(spec.dropout)?;
            }
        }
        let mlp = b.linear(spec.answers)?.build();
        Ok(Self { spec, mlp })
    }

    pub fn spec(&self) -> &GeneratorSpec {
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

    /// Noise for `rows` examples per the noise mode (`None` for `N0`).
    pub fn sample_noise<R: Rng + ?Sized>(&self, rows: usize, rng: &mut R) -> Option<Tensor> {
        let width = match self.spec.noise_mode {
            NoiseMode::N0 => return None,
            NoiseMode::N1 => self.spec.noise_dim,
            NoiseMode::N2 => self.spec.fused_dim,
        };
        let data = (0..rows * width)
            .map(|_| StandardNormal.sample(&mut *rng))
            .collect();
        Some(Tensor::new(vec![rows, width], data).expect("noise dims"))
    }

    /// Builds the generator input from the fused embedding and the noise.
    pub fn input(&self, g: &mut Graph, fused: Var, noise: Option<&Tensor>) -> Result<Var> {
        let (rows, width) = (g.value(fused).rows(), g.value(fused).cols());
        if width != self.spec.fused_dim {
            return Err(Error::Shape(format!(
                "generator expects fused dim {}, got {width}",
                self.spec.fused_dim
            )));
        }
        let expect = match self.spec.noise_mode {
            NoiseMode::N0 => None,
            NoiseMode::N1 => Some(self.spec.noise_dim),
            NoiseMode::N2 => Some(self.spec.fused_dim),
        };
        match (expect, noise) {
            (None, _) => Ok(fused),
            (Some(w), Some(z)) if z.rows() == rows && z.cols() == w => {
                let z = g.input(z.clone());
                if self.spec.noise_mode == NoiseMode::N1 {
                    g.concat_cols(&[fused, z])
                } else {
                    g.add(fused, z)
                }
            }
            (Some(w), _) => Err(Error::Shape(format!(
                "{} needs noise of shape [{rows}, {w}]",
                self.spec.noise_mode
            ))),
        }
    }

    /// Raw answer scores `[B, K]`.
    #[allow(clippy::too_many_arguments)]
    pub fn forward<R: Rng + ?Sized>(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        fused: Var,
        noise: Option<&Tensor>,
        access: Access,
        train: bool,
        rng: &mut R,
    ) -> Result<Var> {
        let x = self.input(g, fused, noise)?;
        self.mlp.forward(g, store, x, access, train, rng)
    }

    /// Evaluation-mode scores for one fused vector; noise is drawn from `rng`.
    pub fn generate<R: Rng + ?Sized>(
        &self,
        store: &ParamStore,
        fused: &Tensor,
        rng: &mut R,
    ) -> Result<AnswerScores> {
        let mut g = Graph::new();
        let f = g.input(fused.clone());
        let z = self.sample_noise(fused.rows(), rng);
        let out = self.forward(&mut g, store, f, z.as_ref(), Access::Frozen, false, rng)?;
        Ok(AnswerScores::new(g.value(out).row_slice(0).to_vec()))
    }
}
