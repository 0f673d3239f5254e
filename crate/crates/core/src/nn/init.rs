use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use super::Tensor;
use crate::error::{Error, Result};

/// Standard deviation of the clipped-Gaussian scheme.
pub const I1_STD: f64 = 0.02;
/// Clip bound of the clipped-Gaussian scheme, in standard deviations.
pub const I1_CLIP_SIGMAS: f64 = 2.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum InitScheme {
    /// `N(0, 0.02)` with samples clipped to `±2σ`.
    I1,
    /// Glorot uniform on `[-a, a]`, `a = sqrt(6 / (fan_in + fan_out))`.
    I2,
}

impl InitScheme {
    pub fn tag(self) -> u8 {
        match self {
            InitScheme::I1 => 1,
            InitScheme::I2 => 2,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            1 => Some(InitScheme::I1),
            2 => Some(InitScheme::I2),
            _ => None,
        }
    }
}

impl std::fmt::Display for InitScheme {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            InitScheme::I1 => "I1",
            InitScheme::I2 => "I2",
        })
    }
}

impl std::str::FromStr for InitScheme {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_uppercase().as_str() {
            "I1" => Ok(InitScheme::I1),
            "I2" => Ok(InitScheme::I2),
            other => Err(format!("unknown init scheme `{other}` (expected I1 or I2)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct InitMode {
    pub scheme: InitScheme,
    pub seed: u64,
}

impl InitMode {
    pub fn new(scheme: InitScheme, seed: u64) -> Self {
        Self { scheme, seed }
    }

    /// Independent stream for a sub-component.
    pub fn derive(&self, salt: u64) -> InitMode {
        InitMode {
            scheme: self.scheme,
            seed: splitmix64(self.seed ^ splitmix64(salt)),
        }
    }
}

pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Weight `[out, in]` and bias `[out]` of one affine layer.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams {
    pub weights: Tensor,
    pub bias: Tensor,
}

/// Sequential weight source: every call continues the same seeded stream.
#[derive(Debug, Clone)]
pub struct Initializer {
    scheme: InitScheme,
    rng: ChaCha8Rng,
}

impl Initializer {
    pub fn new(mode: InitMode) -> Self {
        Self {
            scheme: mode.scheme,
            rng: ChaCha8Rng::seed_from_u64(mode.seed),
        }
    }

    pub fn scheme(&self) -> InitScheme {
        self.scheme
    }

    /// A `[rows, cols]` matrix whose fans are `cols` (in) and `rows` (out).
    pub fn matrix(&mut self, rows: usize, cols: usize) -> Result<Tensor> {
        self.matrix_with_fans(rows, cols, cols, rows)
    }

    pub fn matrix_with_fans(
        &mut self,
        rows: usize,
        cols: usize,
        fan_in: usize,
        fan_out: usize,
    ) -> Result<Tensor> {
        if rows == 0 || cols == 0 {
            return Err(Error::InvalidArgument(format!(
                "layer dims must be positive, got {rows}x{cols}"
            )));
        }
        let n = rows * cols;
        let data: Vec<f64> = match self.scheme {
            InitScheme::I1 => {
                let normal = Normal::new(0.0, I1_STD).expect("valid std");
                let bound = I1_CLIP_SIGMAS * I1_STD;
                (0..n)
                    .map(|_| normal.sample(&mut self.rng).clamp(-bound, bound))
                    .collect()
            }
            InitScheme::I2 => {
                let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
                (0..n).map(|_| self.rng.random_range(-a..=a)).collect()
            }
        };
        Tensor::new(vec![rows, cols], data)
    }

    /// A `[rows, cols]` lookup table of standard normal entries, whatever
    /// the scheme. Table rows stand in for preprocessed token features
    /// rather than layer weights, so they get unit scale.
    pub fn lookup_table(&mut self, rows: usize, cols: usize) -> Result<Tensor> {
        if rows == 0 || cols == 0 {
            return Err(Error::InvalidArgument(format!(
                "table dims must be positive, got {rows}x{cols}"
            )));
        }
        let data = (0..rows * cols).map(|_| StandardNormal.sample(&mut self.rng)).collect();
        Tensor::new(vec![rows, cols], data)
    }

    pub fn layer(&mut self, in_dim: usize, out_dim: usize) -> Result<LayerParams> {
        Ok(LayerParams {
            weights: self.matrix(out_dim, in_dim)?,
            bias: Tensor::zeros(vec![out_dim]),
        })
    }
}

/// Fresh weights for one `in_dim -> out_dim` affine layer; biases start at zero.
pub fn init_params(in_dim: usize, out_dim: usize, mode: InitMode) -> Result<LayerParams> {
    Initializer::new(mode).layer(in_dim, out_dim)
}
