use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Hash tables of a count sketch `R^d -> R^{d_s}`.
///
/// Both hashes are materialized at construction, so the sketch is a fixed
/// sparse linear map and gradients pass through it by its transpose.
#[derive(Debug, Clone, PartialEq)]
pub struct SketchPlan {
    sketch_dim: usize,
    index: Vec<usize>,
    sign: Vec<f64>,
    seed: u64,
}

impl SketchPlan {
    pub fn new(input_dim: usize, sketch_dim: usize, seed: u64) -> Result<Self> {
        check_sketch_dim(sketch_dim)?;
        if input_dim == 0 {
            return Err(Error::InvalidArgument("sketch input dim is zero".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut index = Vec::with_capacity(input_dim);
        let mut sign = Vec::with_capacity(input_dim);
        for _ in 0..input_dim {
            index.push(rng.random_range(0..sketch_dim));
            sign.push(if rng.random::<bool>() { 1.0 } else { -1.0 });
        }
        Ok(Self {
            sketch_dim,
            index,
            sign,
            seed,
        })
    }

    /// Builds a plan from explicit tables. Signs must be `+1` or `-1`.
    pub fn from_tables(index: Vec<usize>, sign: Vec<f64>, sketch_dim: usize) -> Result<Self> {
        check_sketch_dim(sketch_dim)?;
        if index.len() != sign.len() || index.is_empty() {
            return Err(Error::Shape(format!(
                "index table has {} entries, sign table {}",
                index.len(),
                sign.len()
            )));
        }
        if let Some(&h) = index.iter().find(|&&h| h >= sketch_dim) {
            return Err(Error::InvalidArgument(format!(
                "bucket {h} outside sketch dim {sketch_dim}"
            )));
        }
        if sign.iter().any(|&s| s != 1.0 && s != -1.0) {
            return Err(Error::InvalidArgument("signs must be +1 or -1".into()));
        }
        Ok(Self {
            sketch_dim,
            index,
            sign,
            seed: 0,
        })
    }

    /// Plan for the flattened outer product `x ⊗ y` (index `i * d_y + j`):
    /// buckets add modulo `d_s` and signs multiply.
    pub fn product(a: &SketchPlan, b: &SketchPlan) -> Result<Self> {
        if a.sketch_dim != b.sketch_dim {
            return Err(Error::Shape(format!(
                "sketch dims differ: {} vs {}",
                a.sketch_dim, b.sketch_dim
            )));
        }
        let ds = a.sketch_dim;
        let mut index = Vec::with_capacity(a.input_dim() * b.input_dim());
        let mut sign = Vec::with_capacity(index.capacity());
        for i in 0..a.input_dim() {
            for j in 0..b.input_dim() {
                index.push((a.index[i] + b.index[j]) % ds);
                sign.push(a.sign[i] * b.sign[j]);
            }
        }
        Ok(Self {
            sketch_dim: ds,
            index,
            sign,
            seed: a.seed ^ b.seed.rotate_left(32),
        })
    }

    pub fn input_dim(&self) -> usize {
        self.index.len()
    }

    pub fn sketch_dim(&self) -> usize {
        self.sketch_dim
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn bucket(&self, i: usize) -> usize {
        self.index[i]
    }

    pub fn sign(&self, i: usize) -> f64 {
        self.sign[i]
    }

    /// Sketch one vector into `out` (overwritten).
    pub(crate) fn apply_into(&self, x: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|v| *v = 0.0);
        for (i, &xi) in x.iter().enumerate() {
            out[self.index[i]] += self.sign[i] * xi;
        }
    }

    /// Transpose map: accumulates `s(i) * g[h(i)]` into `out`.
    pub(crate) fn transpose_add(&self, g: &[f64], out: &mut [f64]) {
        for (i, o) in out.iter_mut().enumerate() {
            *o += self.sign[i] * g[self.index[i]];
        }
    }
}

fn check_sketch_dim(d: usize) -> Result<()> {
    if d == 0 || !d.is_power_of_two() {
        return Err(Error::InvalidArgument(format!(
            "sketch dim {d} is not a power of two"
        )));
    }
    Ok(())
}

/// `out[h(i)] += s(i) * x[i]`.
pub fn count_sketch(x: &[f64], plan: &SketchPlan) -> Result<Vec<f64>> {
    if x.len() != plan.input_dim() {
        return Err(Error::Shape(format!(
            "sketch expects dim {}, got {}",
            plan.input_dim(),
            x.len()
        )));
    }
    let mut out = vec![0.0; plan.sketch_dim];
    plan.apply_into(x, &mut out);
    Ok(out)
}
