use rand::Rng;

use super::init::Initializer;
use super::{Graph, ParamId, ParamStore, Tensor, Var};
use crate::error::{Error, Result};

pub const DEFAULT_DROPOUT: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerKind {
    Linear,
    Tanh,
    Relu,
    Sigmoid,
    Softmax,
    Dropout,
    LayerNorm,
    RnnCell,
}

/// Whether parameter leaves are tracked for gradients in a forward pass.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Access {
    Tracked,
    Frozen,
}

impl Access {
    pub(crate) fn leaf(self, g: &mut Graph, store: &ParamStore, id: ParamId) -> Var {
        match self {
            Access::Tracked => g.param(store, id),
            Access::Frozen => g.frozen(store, id),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Layer {
    Linear {
        weight: ParamId,
        bias: ParamId,
        in_dim: usize,
        out_dim: usize,
    },
    Tanh,
    Relu,
    Sigmoid,
    Softmax,
    Dropout {
        rate: f64,
    },
    LayerNorm,
}

impl Layer {
    pub fn kind(&self) -> LayerKind {
        match self {
            Layer::Linear { .. } => LayerKind::Linear,
            Layer::Tanh => LayerKind::Tanh,
            Layer::Relu => LayerKind::Relu,
            Layer::Sigmoid => LayerKind::Sigmoid,
            Layer::Softmax => LayerKind::Softmax,
            Layer::Dropout { .. } => LayerKind::Dropout,
            Layer::LayerNorm => LayerKind::LayerNorm,
        }
    }
}

/// A layer sequence. Linear layers own their parameters in a [`ParamStore`].
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    layers: Vec<Layer>,
    in_dim: usize,
    out_dim: usize,
}

pub struct MlpBuilder<'a> {
    store: &'a mut ParamStore,
    init: &'a mut Initializer,
    name: String,
    layers: Vec<Layer>,
    in_dim: usize,
    cur: usize,
}

impl<'a> MlpBuilder<'a> {
    pub fn linear(mut self, out_dim: usize) -> Result<Self> {
        let p = self.init.layer(self.cur, out_dim)?;
        let i = self.layers.len();
        let weight = self.store.add(format!("{}.{i}.weight", self.name), p.weights);
        let bias = self.store.add(format!("{}.{i}.bias", self.name), p.bias);
        self.layers.push(Layer::Linear {
            weight,
            bias,
            in_dim: self.cur,
            out_dim,
        });
        self.cur = out_dim;
        Ok(self)
    }

    pub fn push(mut self, layer: Layer) -> Result<Self> {
        match layer {
            Layer::Linear { .. } => {
                return Err(Error::InvalidArgument(
                    "use MlpBuilder::linear for affine layers".into(),
                ))
            }
            Layer::Dropout { rate } if !(0.0..1.0).contains(&rate) => {
                return Err(Error::InvalidArgument(format!(
                    "dropout rate {rate} outside [0, 1)"
                )))
            }
            _ => {}
        }
        self.layers.push(layer);
        Ok(self)
    }

    pub fn tanh(self) -> Result<Self> {
        self.push(Layer::Tanh)
    }

    pub fn relu(self) -> Result<Self> {
        self.push(Layer::Relu)
    }

    pub fn sigmoid(self) -> Result<Self> {
        self.push(Layer::Sigmoid)
    }

    pub fn softmax(self) -> Result<Self> {
        self.push(Layer::Softmax)
    }

    /// Rate 0 adds nothing.
    pub fn dropout(self, rate: f64) -> Result<Self> {
        if rate == 0.0 {
            return Ok(self);
        }
        self.push(Layer::Dropout { rate })
    }

    pub fn layer_norm_if(self, enabled: bool) -> Result<Self> {
        if enabled {
            self.push(Layer::LayerNorm)
        } else {
            Ok(self)
        }
    }

    pub fn build(self) -> Mlp {
        Mlp {
            layers: self.layers,
            in_dim: self.in_dim,
            out_dim: self.cur,
        }
    }
}

impl Mlp {
    pub fn builder<'a>(
        store: &'a mut ParamStore,
        init: &'a mut Initializer,
        name: impl Into<String>,
        in_dim: usize,
    ) -> MlpBuilder<'a> {
        MlpBuilder {
            store,
            init,
            name: name.into(),
            layers: Vec::new(),
            in_dim,
            cur: in_dim,
        }
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn in_dim(&self) -> usize {
        self.in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.out_dim
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        self.layers
            .iter()
            .flat_map(|l| match l {
                Layer::Linear { weight, bias, .. } => vec![*weight, *bias],
                _ => vec![],
            })
            .collect()
    }

    /// The last affine layer, if any.
    pub fn last_linear(&self) -> Option<(ParamId, ParamId)> {
        self.layers.iter().rev().find_map(|l| match l {
            Layer::Linear { weight, bias, .. } => Some((*weight, *bias)),
            _ => None,
        })
    }

    /// One inverted-dropout mask per dropout layer (`None` outside training).
    pub fn sample_masks<R: Rng + ?Sized>(
        &self,
        rows: usize,
        train: bool,
        rng: &mut R,
    ) -> Vec<Option<Tensor>> {
        let mut width = self.in_dim;
        let mut masks = Vec::new();
        for layer in &self.layers {
            match layer {
                Layer::Linear { out_dim, .. } => width = *out_dim,
                Layer::Dropout { rate } => {
                    if train && *rate > 0.0 {
                        let keep = 1.0 / (1.0 - rate);
                        let data = (0..rows * width)
                            .map(|_| if rng.random::<f64>() < *rate { 0.0 } else { keep })
                            .collect();
                        masks.push(Some(
                            Tensor::new(vec![rows, width], data).expect("mask dims"),
                        ));
                    } else {
                        masks.push(None);
                    }
                }
                _ => {}
            }
        }
        masks
    }

    /// Forward pass with dropout masks drawn from `rng` when `train` is set.
    pub fn forward<R: Rng + ?Sized>(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        x: Var,
        access: Access,
        train: bool,
        rng: &mut R,
    ) -> Result<Var> {
        let masks = self.sample_masks(g.value(x).rows(), train, rng);
        self.forward_with_masks(g, store, x, access, &masks)
    }

    /// Forward pass with explicit dropout masks, so two traces can share them.
    pub fn forward_with_masks(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        x: Var,
        access: Access,
        masks: &[Option<Tensor>],
    ) -> Result<Var> {
        let mut h = x;
        let mut mask_iter = masks.iter();
        for (i, layer) in self.layers.iter().enumerate() {
            h = match layer {
                Layer::Linear {
                    weight,
                    bias,
                    in_dim,
                    ..
                } => {
                    let got = g.value(h).cols();
                    if got != *in_dim {
                        return Err(Error::LayerShape {
                            layer: i,
                            msg: format!("expected {in_dim} inputs, got {got}"),
                        });
                    }
                    let w = access.leaf(g, store, *weight);
                    let b = access.leaf(g, store, *bias);
                    g.linear(h, w, Some(b))?
                }
                Layer::Tanh => g.tanh(h),
                Layer::Relu => g.relu(h),
                Layer::Sigmoid => g.sigmoid(h),
                Layer::Softmax => g.softmax_rows(h),
                Layer::LayerNorm => g.layer_norm_rows(h),
                Layer::Dropout { .. } => match mask_iter.next() {
                    Some(Some(mask)) => {
                        if mask.shape() != g.value(h).shape() {
                            return Err(Error::LayerShape {
                                layer: i,
                                msg: format!(
                                    "dropout mask {:?} for activation {:?}",
                                    mask.shape(),
                                    g.value(h).shape()
                                ),
                            });
                        }
                        let m = g.input(mask.clone());
                        g.mul(h, m)?
                    }
                    _ => h,
                },
            };
        }
        Ok(h)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{InitMode, InitScheme};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn identity_linear(store: &mut ParamStore, n: usize) -> Mlp {
        let mut init = Initializer::new(InitMode::new(InitScheme::I1, 0));
        let mlp = Mlp::builder(store, &mut init, "id", n)
            .linear(n)
            .unwrap()
            .build();
        let (w, b) = mlp.last_linear().unwrap();
        let mut eye = Tensor::zeros(vec![n, n]);
        for i in 0..n {
            eye.data_mut()[i * n + i] = 1.0;
        }
        *store.get_mut(w) = eye;
        *store.get_mut(b) = Tensor::zeros(vec![n]);
        mlp
    }

    #[test]
    fn identity_linear_passes_input() {
        let mut store = ParamStore::new();
        let mlp = identity_linear(&mut store, 3);
        let mut g = Graph::new();
        let x = g.input(Tensor::row(vec![1.0, 2.0, 3.0]));
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let y = mlp
            .forward(&mut g, &store, x, Access::Tracked, false, &mut rng)
            .unwrap();
        assert_eq!(g.value(y).data(), &[1.0, 2.0, 3.0]);
    }

    #[test]
    fn tanh_of_zero() {
        let mut store = ParamStore::new();
        let mut init = Initializer::new(InitMode::new(InitScheme::I1, 0));
        let mlp = Mlp::builder(&mut store, &mut init, "t", 4)
            .tanh()
            .unwrap()
            .build();
        let mut g = Graph::new();
        let x = g.input(Tensor::zeros(vec![1, 4]));
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let y = mlp
            .forward(&mut g, &store, x, Access::Frozen, true, &mut rng)
            .unwrap();
        assert_eq!(g.value(y).data(), &[0.0; 4]);
    }

    #[test]
    fn mismatch_reports_layer_index() {
        let mut store = ParamStore::new();
        let mut init = Initializer::new(InitMode::new(InitScheme::I1, 0));
        let mlp = Mlp::builder(&mut store, &mut init, "m", 4)
            .linear(5)
            .unwrap()
            .relu()
            .unwrap()
            .linear(2)
            .unwrap()
            .build();
        let mut g = Graph::new();
        let x = g.input(Tensor::zeros(vec![1, 3]));
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let err = mlp
            .forward(&mut g, &store, x, Access::Tracked, false, &mut rng)
            .unwrap_err();
        assert!(matches!(err, Error::LayerShape { layer: 0, .. }));
    }

    #[test]
    fn dropout_identity_in_eval() {
        let mut store = ParamStore::new();
        let mut init = Initializer::new(InitMode::new(InitScheme::I1, 0));
        let mlp = Mlp::builder(&mut store, &mut init, "d", 6)
            .dropout(0.5)
            .unwrap()
            .build();
        let x_val = Tensor::row(vec![1.0, -2.0, 3.0, 0.5, 4.0, -1.0]);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut g = Graph::new();
        let x = g.input(x_val.clone());
        let y = mlp
            .forward(&mut g, &store, x, Access::Tracked, false, &mut rng)
            .unwrap();
        assert_eq!(g.value(y), &x_val);
        let mut g = Graph::new();
        let x = g.input(x_val.clone());
        let y = mlp
            .forward(&mut g, &store, x, Access::Tracked, true, &mut rng)
            .unwrap();
        assert!(g
            .value(y)
            .data()
            .iter()
            .zip(x_val.data())
            .all(|(o, i)| *o == 0.0 || (*o - 2.0 * i).abs() < 1e-15));
    }

    #[test]
    fn zero_rate_dropout_is_dropped() {
        let mut store = ParamStore::new();
        let mut init = Initializer::new(InitMode::new(InitScheme::I1, 0));
        let mlp = Mlp::builder(&mut store, &mut init, "d", 3)
            .dropout(0.0)
            .unwrap()
            .build();
        assert!(mlp.layers().is_empty());
        let mut store = ParamStore::new();
        assert!(Mlp::builder(&mut store, &mut init, "d", 3)
            .dropout(1.0)
            .is_err());
    }
}
