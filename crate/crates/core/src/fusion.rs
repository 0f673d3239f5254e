//! Image-question fusion: element-wise product ("simple"), gated product plus
//! attention vector ("full"), and compact bilinear pooling ("mcb").

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::nn::{Access, Graph, Initializer, ParamId, ParamStore, Tensor, Var};
use crate::signal::SketchPlan;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FusionStrategy {
    Simple,
    Full,
    Mcb,
}

impl std::fmt::Display for FusionStrategy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            FusionStrategy::Simple => "simple",
            FusionStrategy::Full => "full",
            FusionStrategy::Mcb => "mcb",
        })
    }
}

impl std::str::FromStr for FusionStrategy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "simple" => Ok(FusionStrategy::Simple),
            "full" => Ok(FusionStrategy::Full),
            "mcb" => Ok(FusionStrategy::Mcb),
            other => Err(format!("unknown fusion `{other}` (simple, full, mcb)")),
        }
    }
}

/// A fused joint vector, detached from any trace.
#[derive(Debug, Clone, PartialEq)]
pub struct FusedEmbedding {
    pub vector: Tensor,
    pub strategy: FusionStrategy,
}

/// Affine map `x -> W x + b` with `W: [out, in]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Projection {
    pub weight: ParamId,
    pub bias: ParamId,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Projection {
    pub fn new(
        store: &mut ParamStore,
        init: &mut Initializer,
        name: &str,
        in_dim: usize,
        out_dim: usize,
    ) -> Result<Self> {
        let p = init.layer(in_dim, out_dim)?;
        Ok(Self {
            weight: store.add(format!("{name}.weight"), p.weights),
            bias: store.add(format!("{name}.bias"), p.bias),
            in_dim,
            out_dim,
        })
    }

    pub fn apply(&self, g: &mut Graph, store: &ParamStore, x: Var, access: Access) -> Result<Var> {
        let got = g.value(x).cols();
        if got != self.in_dim {
            return Err(Error::Shape(format!(
                "projection expects {} features, got {got}",
                self.in_dim
            )));
        }
        let w = access.leaf(g, store, self.weight);
        let b = access.leaf(g, store, self.bias);
        g.linear(x, w, Some(b))
    }

    pub fn param_ids(&self) -> [ParamId; 2] {
        [self.weight, self.bias]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimpleFusion {
    pub img: Projection,
    pub q: Projection,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FullFusion {
    pub img: Projection,
    pub q: Projection,
    /// `[2 d_f] -> [d_f]` sigmoid gate over `[u; v]`.
    pub gate: Projection,
    /// `[2 d_f] -> [d_f]` final projection of `[p; a]`.
    pub out: Projection,
}

#[derive(Debug, Clone, PartialEq)]
pub struct McbFusion {
    pub plan_img: Arc<SketchPlan>,
    pub plan_q: Arc<SketchPlan>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Fusion {
    Simple(SimpleFusion),
    Full(FullFusion),
    Mcb(McbFusion),
}

/// `tanh(W_i v_img + b_i) ⊙ tanh(W_q v_q + b_q)`.
pub fn fuse_simple(
    g: &mut Graph,
    store: &ParamStore,
    params: &SimpleFusion,
    img: Var,
    q: Var,
    access: Access,
) -> Result<Var> {
    let pi = params.img.apply(g, store, img, access)?;
    let pq = params.q.apply(g, store, q, access)?;
    let u = g.tanh(pi);
    let v = g.tanh(pq);
    g.mul(u, v)
}

/// `u = tanh(W_i v_img)`, `v = tanh(W_q v_q)`, `p = u ⊙ v`,
/// `a = σ(W_a [u; v]) ⊙ (u + v)`, output `tanh(W_o [p; a])`.
pub fn fuse_full(
    g: &mut Graph,
    store: &ParamStore,
    params: &FullFusion,
    img: Var,
    q: Var,
    access: Access,
) -> Result<Var> {
    let pi = params.img.apply(g, store, img, access)?;
    let pq = params.q.apply(g, store, q, access)?;
    let u = g.tanh(pi);
    let v = g.tanh(pq);
    let p = g.mul(u, v)?;
    let uv = g.concat_cols(&[u, v])?;
    let gate_pre = params.gate.apply(g, store, uv, access)?;
    let gate = g.sigmoid(gate_pre);
    let sum = g.add(u, v)?;
    let a = g.mul(gate, sum)?;
    let pa = g.concat_cols(&[p, a])?;
    let o = params.out.apply(g, store, pa, access)?;
    Ok(g.tanh(o))
}

/// Circular convolution of the two count sketches, i.e. the count sketch of
/// the outer product, before any normalization.
pub fn mcb_pool_raw(
    g: &mut Graph,
    img: Var,
    q: Var,
    plan_img: &Arc<SketchPlan>,
    plan_q: &Arc<SketchPlan>,
) -> Result<Var> {
    if plan_img.sketch_dim() != plan_q.sketch_dim() {
        return Err(Error::Shape(format!(
            "mcb plans disagree on sketch dim: {} vs {}",
            plan_img.sketch_dim(),
            plan_q.sketch_dim()
        )));
    }
    let si = g.count_sketch(img, Arc::clone(plan_img))?;
    let sq = g.count_sketch(q, Arc::clone(plan_q))?;
    g.circ_conv(si, sq)
}

/// Compact bilinear pooling followed by signed square root and L2 normalization.
pub fn fuse_mcb(
    g: &mut Graph,
    img: Var,
    q: Var,
    plan_img: &Arc<SketchPlan>,
    plan_q: &Arc<SketchPlan>,
) -> Result<Var> {
    let raw = mcb_pool_raw(g, img, q, plan_img, plan_q)?;
    let s = g.signed_sqrt(raw);
    Ok(g.l2_norm_rows(s))
}

impl Fusion {
    pub fn simple(
        store: &mut ParamStore,
        init: &mut Initializer,
        img_dim: usize,
        q_dim: usize,
        fused_dim: usize,
    ) -> Result<Self> {
        Ok(Fusion::Simple(SimpleFusion {
            img: Projection::new(store, init, "fusion.img", img_dim, fused_dim)?,
            q: Projection::new(store, init, "fusion.q", q_dim, fused_dim)?,
        }))
    }

    pub fn full(
        store: &mut ParamStore,
        init: &mut Initializer,
        img_dim: usize,
        q_dim: usize,
        fused_dim: usize,
    ) -> Result<Self> {
        Ok(Fusion::Full(FullFusion {
            img: Projection::new(store, init, "fusion.img", img_dim, fused_dim)?,
            q: Projection::new(store, init, "fusion.q", q_dim, fused_dim)?,
            gate: Projection::new(store, init, "fusion.gate", 2 * fused_dim, fused_dim)?,
            out: Projection::new(store, init, "fusion.out", 2 * fused_dim, fused_dim)?,
        }))
    }

    pub fn mcb(img_dim: usize, q_dim: usize, sketch_dim: usize, seed: u64) -> Result<Self> {
        Ok(Fusion::Mcb(McbFusion {
            plan_img: Arc::new(SketchPlan::new(img_dim, sketch_dim, seed)?),
            plan_q: Arc::new(SketchPlan::new(q_dim, sketch_dim, seed.wrapping_add(1))?),
        }))
    }

    pub fn build(
        strategy: FusionStrategy,
        store: &mut ParamStore,
        init: &mut Initializer,
        img_dim: usize,
        q_dim: usize,
        fused_dim: usize,
        sketch_dim: usize,
        sketch_seed: u64,
    ) -> Result<Self> {
        match strategy {
            FusionStrategy::Simple => Fusion::simple(store, init, img_dim, q_dim, fused_dim),
            FusionStrategy::Full => Fusion::full(store, init, img_dim, q_dim, fused_dim),
            FusionStrategy::Mcb => Fusion::mcb(img_dim, q_dim, sketch_dim, sketch_seed),
        }
    }

    pub fn strategy(&self) -> FusionStrategy {
        match self {
            Fusion::Simple(_) => FusionStrategy::Simple,
            Fusion::Full(_) => FusionStrategy::Full,
            Fusion::Mcb(_) => FusionStrategy::Mcb,
        }
    }

    pub fn out_dim(&self) -> usize {
        match self {
            Fusion::Simple(p) => p.img.out_dim,
            Fusion::Full(p) => p.out.out_dim,
            Fusion::Mcb(p) => p.plan_img.sketch_dim(),
        }
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        match self {
            Fusion::Simple(p) => [p.img.param_ids(), p.q.param_ids()].concat(),
            Fusion::Full(p) => [
                p.img.param_ids(),
                p.q.param_ids(),
                p.gate.param_ids(),
                p.out.param_ids(),
            ]
            .concat(),
            Fusion::Mcb(_) => Vec::new(),
        }
    }

    /// Row-batched fusion of `img: [B, d_i]` and `q: [B, d_q]`.
    pub fn forward(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        img: Var,
        q: Var,
        access: Access,
    ) -> Result<Var> {
        if g.value(img).rows() != g.value(q).rows() {
            return Err(Error::Shape("image and question batches differ".into()));
        }
        match self {
            Fusion::Simple(p) => fuse_simple(g, store, p, img, q, access),
            Fusion::Full(p) => fuse_full(g, store, p, img, q, access),
            Fusion::Mcb(p) => fuse_mcb(g, img, q, &p.plan_img, &p.plan_q),
        }
    }

    /// Evaluates the fusion outside any training trace.
    pub fn embed(&self, store: &ParamStore, img: &Tensor, q: &Tensor) -> Result<FusedEmbedding> {
        let mut g = Graph::new();
        let i = g.input(img.clone());
        let qv = g.input(q.clone());
        let out = self.forward(&mut g, store, i, qv, Access::Frozen)?;
        Ok(FusedEmbedding {
            vector: g.value(out).clone(),
            strategy: self.strategy(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{InitMode, InitScheme};

    fn set_eye(store: &mut ParamStore, p: &Projection) {
        let mut w = Tensor::zeros(vec![p.out_dim, p.in_dim]);
        for i in 0..p.out_dim.min(p.in_dim) {
            w.data_mut()[i * p.in_dim + i] = 1.0;
        }
        *store.get_mut(p.weight) = w;
    }

    fn zero_all(store: &mut ParamStore, ids: &[ParamId]) {
        for &id in ids {
            let shape = store.get(id).shape().to_vec();
            *store.get_mut(id) = Tensor::zeros(shape);
        }
    }

    #[test]
    fn simple_identity_projection() {
        let mut store = ParamStore::new();
        let mut init = Initializer::new(InitMode::new(InitScheme::I2, 1));
        let f = Fusion::simple(&mut store, &mut init, 2, 2, 2).unwrap();
        let Fusion::Simple(p) = &f else { unreachable!() };
        set_eye(&mut store, &p.img);
        set_eye(&mut store, &p.q);
        let out = f
            .embed(&store, &Tensor::row(vec![1.0, 1.0]), &Tensor::row(vec![1.0, 1.0]))
            .unwrap();
        let t = 1f64.tanh().powi(2);
        assert!((t - 0.5800).abs() < 1e-4);
        for v in out.vector.data() {
            assert!((v - t).abs() < 1e-15);
        }
    }

    #[test]
    fn simple_zero_image_annihilates() {
        let mut store = ParamStore::new();
        let mut init = Initializer::new(InitMode::new(InitScheme::I2, 1));
        let f = Fusion::simple(&mut store, &mut init, 3, 4, 5).unwrap();
        let out = f
            .embed(&store, &Tensor::zeros(vec![1, 3]), &Tensor::row(vec![1.0, -2.0, 0.5, 3.0]))
            .unwrap();
        assert!(out.vector.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn full_zero_weights_give_zero() {
        let mut store = ParamStore::new();
        let mut init = Initializer::new(InitMode::new(InitScheme::I2, 2));
        let f = Fusion::full(&mut store, &mut init, 3, 3, 4).unwrap();
        zero_all(&mut store, &f.param_ids());
        let out = f
            .embed(&store, &Tensor::row(vec![1.0, 2.0, 3.0]), &Tensor::row(vec![-1.0, 0.5, 2.0]))
            .unwrap();
        assert!(out.vector.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn mcb_plan_mismatch_rejected() {
        let mut g = Graph::new();
        let a = g.input(Tensor::row(vec![1.0; 4]));
        let b = g.input(Tensor::row(vec![1.0; 4]));
        let p1 = Arc::new(SketchPlan::new(4, 8, 0).unwrap());
        let p2 = Arc::new(SketchPlan::new(4, 16, 0).unwrap());
        assert!(fuse_mcb(&mut g, a, b, &p1, &p2).is_err());
    }

    #[test]
    fn mcb_output_is_unit_norm() {
        let f = Fusion::mcb(5, 3, 16, 4).unwrap();
        let store = ParamStore::new();
        let out = f
            .embed(
                &store,
                &Tensor::row(vec![0.3, -1.0, 2.0, 0.1, 0.7]),
                &Tensor::row(vec![1.0, 0.2, -0.4]),
            )
            .unwrap();
        let norm: f64 = out.vector.data().iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!((norm - 1.0).abs() < 1e-9);
        assert_eq!(out.strategy, FusionStrategy::Mcb);
    }
}
