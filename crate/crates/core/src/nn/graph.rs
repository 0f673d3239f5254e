//! Tape-based reverse-mode differentiation over 2-D row-batched tensors.
//!
//! Every op appends a node holding its forward value. `backward` walks the
//! tape once in reverse and returns gradients for the parameter leaves.

use std::sync::Arc;

use super::{Gradients, ParamId, ParamStore, Tensor};
use crate::error::{Error, Result};
use crate::signal::{circular_convolve, circular_correlate, SketchPlan};

const LAYERNORM_EPS: f64 = 1e-10;
const L2NORM_EPS: f64 = 1e-24;

/// Handle to a node on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op {
    Input,
    Param(ParamId),
    Linear { x: Var, w: Var, b: Option<Var> },
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    MulCol(Var, Var),
    Scale(Var, f64),
    Offset(Var),
    Tanh(Var),
    Relu(Var),
    Sigmoid(Var),
    Log(Var),
    Clamp(Var, f64, f64),
    SoftmaxRows(Var),
    SegmentSoftmax(Var, Vec<usize>),
    LogSoftmaxRows(Var),
    LayerNormRows(Var),
    ConcatCols(Vec<Var>),
    GatherRows(Var, Vec<usize>),
    Reshape(Var),
    Sum(Var),
    CountSketch(Var, Arc<SketchPlan>),
    CircConv(Var, Var),
    SignedSqrt(Var),
    L2NormRows(Var),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// One forward trace.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    consumed: bool,
}

/// `c[m,n] (+)= a[m,k] * b[k,n]`, with either operand optionally transposed
/// in storage (`a_t`: `a` stored as `[k,m]`; `b_t`: `b` stored as `[n,k]`).
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_t: bool,
    b: &[f64],
    b_t: bool,
    c: &mut [f64],
    accumulate: bool,
) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        if !accumulate {
            c.iter_mut().for_each(|v| *v = 0.0);
        }
        return;
    }
    let (rsa, csa) = if a_t { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_t { (1, k as isize) } else { (n as isize, 1) };
    let beta = if accumulate { 1.0 } else { 0.0 };
    // SAFETY: the strides above describe `a` as m x k, `b` as k x n and `c` as
    // m x n within the asserted slice lengths.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

fn map(t: &Tensor, f: impl Fn(f64) -> f64) -> Tensor {
    Tensor::new(t.shape().to_vec(), t.data().iter().map(|&v| f(v)).collect())
        .expect("shape preserved")
}

fn zip(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Tensor::new(a.shape().to_vec(), data).expect("shape preserved")
}

fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Tensor {
    Tensor::new(vec![rows, cols], data).expect("matrix dims")
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        let needs_grad = match &op {
            Op::Input => false,
            Op::Param(_) => true,
            Op::Linear { x, w, b } => {
                self.needs(*x) || self.needs(*w) || b.is_some_and(|b| self.needs(b))
            }
            Op::MatMul(a, b)
            | Op::Add(a, b)
            | Op::Sub(a, b)
            | Op::Mul(a, b)
            | Op::AddRow(a, b)
            | Op::MulCol(a, b)
            | Op::CircConv(a, b) => self.needs(*a) || self.needs(*b),
            Op::ConcatCols(parts) => parts.iter().any(|p| self.needs(*p)),
            Op::Scale(a, _)
            | Op::Offset(a)
            | Op::Tanh(a)
            | Op::Relu(a)
            | Op::Sigmoid(a)
            | Op::Log(a)
            | Op::Clamp(a, ..)
            | Op::SoftmaxRows(a)
            | Op::SegmentSoftmax(a, _)
            | Op::LogSoftmaxRows(a)
            | Op::LayerNormRows(a)
            | Op::GatherRows(a, _)
            | Op::Reshape(a)
            | Op::Sum(a)
            | Op::CountSketch(a, _)
            | Op::SignedSqrt(a)
            | Op::L2NormRows(a) => self.needs(*a),
        };
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Untracked leaf.
    pub fn input(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Input)
    }

    /// Tracked leaf bound to a parameter; its gradient is reported by `backward`.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        self.push(store.get(id).clone(), Op::Param(id))
    }

    /// Parameter value as an untracked constant.
    pub fn frozen(&mut self, store: &ParamStore, id: ParamId) -> Var {
        self.input(store.get(id).clone())
    }

    /// Copy of `v` with no gradient path back.
    pub fn detach(&mut self, v: Var) -> Var {
        let value = self.value(v).clone();
        self.input(value)
    }

    fn dims2(&self, v: Var) -> (usize, usize) {
        let t = self.value(v);
        (t.rows(), t.cols())
    }

    /// `x · wᵀ + b` with `x: [m,k]`, `w: [n,k]`, `b: [n]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let (m, k) = self.dims2(x);
        let (n, kw) = self.dims2(w);
        if k != kw {
            return Err(Error::Shape(format!(
                "linear: input has {k} features, weight expects {kw}"
            )));
        }
        let mut out = vec![0.0; m * n];
        gemm(
            m,
            k,
            n,
            self.value(x).data(),
            false,
            self.value(w).data(),
            true,
            &mut out,
            false,
        );
        if let Some(b) = b {
            let bias = self.value(b);
            if bias.len() != n {
                return Err(Error::Shape(format!(
                    "linear: bias has {} entries, expected {n}",
                    bias.len()
                )));
            }
            for row in out.chunks_mut(n) {
                for (o, bv) in row.iter_mut().zip(bias.data()) {
                    *o += bv;
                }
            }
        }
        Ok(self.push(matrix(m, n, out), Op::Linear { x, w, b }))
    }

    /// Plain matrix product `a[m,k] · b[k,n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.dims2(a);
        let (kb, n) = self.dims2(b);
        if k != kb {
            return Err(Error::Shape(format!("matmul: [{m},{k}] x [{kb},{n}]")));
        }
        let mut out = vec![0.0; m * n];
        gemm(
            m,
            k,
            n,
            self.value(a).data(),
            false,
            self.value(b).data(),
            false,
            &mut out,
            false,
        );
        Ok(self.push(matrix(m, n, out), Op::MatMul(a, b)))
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<()> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(Error::Shape(format!(
                "{what}: {:?} vs {:?}",
                self.value(a).shape(),
                self.value(b).shape()
            )));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "add")?;
        let v = zip(self.value(a), self.value(b), |x, y| x + y);
        Ok(self.push(v, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "sub")?;
        let v = zip(self.value(a), self.value(b), |x, y| x - y);
        Ok(self.push(v, Op::Sub(a, b)))
    }

    /// Element-wise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "mul")?;
        let v = zip(self.value(a), self.value(b), |x, y| x * y);
        Ok(self.push(v, Op::Mul(a, b)))
    }

    /// `x[m,n] + r` with `r` a length-`n` row broadcast over rows.
    pub fn add_row(&mut self, x: Var, r: Var) -> Result<Var> {
        let (m, n) = self.dims2(x);
        if self.value(r).len() != n {
            return Err(Error::Shape(format!(
                "add_row: row of {} for width {n}",
                self.value(r).len()
            )));
        }
        let mut out = self.value(x).data().to_vec();
        let row = self.value(r).data();
        for chunk in out.chunks_mut(n) {
            for (o, rv) in chunk.iter_mut().zip(row) {
                *o += rv;
            }
        }
        Ok(self.push(matrix(m, n, out), Op::AddRow(x, r)))
    }

    /// `x[m,n] * c[m]`: scales row `i` by `c[i]`.
    pub fn mul_col(&mut self, x: Var, c: Var) -> Result<Var> {
        let (m, n) = self.dims2(x);
        if self.value(c).len() != m {
            return Err(Error::Shape(format!(
                "mul_col: column of {} for {m} rows",
                self.value(c).len()
            )));
        }
        let mut out = self.value(x).data().to_vec();
        let col = self.value(c).data();
        for (chunk, cv) in out.chunks_mut(n).zip(col) {
            chunk.iter_mut().for_each(|o| *o *= cv);
        }
        Ok(self.push(matrix(m, n, out), Op::MulCol(x, c)))
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        let v = map(self.value(a), |x| x * factor);
        self.push(v, Op::Scale(a, factor))
    }

    pub fn offset(&mut self, a: Var, shift: f64) -> Var {
        let v = map(self.value(a), |x| x + shift);
        self.push(v, Op::Offset(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let v = map(self.value(a), f64::tanh);
        self.push(v, Op::Tanh(a))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let v = map(self.value(a), |x| x.max(0.0));
        self.push(v, Op::Relu(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let v = map(self.value(a), sigmoid);
        self.push(v, Op::Sigmoid(a))
    }

    pub fn log(&mut self, a: Var) -> Var {
        let v = map(self.value(a), f64::ln);
        self.push(v, Op::Log(a))
    }

    /// Clamp into `[lo, hi]`; the gradient is zero where clamping was active.
    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Var {
        let v = map(self.value(a), |x| x.clamp(lo, hi));
        self.push(v, Op::Clamp(a, lo, hi))
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let (m, n) = (t.rows(), t.cols());
        let mut out = Vec::with_capacity(m * n);
        for r in 0..m {
            out.extend(softmax(t.row_slice(r)));
        }
        let v = matrix(m, n, out);
        self.push(v, Op::SoftmaxRows(a))
    }

    /// Softmax over consecutive segments of a flat vector (`[N]` or `[N, 1]`);
    /// `lengths` must be positive and sum to `N`.
    pub fn segment_softmax(&mut self, a: Var, lengths: &[usize]) -> Result<Var> {
        let t = self.value(a);
        if lengths.iter().sum::<usize>() != t.len() || lengths.contains(&0) {
            return Err(Error::Shape(format!(
                "segments {lengths:?} do not tile {} values",
                t.len()
            )));
        }
        let mut out = Vec::with_capacity(t.len());
        let mut start = 0;
        for &n in lengths {
            out.extend(softmax(&t.data()[start..start + n]));
            start += n;
        }
        let v = Tensor::new(t.shape().to_vec(), out)?;
        Ok(self.push(v, Op::SegmentSoftmax(a, lengths.to_vec())))
    }

    pub fn log_softmax_rows(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let (m, n) = (t.rows(), t.cols());
        let mut out = Vec::with_capacity(m * n);
        for r in 0..m {
            let row = t.row_slice(r);
            let lse = log_sum_exp(row);
            out.extend(row.iter().map(|&x| x - lse));
        }
        let v = matrix(m, n, out);
        self.push(v, Op::LogSoftmaxRows(a))
    }

    /// Per-row standardization to zero mean and unit variance (no affine).
    pub fn layer_norm_rows(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let (m, n) = (t.rows(), t.cols());
        let mut out = Vec::with_capacity(m * n);
        for r in 0..m {
            let row = t.row_slice(r);
            let mean = row.iter().sum::<f64>() / n as f64;
            let var = row.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n as f64;
            let inv = 1.0 / (var + LAYERNORM_EPS).sqrt();
            out.extend(row.iter().map(|x| (x - mean) * inv));
        }
        let v = matrix(m, n, out);
        self.push(v, Op::LayerNormRows(a))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| Error::InvalidArgument("concat of nothing".into()))?;
        let m = self.value(*first).rows();
        if parts.iter().any(|p| self.value(*p).rows() != m) {
            return Err(Error::Shape("concat_cols: row counts differ".into()));
        }
        let widths: Vec<usize> = parts.iter().map(|p| self.value(*p).cols()).collect();
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(m * total);
        for r in 0..m {
            for p in parts {
                out.extend_from_slice(self.value(*p).row_slice(r));
            }
        }
        Ok(self.push(matrix(m, total, out), Op::ConcatCols(parts.to_vec())))
    }

    /// Rows `idx` of `src`, in order (repeats allowed).
    pub fn gather_rows(&mut self, src: Var, idx: &[usize]) -> Result<Var> {
        let t = self.value(src);
        let (rows, n) = (t.rows(), t.cols());
        let mut out = Vec::with_capacity(idx.len() * n);
        for &i in idx {
            if i >= rows {
                return Err(Error::Shape(format!("gather row {i} of {rows}")));
            }
            out.extend_from_slice(t.row_slice(i));
        }
        Ok(self.push(
            matrix(idx.len(), n, out),
            Op::GatherRows(src, idx.to_vec()),
        ))
    }

    pub fn reshape(&mut self, a: Var, shape: Vec<usize>) -> Result<Var> {
        let v = self.value(a).clone().reshape(shape)?;
        Ok(self.push(v, Op::Reshape(a)))
    }

    /// Sum of all entries, shape `[1, 1]`.
    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).sum();
        self.push(Tensor::scalar(s), Op::Sum(a))
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let n = self.value(a).len().max(1) as f64;
        let s = self.sum(a);
        self.scale(s, 1.0 / n)
    }

    /// Count sketch applied to each row.
    pub fn count_sketch(&mut self, a: Var, plan: Arc<SketchPlan>) -> Result<Var> {
        let (m, d) = self.dims2(a);
        if d != plan.input_dim() {
            return Err(Error::Shape(format!(
                "sketch expects dim {}, got {d}",
                plan.input_dim()
            )));
        }
        let ds = plan.sketch_dim();
        let mut out = vec![0.0; m * ds];
        let t = self.value(a);
        for (r, chunk) in out.chunks_mut(ds).enumerate() {
            plan.apply_into(t.row_slice(r), chunk);
        }
        Ok(self.push(matrix(m, ds, out), Op::CountSketch(a, plan)))
    }

    /// Row-wise circular convolution of two `[m, n]` tensors.
    pub fn circ_conv(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "circ_conv")?;
        let (m, n) = self.dims2(a);
        let mut out = Vec::with_capacity(m * n);
        for r in 0..m {
            out.extend(circular_convolve(
                self.value(a).row_slice(r),
                self.value(b).row_slice(r),
            )?);
        }
        Ok(self.push(matrix(m, n, out), Op::CircConv(a, b)))
    }

    /// `x -> sign(x) * sqrt(|x|)`.
    pub fn signed_sqrt(&mut self, a: Var) -> Var {
        let v = map(self.value(a), |x| x.signum() * x.abs().sqrt());
        self.push(v, Op::SignedSqrt(a))
    }

    /// Smallest nonzero `|x|` fed to any signed square root in this trace.
    ///
    /// Finite differences are unreliable within a few steps of that kink,
    /// so gradient checks use this to reject ill-conditioned points.
    pub fn sqrt_margin(&self) -> Option<f64> {
        self.nodes
            .iter()
            .filter_map(|n| match n.op {
                Op::SignedSqrt(a) => self.value(a).data().iter().map(|x| x.abs()).filter(|&x| x > 0.0).reduce(f64::min),
                _ => None,
            })
            .reduce(f64::min)
    }

    /// Smallest nonzero distance from a ReLU input to 0 or from a clamp
    /// input to either bound, the other places where the trace is not smooth.
    pub fn hinge_margin(&self) -> Option<f64> {
        let closest = |t: &Tensor, kink: &dyn Fn(f64) -> f64| {
            t.data().iter().map(|&x| kink(x)).filter(|&d| d > 0.0).reduce(f64::min)
        };
        self.nodes
            .iter()
            .filter_map(|n| match n.op {
                Op::Relu(a) => closest(self.value(a), &|x: f64| x.abs()),
                Op::Clamp(a, lo, hi) => closest(self.value(a), &|x: f64| (x - lo).abs().min((x - hi).abs())),
                _ => None,
            })
            .reduce(f64::min)
    }

    /// Scales each row to unit L2 norm.
    pub fn l2_norm_rows(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let (m, n) = (t.rows(), t.cols());
        let mut out = Vec::with_capacity(m * n);
        for r in 0..m {
            let row = t.row_slice(r);
            let norm = (row.iter().map(|x| x * x).sum::<f64>() + L2NORM_EPS).sqrt();
            out.extend(row.iter().map(|x| x / norm));
        }
        let v = matrix(m, n, out);
        self.push(v, Op::L2NormRows(a))
    }

    /// Reverse pass from `root`, seeded with `upstream` (same shape as `root`).
    ///
    /// A trace supports exactly one backward pass.
    pub fn backward(&mut self, root: Var, upstream: &Tensor) -> Result<Gradients> {
        if self.consumed {
            return Err(Error::BackwardTwice);
        }
        if self.value(root).shape() != upstream.shape() {
            return Err(Error::Shape(format!(
                "upstream {:?} for output {:?}",
                upstream.shape(),
                self.value(root).shape()
            )));
        }
        self.consumed = true;

        let mut grads: Vec<Option<Vec<f64>>> = vec![None; root.0 + 1];
        grads[root.0] = Some(upstream.data().to_vec());
        let mut out = Gradients::default();

        for i in (0..=root.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            if !self.nodes[i].needs_grad {
                continue;
            }
            let node = &self.nodes[i];
            let nodes = &self.nodes;
            let val = |v: Var| &nodes[v.0].value;
            let needs = |v: Var| nodes[v.0].needs_grad;
            let mut send = |v: Var, contrib: Vec<f64>| {
                let slot = &mut grads[v.0];
                match slot {
                    Some(acc) => acc.iter_mut().zip(&contrib).for_each(|(a, c)| *a += c),
                    None => *slot = Some(contrib),
                }
            };
            let y = &node.value;
            match &node.op {
                Op::Input => {}
                Op::Param(id) => out.accumulate(*id, y.shape(), &g),
                Op::Linear { x, w, b } => {
                    let (m, k) = (val(*x).rows(), val(*x).cols());
                    let n = val(*w).rows();
                    if needs(*x) {
                        let mut dx = vec![0.0; m * k];
                        gemm(m, n, k, &g, false, val(*w).data(), false, &mut dx, false);
                        send(*x, dx);
                    }
                    if needs(*w) {
                        let mut dw = vec![0.0; n * k];
                        gemm(n, m, k, &g, true, val(*x).data(), false, &mut dw, false);
                        send(*w, dw);
                    }
                    if let Some(b) = b {
                        if needs(*b) {
                            let mut db = vec![0.0; n];
                            for row in g.chunks(n) {
                                db.iter_mut().zip(row).for_each(|(d, v)| *d += v);
                            }
                            send(*b, db);
                        }
                    }
                }
                Op::MatMul(a, b) => {
                    let (m, k) = (val(*a).rows(), val(*a).cols());
                    let n = val(*b).cols();
                    if needs(*a) {
                        let mut da = vec![0.0; m * k];
                        gemm(m, n, k, &g, false, val(*b).data(), true, &mut da, false);
                        send(*a, da);
                    }
                    if needs(*b) {
                        let mut db = vec![0.0; k * n];
                        gemm(k, m, n, val(*a).data(), true, &g, false, &mut db, false);
                        send(*b, db);
                    }
                }
                Op::Add(a, b) => {
                    if needs(*a) {
                        send(*a, g.clone());
                    }
                    if needs(*b) {
                        send(*b, g);
                    }
                }
                Op::Sub(a, b) => {
                    if needs(*b) {
                        send(*b, g.iter().map(|v| -v).collect());
                    }
                    if needs(*a) {
                        send(*a, g);
                    }
                }
                Op::Mul(a, b) => {
                    if needs(*a) {
                        send(*a, g.iter().zip(val(*b).data()).map(|(g, y)| g * y).collect());
                    }
                    if needs(*b) {
                        send(*b, g.iter().zip(val(*a).data()).map(|(g, x)| g * x).collect());
                    }
                }
                Op::AddRow(x, r) => {
                    let n = y.cols();
                    if needs(*r) {
                        let mut dr = vec![0.0; n];
                        for row in g.chunks(n) {
                            dr.iter_mut().zip(row).for_each(|(d, v)| *d += v);
                        }
                        send(*r, dr);
                    }
                    if needs(*x) {
                        send(*x, g);
                    }
                }
                Op::MulCol(x, c) => {
                    let n = y.cols();
                    if needs(*c) {
                        let dc = g
                            .chunks(n)
                            .zip(val(*x).data().chunks(n))
                            .map(|(gr, xr)| gr.iter().zip(xr).map(|(a, b)| a * b).sum())
                            .collect();
                        send(*c, dc);
                    }
                    if needs(*x) {
                        let mut dx = g;
                        for (chunk, cv) in dx.chunks_mut(n).zip(val(*c).data()) {
                            chunk.iter_mut().for_each(|v| *v *= cv);
                        }
                        send(*x, dx);
                    }
                }
                Op::Scale(a, f) => send(*a, g.iter().map(|v| v * f).collect()),
                Op::Offset(a) | Op::Reshape(a) => send(*a, g),
                Op::Tanh(a) => send(
                    *a,
                    g.iter().zip(y.data()).map(|(g, t)| g * (1.0 - t * t)).collect(),
                ),
                Op::Relu(a) => send(
                    *a,
                    g.iter()
                        .zip(val(*a).data())
                        .map(|(g, x)| if *x > 0.0 { *g } else { 0.0 })
                        .collect(),
                ),
                Op::Sigmoid(a) => send(
                    *a,
                    g.iter().zip(y.data()).map(|(g, s)| g * s * (1.0 - s)).collect(),
                ),
                Op::Log(a) => send(
                    *a,
                    g.iter().zip(val(*a).data()).map(|(g, x)| g / x).collect(),
                ),
                Op::Clamp(a, lo, hi) => send(
                    *a,
                    g.iter()
                        .zip(val(*a).data())
                        .map(|(g, x)| if x >= lo && x <= hi { *g } else { 0.0 })
                        .collect(),
                ),
                Op::SoftmaxRows(a) => {
                    let n = y.cols();
                    let mut dx = Vec::with_capacity(g.len());
                    for (gr, yr) in g.chunks(n).zip(y.data().chunks(n)) {
                        let dot: f64 = gr.iter().zip(yr).map(|(a, b)| a * b).sum();
                        dx.extend(gr.iter().zip(yr).map(|(gv, yv)| yv * (gv - dot)));
                    }
                    send(*a, dx);
                }
                Op::SegmentSoftmax(a, lengths) => {
                    let mut dx = Vec::with_capacity(g.len());
                    let mut start = 0;
                    for &n in lengths {
                        let gr = &g[start..start + n];
                        let yr = &y.data()[start..start + n];
                        let dot: f64 = gr.iter().zip(yr).map(|(a, b)| a * b).sum();
                        dx.extend(gr.iter().zip(yr).map(|(gv, yv)| yv * (gv - dot)));
                        start += n;
                    }
                    send(*a, dx);
                }
                Op::LogSoftmaxRows(a) => {
                    let n = y.cols();
                    let mut dx = Vec::with_capacity(g.len());
                    for (gr, yr) in g.chunks(n).zip(y.data().chunks(n)) {
                        let total: f64 = gr.iter().sum();
                        dx.extend(gr.iter().zip(yr).map(|(gv, ly)| gv - ly.exp() * total));
                    }
                    send(*a, dx);
                }
                Op::LayerNormRows(a) => {
                    let n = y.cols();
                    let nf = n as f64;
                    let mut dx = Vec::with_capacity(g.len());
                    for ((gr, yr), xr) in g
                        .chunks(n)
                        .zip(y.data().chunks(n))
                        .zip(val(*a).data().chunks(n))
                    {
                        let mean = xr.iter().sum::<f64>() / nf;
                        let var = xr.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / nf;
                        let inv = 1.0 / (var + LAYERNORM_EPS).sqrt();
                        let gm = gr.iter().sum::<f64>() / nf;
                        let gy = gr.iter().zip(yr).map(|(a, b)| a * b).sum::<f64>() / nf;
                        dx.extend(gr.iter().zip(yr).map(|(gv, yv)| inv * (gv - gm - yv * gy)));
                    }
                    send(*a, dx);
                }
                Op::ConcatCols(parts) => {
                    let total = y.cols();
                    let mut offset = 0;
                    for p in parts {
                        let w = val(*p).cols();
                        if needs(*p) {
                            let mut dp = Vec::with_capacity(y.rows() * w);
                            for row in g.chunks(total) {
                                dp.extend_from_slice(&row[offset..offset + w]);
                            }
                            send(*p, dp);
                        }
                        offset += w;
                    }
                }
                Op::GatherRows(src, idx) => {
                    let n = y.cols();
                    let mut ds = vec![0.0; val(*src).len()];
                    for (row, &i) in g.chunks(n).zip(idx) {
                        ds[i * n..(i + 1) * n]
                            .iter_mut()
                            .zip(row)
                            .for_each(|(d, v)| *d += v);
                    }
                    send(*src, ds);
                }
                Op::Sum(a) => send(*a, vec![g[0]; val(*a).len()]),
                Op::CountSketch(a, plan) => {
                    let d = plan.input_dim();
                    let ds = plan.sketch_dim();
                    let mut dx = vec![0.0; val(*a).len()];
                    for (gr, dr) in g.chunks(ds).zip(dx.chunks_mut(d)) {
                        plan.transpose_add(gr, dr);
                    }
                    send(*a, dx);
                }
                Op::CircConv(a, b) => {
                    let n = y.cols();
                    if needs(*a) {
                        let mut da = Vec::with_capacity(g.len());
                        for (gr, br) in g.chunks(n).zip(val(*b).data().chunks(n)) {
                            da.extend(circular_correlate(gr, br)?);
                        }
                        send(*a, da);
                    }
                    if needs(*b) {
                        let mut db = Vec::with_capacity(g.len());
                        for (gr, ar) in g.chunks(n).zip(val(*a).data().chunks(n)) {
                            db.extend(circular_correlate(gr, ar)?);
                        }
                        send(*b, db);
                    }
                }
                Op::SignedSqrt(a) => send(
                    *a,
                    g.iter()
                        .zip(y.data())
                        .map(|(g, r)| if *r == 0.0 { 0.0 } else { g * 0.5 / r.abs() })
                        .collect(),
                ),
                Op::L2NormRows(a) => {
                    let n = y.cols();
                    let mut dx = Vec::with_capacity(g.len());
                    for (gr, xr) in g.chunks(n).zip(val(*a).data().chunks(n)) {
                        let norm = (xr.iter().map(|x| x * x).sum::<f64>() + L2NORM_EPS).sqrt();
                        let yg: f64 = gr.iter().zip(xr).map(|(g, x)| g * x / norm).sum();
                        dx.extend(gr.iter().zip(xr).map(|(gv, xv)| (gv - xv / norm * yg) / norm));
                    }
                    send(*a, dx);
                }
            }
        }
        Ok(out)
    }

    /// Backward from a scalar output with seed 1.
    pub fn backward_scalar(&mut self, root: Var) -> Result<Gradients> {
        let shape = self.value(root).shape().to_vec();
        if shape.iter().product::<usize>() != 1 {
            return Err(Error::Shape(format!("backward_scalar on shape {shape:?}")));
        }
        self.backward(root, &Tensor::full(shape, 1.0))
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn log_sum_exp(row: &[f64]) -> f64 {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + row.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

pub fn softmax(row: &[f64]) -> Vec<f64> {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = row.iter().map(|x| (x - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store_with(values: Vec<Tensor>) -> (ParamStore, Vec<ParamId>) {
        let mut store = ParamStore::new();
        let ids = values
            .into_iter()
            .enumerate()
            .map(|(i, t)| store.add(format!("p{i}"), t))
            .collect();
        (store, ids)
    }

    #[test]
    fn sum_gradient_is_ones() {
        let (store, ids) = store_with(vec![Tensor::new(vec![2, 3], vec![1.0; 6]).unwrap()]);
        let mut g = Graph::new();
        let x = g.param(&store, ids[0]);
        let s = g.sum(x);
        let grads = g.backward_scalar(s).unwrap();
        assert_eq!(grads.get(ids[0]).unwrap().data(), &[1.0; 6]);
    }

    #[test]
    fn tanh_slope_at_zero() {
        let (store, ids) = store_with(vec![Tensor::scalar(0.0)]);
        let mut g = Graph::new();
        let w = g.param(&store, ids[0]);
        let one = g.input(Tensor::scalar(1.0));
        let wx = g.mul(w, one).unwrap();
        let t = g.tanh(wx);
        let grads = g.backward_scalar(t).unwrap();
        assert!((grads.get(ids[0]).unwrap().data()[0] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn second_backward_rejected() {
        let (store, ids) = store_with(vec![Tensor::scalar(2.0)]);
        let mut g = Graph::new();
        let x = g.param(&store, ids[0]);
        let s = g.sum(x);
        g.backward_scalar(s).unwrap();
        assert!(matches!(g.backward_scalar(s), Err(Error::BackwardTwice)));
    }

    #[test]
    fn upstream_shape_checked() {
        let mut g = Graph::new();
        let x = g.input(Tensor::zeros(vec![2, 2]));
        assert!(g.backward(x, &Tensor::zeros(vec![4])).is_err());
    }

    #[test]
    fn linear_hand_product() {
        let mut g = Graph::new();
        let x = g.input(Tensor::row(vec![1.0, 1.0]));
        let w = g.input(Tensor::new(vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap());
        let b = g.input(Tensor::row(vec![0.0, 0.0]));
        let y = g.linear(x, w, Some(b)).unwrap();
        assert_eq!(g.value(y).data(), &[3.0, 7.0]);
    }

    #[test]
    fn param_used_twice_accumulates() {
        let (store, ids) = store_with(vec![Tensor::scalar(3.0)]);
        let mut g = Graph::new();
        let a = g.param(&store, ids[0]);
        let b = g.param(&store, ids[0]);
        let p = g.mul(a, b).unwrap();
        let grads = g.backward_scalar(p).unwrap();
        assert!((grads.get(ids[0]).unwrap().data()[0] - 6.0).abs() < 1e-12);
    }

    #[test]
    fn frozen_params_get_no_gradient() {
        let (store, ids) = store_with(vec![Tensor::scalar(3.0), Tensor::scalar(2.0)]);
        let mut g = Graph::new();
        let a = g.param(&store, ids[0]);
        let b = g.frozen(&store, ids[1]);
        let p = g.mul(a, b).unwrap();
        let grads = g.backward_scalar(p).unwrap();
        assert_eq!(grads.len(), 1);
        assert!(grads.get(ids[1]).is_none());
    }

    fn pseudo(n: usize, seed: u64) -> Vec<f64> {
        let mut z = seed;
        (0..n)
            .map(|_| {
                z = crate::nn::splitmix64(z);
                (z >> 11) as f64 / (1u64 << 53) as f64 * 2.0 - 1.0
            })
            .collect()
    }

    type OpFn = fn(&mut Graph, Var, Var, Var) -> Result<Var>;

    #[test]
    fn every_op_passes_finite_differences() {
        let plan = Arc::new(SketchPlan::new(4, 8, 3).unwrap());
        let plan2 = Arc::clone(&plan);
        let ops: Vec<(&str, OpFn)> = vec![
            ("linear", |g, a, _, w| g.linear(a, w, None)),
            ("matmul", |g, a, b, _| {
                let bt = g.reshape(b, vec![4, 3])?;
                g.matmul(a, bt)
            }),
            ("add", |g, a, b, _| g.add(a, b)),
            ("sub", |g, a, b, _| g.sub(a, b)),
            ("mul", |g, a, b, _| g.mul(a, b)),
            ("add_row", |g, a, _, w| {
                let r = g.gather_rows(w, &[1])?;
                g.add_row(a, r)
            }),
            ("mul_col", |g, a, b, _| {
                let c = g.concat_cols(&[b])?;
                let c = g.gather_rows(c, &[0, 1, 2])?;
                let c = g.reshape(c, vec![12, 1])?;
                let c = g.gather_rows(c, &[0, 5, 9])?;
                g.mul_col(a, c)
            }),
            ("tanh", |g, a, _, _| Ok(g.tanh(a))),
            ("relu", |g, a, _, _| Ok(g.relu(a))),
            ("sigmoid", |g, a, _, _| Ok(g.sigmoid(a))),
            ("log", |g, a, _, _| {
                let s = g.sigmoid(a);
                Ok(g.log(s))
            }),
            ("softmax_rows", |g, a, _, _| Ok(g.softmax_rows(a))),
            ("segment_softmax", |g, a, _, _| {
                let f = g.reshape(a, vec![12, 1])?;
                g.segment_softmax(f, &[5, 1, 6])
            }),
            ("log_softmax_rows", |g, a, _, _| Ok(g.log_softmax_rows(a))),
            ("layer_norm_rows", |g, a, _, _| Ok(g.layer_norm_rows(a))),
            ("concat_cols", |g, a, b, _| g.concat_cols(&[a, b, a])),
            ("gather_rows", |g, a, _, _| g.gather_rows(a, &[2, 0, 2, 2])),
            ("circ_conv", |g, a, b, _| g.circ_conv(a, b)),
            ("signed_sqrt", |g, a, _, _| {
                let o = g.offset(a, 1.5);
                Ok(g.signed_sqrt(o))
            }),
            ("l2_norm_rows", |g, a, _, _| Ok(g.l2_norm_rows(a))),
            ("scale_mean", |g, a, _, _| {
                let s = g.scale(a, -2.5);
                Ok(g.mean(s))
            }),
        ];
        let sketched: Vec<(&str, Box<dyn Fn(&mut Graph, Var, Var) -> Result<Var>>)> = vec![
            ("count_sketch", Box::new(move |g, a, _| g.count_sketch(a, Arc::clone(&plan)))),
            (
                "mcb",
                Box::new(move |g, a, b| {
                    let sa = g.count_sketch(a, Arc::clone(&plan2))?;
                    let sb = g.count_sketch(b, Arc::clone(&plan2))?;
                    let c = g.circ_conv(sa, sb)?;
                    let s = g.signed_sqrt(c);
                    Ok(g.l2_norm_rows(s))
                }),
            ),
        ];
        let mut all: Vec<(&str, Box<dyn Fn(&mut Graph, Var, Var, Var) -> Result<Var>>)> = ops
            .into_iter()
            .map(|(n, f)| (n, Box::new(move |g: &mut Graph, a, b, w| f(g, a, b, w)) as Box<_>))
            .collect();
        for (n, f) in sketched {
            all.push((n, Box::new(move |g: &mut Graph, a, b, _| f(g, a, b))));
        }
        for seed in 0..20u64 {
            for (name, op) in &all {
                // redraw points that sit on a signed-sqrt kink
                let rep = (0..50u64)
                    .map(|draw| {
                        let base = seed * 3 + draw * 1000;
                        let (mut store, ids) = store_with(vec![
                            Tensor::new(vec![3, 4], pseudo(12, base + 1)).unwrap(),
                            Tensor::new(vec![3, 4], pseudo(12, base + 2)).unwrap(),
                            Tensor::new(vec![5, 4], pseudo(20, base + 3)).unwrap(),
                        ]);
                        crate::nn::check_gradients(&mut store, &ids, 1, |s| {
                            let mut g = Graph::new();
                            let a = g.param(s, ids[0]);
                            let b = g.param(s, ids[1]);
                            let w = g.param(s, ids[2]);
                            let y = op(&mut g, a, b, w)?;
                            let n = g.value(y).len();
                            let r = g.input(Tensor::new(g.value(y).shape().to_vec(), pseudo(n, 99 + seed))?);
                            let p = g.mul(y, r)?;
                            let out = g.sum(p);
                            Ok((g, out))
                        })
                        .unwrap()
                    })
                    .find(|r| r.well_conditioned())
                    .expect("a well-conditioned point");
                assert!(rep.passes(crate::nn::FD_TOLERANCE), "{name} seed {seed}: {rep:?}");
            }
        }
    }
}
