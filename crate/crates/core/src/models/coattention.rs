use std::sync::Arc;

use crate::error::{Error, Result};
use crate::fusion::Projection;
use crate::nn::{Access, Graph, InitMode, Initializer, ParamId, ParamStore, Tensor, Var};
use crate::signal::SketchPlan;

/// How a (word, region) pair of projected features is combined.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Combiner {
    Addition,
    Mcb,
}

impl std::fmt::Display for Combiner {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Combiner::Addition => "addition",
            Combiner::Mcb => "mcb",
        })
    }
}

impl std::str::FromStr for Combiner {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "addition" | "add" => Ok(Combiner::Addition),
            "mcb" => Ok(Combiner::Mcb),
            other => Err(format!("unknown combiner `{other}` (addition, mcb)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoAttentionSpec {
    pub vocab: usize,
    pub embed_dim: usize,
    pub image_dim: usize,
    /// The image vector is split into this many equal regions.
    pub regions: usize,
    pub hidden: usize,
    pub combiner: Combiner,
    pub sketch_dim: usize,
    pub sketch_seed: u64,
    pub classifier_hidden: usize,
    pub answers: usize,
    pub init: InitMode,
}

impl CoAttentionSpec {
    pub fn region_dim(&self) -> usize {
        self.image_dim / self.regions.max(1)
    }

    /// Width of a combined pair feature.
    pub fn combined_dim(&self) -> usize {
        match self.combiner {
            Combiner::Addition => self.hidden,
            Combiner::Mcb => self.sketch_dim,
        }
    }
}

/// Single-hop parallel co-attention over question words and image regions.
#[derive(Debug, Clone, PartialEq)]
pub struct CoAttention {
    spec: CoAttentionSpec,
    pub embed: ParamId,
    pub word_proj: Projection,
    pub region_proj: Projection,
    /// `[1, combined_dim]` scoring vector for pair affinities.
    pub affinity: ParamId,
    pub joint: Projection,
    pub out: Projection,
    plans: Option<(Arc<SketchPlan>, Arc<SketchPlan>)>,
}

/// Trace handles of one co-attention pass.
#[derive(Debug, Clone, Copy)]
pub struct CoAttentionOutput {
    /// `[sum of word counts, 1]`, softmaxed per example.
    pub q_weights: Var,
    /// `[B * regions, 1]`, softmaxed per example.
    pub v_weights: Var,
    pub scores: Var,
}

/// Borrowed batch of raw inputs.
#[derive(Debug, Clone, Copy)]
pub struct CoattentionInput<'a> {
    pub images: &'a Tensor,
    pub questions: &'a [&'a [usize]],
}

impl CoAttention {
    pub fn new(store: &mut ParamStore, spec: CoAttentionSpec) -> Result<Self> {
        if spec.regions == 0 || !spec.image_dim.is_multiple_of(spec.regions) {
            return Err(Error::InvalidArgument(format!(
                "image dim {} does not split into {} regions",
                spec.image_dim, spec.regions
            )));
        }
        if spec.hidden == 0 || spec.answers == 0 || spec.classifier_hidden == 0 {
            return Err(Error::InvalidArgument("co-attention dims must be positive".into()));
        }
        let mut init = Initializer::new(spec.init);
        let embed = store.add("coatt.embed", init.matrix(spec.vocab, spec.embed_dim)?);
        let word_proj = Projection::new(store, &mut init, "coatt.word", spec.embed_dim, spec.hidden)?;
        let region_proj =
            Projection::new(store, &mut init, "coatt.region", spec.region_dim(), spec.hidden)?;
        let cdim = spec.combined_dim();
        let affinity = store.add("coatt.affinity", init.matrix(1, cdim)?);
        let joint = Projection::new(store, &mut init, "coatt.joint", cdim, spec.classifier_hidden)?;
        let out = Projection::new(store, &mut init, "coatt.out", spec.classifier_hidden, spec.answers)?;
        let plans = match spec.combiner {
            Combiner::Addition => None,
            Combiner::Mcb => Some((
                Arc::new(SketchPlan::new(spec.hidden, spec.sketch_dim, spec.sketch_seed)?),
                Arc::new(SketchPlan::new(
                    spec.hidden,
                    spec.sketch_dim,
                    spec.sketch_seed.wrapping_add(1),
                )?),
            )),
        };
        Ok(Self {
            spec,
            embed,
            word_proj,
            region_proj,
            affinity,
            joint,
            out,
            plans,
        })
    }

    pub fn spec(&self) -> &CoAttentionSpec {
        &self.spec
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        let mut ids = vec![self.embed];
        ids.extend(self.word_proj.param_ids());
        ids.extend(self.region_proj.param_ids());
        ids.push(self.affinity);
        ids.extend(self.joint.param_ids());
        ids.extend(self.out.param_ids());
        ids
    }

    /// Combines row-aligned `[P, h]` inputs into `[P, combined_dim]`.
    fn combine(&self, g: &mut Graph, q: Var, v: Var) -> Result<Var> {
        match &self.plans {
            None => g.add(q, v),
            Some((pq, pv)) => crate::fusion::fuse_mcb(g, q, v, pq, pv),
        }
    }

    pub fn forward(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        input: CoattentionInput<'_>,
        access: Access,
    ) -> Result<CoAttentionOutput> {
        let CoattentionInput { images, questions } = input;
        let b = questions.len();
        if b == 0 || images.rows() != b {
            return Err(Error::Shape(format!(
                "{} images for {b} questions",
                images.rows()
            )));
        }
        if images.cols() != self.spec.image_dim {
            return Err(Error::Shape(format!(
                "expected image dim {}, got {}",
                self.spec.image_dim,
                images.cols()
            )));
        }
        let mut tokens = Vec::new();
        let mut word_lengths = Vec::with_capacity(b);
        for q in questions {
            if q.is_empty() {
                return Err(Error::InvalidArgument("question without words".into()));
            }
            if let Some(position) = q.iter().position(|&t| t >= self.spec.vocab) {
                return Err(Error::OutOfVocabulary {
                    position,
                    token: q[position],
                    vocab: self.spec.vocab,
                });
            }
            tokens.extend_from_slice(q);
            word_lengths.push(q.len());
        }
        let embed = access.leaf(g, store, self.embed);
        let words = g.gather_rows(embed, &tokens)?;
        let r = self.spec.regions;
        let regions = g.input(images.clone().reshape(vec![b * r, self.spec.region_dim()])?);
        self.forward_features(g, store, words, &word_lengths, regions, &vec![r; b], access)
    }

    /// Co-attention over explicit word features `[ΣL, e]` and region
    /// features `[ΣR, d_r]`, grouped per example by the two length lists.
    #[allow(clippy::too_many_arguments)]
    pub fn forward_features(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        words: Var,
        word_lengths: &[usize],
        regions: Var,
        region_lengths: &[usize],
        access: Access,
    ) -> Result<CoAttentionOutput> {
        let b = word_lengths.len();
        if b == 0 || region_lengths.len() != b {
            return Err(Error::Shape("word and region groups disagree".into()));
        }
        if word_lengths.contains(&0) || region_lengths.contains(&0) {
            return Err(Error::InvalidArgument(
                "co-attention needs at least one word and one region".into(),
            ));
        }
        let n_words: usize = word_lengths.iter().sum();
        let n_regions: usize = region_lengths.iter().sum();
        if g.value(words).rows() != n_words || g.value(regions).rows() != n_regions {
            return Err(Error::Shape("feature rows do not match group lengths".into()));
        }

        let qp = self.word_proj.apply(g, store, words, access)?;
        let qh = g.tanh(qp);
        let vp = self.region_proj.apply(g, store, regions, access)?;
        let vh = g.tanh(vp);

        // Every (word, region) pair within an example.
        let (mut qi, mut vi) = (Vec::new(), Vec::new());
        let n_pairs: usize = word_lengths.iter().zip(region_lengths).map(|(l, r)| l * r).sum();
        let mut agg_q = vec![0.0; n_words * n_pairs];
        let mut agg_v = vec![0.0; n_regions * n_pairs];
        let mut sum_q = vec![0.0; b * n_words];
        let mut sum_v = vec![0.0; b * n_regions];
        let (mut w0, mut r0) = (0, 0);
        for (ex, (&l, &r)) in word_lengths.iter().zip(region_lengths).enumerate() {
            for i in 0..l {
                sum_q[ex * n_words + w0 + i] = 1.0;
                for j in 0..r {
                    let p = qi.len();
                    qi.push(w0 + i);
                    vi.push(r0 + j);
                    agg_q[(w0 + i) * n_pairs + p] = 1.0 / r as f64;
                    agg_v[(r0 + j) * n_pairs + p] = 1.0 / l as f64;
                }
            }
            for j in 0..r {
                sum_v[ex * n_regions + r0 + j] = 1.0;
            }
            w0 += l;
            r0 += r;
        }

        let (qs, vs) = match &self.plans {
            // Sketching is linear, so sketch once per row before pairing.
            Some((pq, pv)) => (
                g.count_sketch(qh, Arc::clone(pq))?,
                g.count_sketch(vh, Arc::clone(pv))?,
            ),
            None => (qh, vh),
        };
        let qpair = g.gather_rows(qs, &qi)?;
        let vpair = g.gather_rows(vs, &vi)?;
        let combined = match self.plans {
            Some(_) => {
                let raw = g.circ_conv(qpair, vpair)?;
                let s = g.signed_sqrt(raw);
                g.l2_norm_rows(s)
            }
            None => g.add(qpair, vpair)?,
        };
        let act = g.tanh(combined);
        let w = access.leaf(g, store, self.affinity);
        let affinity = g.linear(act, w, None)?;

        let agg_q = g.input(Tensor::new(vec![n_words, n_pairs], agg_q)?);
        let agg_v = g.input(Tensor::new(vec![n_regions, n_pairs], agg_v)?);
        let q_logits = g.matmul(agg_q, affinity)?;
        let v_logits = g.matmul(agg_v, affinity)?;
        let q_weights = g.segment_softmax(q_logits, word_lengths)?;
        let v_weights = g.segment_softmax(v_logits, region_lengths)?;

        let q_scaled = g.mul_col(qh, q_weights)?;
        let v_scaled = g.mul_col(vh, v_weights)?;
        let sum_q = g.input(Tensor::new(vec![b, n_words], sum_q)?);
        let sum_v = g.input(Tensor::new(vec![b, n_regions], sum_v)?);
        let q_hat = g.matmul(sum_q, q_scaled)?;
        let v_hat = g.matmul(sum_v, v_scaled)?;

        let joint_in = self.combine(g, q_hat, v_hat)?;
        let z = self.joint.apply(g, store, joint_in, access)?;
        let z = g.tanh(z);
        let scores = self.out.apply(g, store, z, access)?;
        Ok(CoAttentionOutput {
            q_weights,
            v_weights,
            scores,
        })
    }
}
