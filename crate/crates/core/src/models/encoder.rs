use crate::error::{Error, Result};
use crate::fusion::{Fusion, FusionStrategy};
use crate::nn::{Access, ElmanEncoder, Graph, InitMode, Initializer, ParamId, ParamStore, Tensor, Var};

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderSpec {
    pub vocab: usize,
    pub embed_dim: usize,
    pub rnn_hidden: usize,
    pub image_dim: usize,
    pub fusion: FusionStrategy,
    /// Output width for simple and full fusion.
    pub fused_dim: usize,
    /// Output width for MCB fusion.
    pub sketch_dim: usize,
    pub sketch_seed: u64,
    pub init: InitMode,
}

/// Elman question encoder followed by an image-question fusion.
#[derive(Debug, Clone, PartialEq)]
pub struct QuestionImageEncoder {
    spec: EncoderSpec,
    pub rnn: ElmanEncoder,
    pub fusion: Fusion,
}

/// Trace handles for one encoded batch.
#[derive(Debug, Clone, Copy)]
pub struct Encoded {
    pub image: Var,
    pub question: Var,
    pub fused: Var,
}

impl QuestionImageEncoder {
    pub fn new(store: &mut ParamStore, spec: EncoderSpec) -> Result<Self> {
        if spec.image_dim == 0 {
            return Err(Error::InvalidArgument("image dim must be positive".into()));
        }
        let mut init = Initializer::new(spec.init);
        let rnn = ElmanEncoder::new(store, &mut init, "rnn", spec.vocab, spec.embed_dim, spec.rnn_hidden)?;
        let fusion = Fusion::build(
            spec.fusion,
            store,
            &mut init,
            spec.image_dim,
            spec.rnn_hidden,
            spec.fused_dim,
            spec.sketch_dim,
            spec.sketch_seed,
        )?;
        Ok(Self { spec, rnn, fusion })
    }

    pub fn spec(&self) -> &EncoderSpec {
        &self.spec
    }

    pub fn out_dim(&self) -> usize {
        self.fusion.out_dim()
    }

    /// Width of the raw `[image; question]` condition.
    pub fn raw_dim(&self) -> usize {
        self.spec.image_dim + self.spec.rnn_hidden
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        [self.rnn.param_ids(), self.fusion.param_ids()].concat()
    }

    /// Encodes `images: [B, d_i]` with one token sequence per row.
    pub fn encode(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        images: &Tensor,
        questions: &[&[usize]],
        access: Access,
    ) -> Result<Encoded> {
        if images.rows() != questions.len() {
            return Err(Error::Shape(format!(
                "{} images for {} questions",
                images.rows(),
                questions.len()
            )));
        }
        if images.cols() != self.spec.image_dim {
            return Err(Error::Shape(format!(
                "expected image dim {}, got {}",
                self.spec.image_dim,
                images.cols()
            )));
        }
        let image = g.input(images.clone());
        let question = self.rnn.encode_batch(g, store, questions, access)?;
        let fused = self.fusion.forward(g, store, image, question, access)?;
        Ok(Encoded {
            image,
            question,
            fused,
        })
    }
}
