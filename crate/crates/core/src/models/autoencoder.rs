use super::AnswerScores;
use crate::error::{Error, Result};
use crate::nn::{Access, Graph, InitMode, Initializer, Mlp, ParamId, ParamStore, Tensor, Var};

#[derive(Debug, Clone, PartialEq)]
pub struct AutoencoderSpec {
    pub input_dim: usize,
    /// Must be strictly smaller than `input_dim`.
    pub code_dim: usize,
    /// Hidden widths of the classifier head on the code.
    pub head_hidden: Vec<usize>,
    pub answers: usize,
    pub init: InitMode,
}

/// `tanh` encoder to a low-dimensional code, linear decoder back to the
/// input, and a ReLU classifier head on the code.
#[derive(Debug, Clone, PartialEq)]
pub struct Autoencoder {
    spec: AutoencoderSpec,
    pub encoder: Mlp,
    pub decoder: Mlp,
    pub head: Mlp,
}

/// Trace handles of one autoencoder pass.
#[derive(Debug, Clone, Copy)]
pub struct AutoencoderOutput {
    pub code: Var,
    pub reconstruction: Var,
    pub scores: Var,
}

impl Autoencoder {
    pub fn new(store: &mut ParamStore, spec: AutoencoderSpec) -> Result<Self> {
        if spec.code_dim == 0 || spec.code_dim >= spec.input_dim {
            return Err(Error::InvalidArgument(format!(
                "code dim {} must be positive and below input dim {}",
                spec.code_dim, spec.input_dim
            )));
        }
        let mut init = Initializer::new(spec.init);
        let encoder = Mlp::builder(store, &mut init, "ae.encoder", spec.input_dim)
            .linear(spec.code_dim)?
            .tanh()?
            .build();
        let decoder = Mlp::builder(store, &mut init, "ae.decoder", spec.code_dim)
            .linear(spec.input_dim)?
            .build();
        let mut head = Mlp::builder(store, &mut init, "ae.head", spec.code_dim);
        for &w in &spec.head_hidden {
            head = head.linear(w)?.relu()?;
        }
        let head = head.linear(spec.answers)?.build();
        Ok(Self {
            spec,
            encoder,
            decoder,
            head,
        })
    }

    pub fn spec(&self) -> &AutoencoderSpec {
        &self.spec
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        [self.encoder.param_ids(), self.decoder.param_ids(), self.head.param_ids()].concat()
    }

    pub fn forward(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        x: Var,
        access: Access,
    ) -> Result<AutoencoderOutput> {
        let code = self.encoder.forward_with_masks(g, store, x, access, &[])?;
        let reconstruction = self.decoder.forward_with_masks(g, store, code, access, &[])?;
        let scores = self.head.forward_with_masks(g, store, code, access, &[])?;
        Ok(AutoencoderOutput {
            code,
            reconstruction,
            scores,
        })
    }

    /// `(code, reconstruction, scores)` for one concatenated feature row.
    pub fn run(&self, store: &ParamStore, features: &Tensor) -> Result<(Tensor, Tensor, AnswerScores)> {
        let mut g = Graph::new();
        let x = g.input(features.clone());
        let out = self.forward(&mut g, store, x, Access::Frozen)?;
        Ok((
            g.value(out.code).clone(),
            g.value(out.reconstruction).clone(),
            AnswerScores::new(g.value(out.scores).row_slice(0).to_vec()),
        ))
    }
}
