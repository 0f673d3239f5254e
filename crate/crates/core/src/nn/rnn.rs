use super::init::Initializer;
use super::layers::Access;
use super::{Graph, ParamId, ParamStore, Tensor, Var};
use crate::error::{Error, Result};

/// Elman question encoder: `h_t = tanh(W_x e(tok_t) + W_h h_{t-1} + b)`,
/// `h_0 = 0`, output is the final hidden state.
#[derive(Debug, Clone, PartialEq)]
pub struct ElmanEncoder {
    pub embed: ParamId,
    pub w_x: ParamId,
    pub w_h: ParamId,
    pub bias: ParamId,
    vocab: usize,
    embed_dim: usize,
    hidden: usize,
}

impl ElmanEncoder {
    pub fn new(
        store: &mut ParamStore,
        init: &mut Initializer,
        name: &str,
        vocab: usize,
        embed_dim: usize,
        hidden: usize,
    ) -> Result<Self> {
        if vocab == 0 || embed_dim == 0 || hidden == 0 {
            return Err(Error::InvalidArgument(format!(
                "rnn dims must be positive: vocab {vocab}, embed {embed_dim}, hidden {hidden}"
            )));
        }
        let embed = store.add(format!("{name}.embed"), init.lookup_table(vocab, embed_dim)?);
        let w_x = store.add(format!("{name}.w_x"), init.matrix(hidden, embed_dim)?);
        let w_h = store.add(format!("{name}.w_h"), init.matrix(hidden, hidden)?);
        let bias = store.add(format!("{name}.bias"), Tensor::zeros(vec![hidden]));
        Ok(Self {
            embed,
            w_x,
            w_h,
            bias,
            vocab,
            embed_dim,
            hidden,
        })
    }

    pub fn vocab(&self) -> usize {
        self.vocab
    }

    pub fn embed_dim(&self) -> usize {
        self.embed_dim
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        vec![self.embed, self.w_x, self.w_h, self.bias]
    }

    pub fn check_tokens(&self, tokens: &[usize]) -> Result<()> {
        match tokens.iter().position(|&t| t >= self.vocab) {
            Some(position) => Err(Error::OutOfVocabulary {
                position,
                token: tokens[position],
                vocab: self.vocab,
            }),
            None => Ok(()),
        }
    }

    /// Encodes a batch of sequences (any lengths, including empty) to `[B, hidden]`.
    ///
    /// Shorter sequences hold their state once exhausted.
    pub fn encode_batch(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        seqs: &[&[usize]],
        access: Access,
    ) -> Result<Var> {
        for s in seqs {
            self.check_tokens(s)?;
        }
        let batch = seqs.len();
        let max_len = seqs.iter().map(|s| s.len()).max().unwrap_or(0);
        let mut h = g.input(Tensor::zeros(vec![batch, self.hidden]));
        if max_len == 0 {
            return Ok(h);
        }
        let embed = access.leaf(g, store, self.embed);
        let w_x = access.leaf(g, store, self.w_x);
        let w_h = access.leaf(g, store, self.w_h);
        let bias = access.leaf(g, store, self.bias);
        for t in 0..max_len {
            let active: Vec<bool> = seqs.iter().map(|s| t < s.len()).collect();
            let idx: Vec<usize> = seqs.iter().map(|s| s.get(t).copied().unwrap_or(0)).collect();
            let e = g.gather_rows(embed, &idx)?;
            let xin = g.linear(e, w_x, Some(bias))?;
            let pre = if t == 0 {
                xin
            } else {
                let rec = g.linear(h, w_h, None)?;
                g.add(xin, rec)?
            };
            let cand = g.tanh(pre);
            h = if active.iter().all(|&a| a) {
                cand
            } else {
                let on: Vec<f64> = active.iter().map(|&a| if a { 1.0 } else { 0.0 }).collect();
                let off: Vec<f64> = on.iter().map(|v| 1.0 - v).collect();
                let on = g.input(Tensor::new(vec![batch, 1], on)?);
                let off = g.input(Tensor::new(vec![batch, 1], off)?);
                let keep_new = g.mul_col(cand, on)?;
                let keep_old = g.mul_col(h, off)?;
                g.add(keep_new, keep_old)?
            };
        }
        Ok(h)
    }
}

/// Encodes one token sequence to its final hidden state `[1, hidden]`.
pub fn rnn_encode(
    g: &mut Graph,
    store: &ParamStore,
    encoder: &ElmanEncoder,
    tokens: &[usize],
    access: Access,
) -> Result<Var> {
    encoder.encode_batch(g, store, &[tokens], access)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{InitMode, InitScheme};

    fn encoder(store: &mut ParamStore) -> ElmanEncoder {
        let mut init = Initializer::new(InitMode::new(InitScheme::I2, 11));
        ElmanEncoder::new(store, &mut init, "rnn", 5, 3, 4).unwrap()
    }

    #[test]
    fn empty_sequence_is_zero_state() {
        let mut store = ParamStore::new();
        let enc = encoder(&mut store);
        let mut g = Graph::new();
        let h = rnn_encode(&mut g, &store, &enc, &[], Access::Tracked).unwrap();
        assert_eq!(g.value(h).data(), &[0.0; 4]);
    }

    #[test]
    fn zero_weights_give_zero() {
        let mut store = ParamStore::new();
        let enc = encoder(&mut store);
        for id in enc.param_ids() {
            let shape = store.get(id).shape().to_vec();
            *store.get_mut(id) = Tensor::zeros(shape);
        }
        let mut g = Graph::new();
        let h = rnn_encode(&mut g, &store, &enc, &[1, 4, 2], Access::Tracked).unwrap();
        assert_eq!(g.value(h).data(), &[0.0; 4]);
    }

    #[test]
    fn one_token_hand_recurrence() {
        let mut store = ParamStore::new();
        let mut init = Initializer::new(InitMode::new(InitScheme::I1, 0));
        let enc = ElmanEncoder::new(&mut store, &mut init, "r", 2, 2, 2).unwrap();
        *store.get_mut(enc.embed) = Tensor::new(vec![2, 2], vec![0.5, -1.0, 2.0, 0.25]).unwrap();
        *store.get_mut(enc.w_x) = Tensor::new(vec![2, 2], vec![1.0, 2.0, -0.5, 0.3]).unwrap();
        *store.get_mut(enc.w_h) = Tensor::new(vec![2, 2], vec![9.0, 9.0, 9.0, 9.0]).unwrap();
        *store.get_mut(enc.bias) = Tensor::new(vec![2], vec![0.1, -0.2]).unwrap();
        let mut g = Graph::new();
        let h = rnn_encode(&mut g, &store, &enc, &[1], Access::Tracked).unwrap();
        // e = [2, 0.25]; W_x e + b = [2 + 0.5 + 0.1, -1 + 0.075 - 0.2]
        let expect = [(2.6f64).tanh(), (-1.125f64).tanh()];
        for (a, b) in g.value(h).data().iter().zip(expect) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn ragged_batch_matches_single_runs() {
        let mut store = ParamStore::new();
        let enc = encoder(&mut store);
        let seqs: [&[usize]; 3] = [&[1, 2, 3], &[4], &[]];
        let mut g = Graph::new();
        let batch = enc.encode_batch(&mut g, &store, &seqs, Access::Frozen).unwrap();
        for (i, s) in seqs.iter().enumerate() {
            let mut g1 = Graph::new();
            let one = rnn_encode(&mut g1, &store, &enc, s, Access::Frozen).unwrap();
            assert_eq!(g.value(batch).row_slice(i), g1.value(one).data());
        }
    }

    #[test]
    fn out_of_vocab_reports_position() {
        let mut store = ParamStore::new();
        let enc = encoder(&mut store);
        let mut g = Graph::new();
        let err = rnn_encode(&mut g, &store, &enc, &[0, 1, 7], Access::Tracked).unwrap_err();
        assert!(matches!(
            err,
            Error::OutOfVocabulary {
                position: 2,
                token: 7,
                ..
            }
        ));
    }
}
