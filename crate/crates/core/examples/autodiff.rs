//! Builds a small MLP on the tape, backpropagates a cross-entropy loss and
//! compares the gradients with central differences.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use vqa_lab::nn::{check_gradients, Access, Graph, InitMode, InitScheme, Initializer, Mlp, ParamStore, Tensor};
use vqa_lab::training::cross_entropy;

fn main() -> vqa_lab::Result<()> {
    let mut store = ParamStore::new();
    let mut init = Initializer::new(InitMode::new(InitScheme::I2, 11));
    let mlp = Mlp::builder(&mut store, &mut init, "mlp", 5)
        .linear(8)
        .and_then(|b| b.tanh())
        .and_then(|b| b.linear(3))?
        .build();
    let x = Tensor::new(vec![4, 5], (0..20).map(|i| ((i * 37) % 11) as f64 / 11.0 - 0.5).collect())?;
    let labels = [0, 2, 1, 2];

    let ids: Vec<_> = store.ids().collect();
    let report = check_gradients(&mut store, &ids, 1, |store| {
        let mut g = Graph::new();
        let xv = g.input(x.clone());
        let scores = mlp.forward(&mut g, store, xv, Access::Tracked, false, &mut ChaCha8Rng::seed_from_u64(0))?;
        let loss = cross_entropy(&mut g, scores, &labels)?;
        Ok((g, loss))
    })?;
    println!("{} parameters, {report}", store.scalar_count());
    Ok(())
}
