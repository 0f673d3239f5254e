//! Encodes token sequences of different lengths with the Elman encoder.

use vqa_lab::nn::{Access, ElmanEncoder, Graph, InitMode, InitScheme, Initializer, ParamStore};

fn main() -> vqa_lab::Result<()> {
    let mut store = ParamStore::new();
    let mut init = Initializer::new(InitMode::new(InitScheme::I2, 3));
    let rnn = ElmanEncoder::new(&mut store, &mut init, "rnn", 20, 6, 10)?;
    let questions: [&[usize]; 3] = [&[1, 4, 9], &[2, 2], &[7, 3, 5, 11, 19]];

    let mut g = Graph::new();
    let h = rnn.encode_batch(&mut g, &store, &questions, Access::Frozen)?;
    for (q, r) in questions.iter().zip(0..) {
        let row = g.value(h).row_slice(r);
        println!("{q:?} -> [{:+.3}, {:+.3}, ...] ({} dims)", row[0], row[1], row.len());
    }
    Ok(())
}
