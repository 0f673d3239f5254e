use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use vqa_lab::nn::{
    sgd_step, Access, Graph, InitMode, InitScheme, Initializer, Mlp, ParamStore, Tensor, I1_CLIP_SIGMAS, I1_STD,
};

fn matrix() -> impl Strategy<Value = Tensor> {
    (1usize..6, 1usize..9).prop_flat_map(|(m, n)| {
        prop::collection::vec(-20.0..20.0f64, m * n).prop_map(move |d| Tensor::new(vec![m, n], d).unwrap())
    })
}

fn row_sums(t: &Tensor, f: impl Fn(f64) -> f64) -> Vec<f64> {
    (0..t.rows()).map(|r| t.row_slice(r).iter().map(|&x| f(x)).sum()).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn softmax_rows_are_distributions(x in matrix()) {
        let mut g = Graph::new();
        let v = g.input(x);
        let s = g.softmax_rows(v);
        let out = g.value(s);
        prop_assert!(out.data().iter().all(|&p| (0.0..=1.0).contains(&p)));
        for total in row_sums(out, |p| p) {
            prop_assert!((total - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn log_softmax_exponentiates_to_one(x in matrix()) {
        let mut g = Graph::new();
        let v = g.input(x);
        let s = g.log_softmax_rows(v);
        prop_assert!(g.value(s).data().iter().all(|&l| l <= 1e-15));
        for total in row_sums(g.value(s), f64::exp) {
            prop_assert!((total - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn layer_norm_rows_are_standardized(x in matrix()) {
        prop_assume!(x.cols() >= 2);
        let spread = (0..x.rows()).all(|r| {
            let row = x.row_slice(r);
            let lo = row.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            hi - lo > 0.1
        });
        prop_assume!(spread);
        let n = x.cols() as f64;
        let mut g = Graph::new();
        let v = g.input(x);
        let y = g.layer_norm_rows(v);
        for r in 0..g.value(y).rows() {
            let row = g.value(y).row_slice(r);
            let mean = row.iter().sum::<f64>() / n;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
            prop_assert!(mean.abs() < 1e-10);
            prop_assert!((var - 1.0).abs() < 1e-4);
        }
    }

    #[test]
    fn l2_rows_have_unit_norm(x in matrix()) {
        prop_assume!((0..x.rows()).all(|r| x.row_slice(r).iter().any(|v| v.abs() > 1e-3)));
        let mut g = Graph::new();
        let v = g.input(x);
        let y = g.l2_norm_rows(v);
        for total in row_sums(g.value(y), |v| v * v) {
            prop_assert!((total - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn i1_weights_stay_inside_the_clip(rows in 1usize..40, cols in 1usize..40, seed in any::<u64>()) {
        let w = Initializer::new(InitMode::new(InitScheme::I1, seed)).matrix(rows, cols).unwrap();
        let bound = I1_CLIP_SIGMAS * I1_STD;
        prop_assert!(w.data().iter().all(|v| v.abs() <= bound));
    }

    #[test]
    fn i2_weights_stay_inside_the_glorot_bound(rows in 1usize..40, cols in 1usize..40, seed in any::<u64>()) {
        let w = Initializer::new(InitMode::new(InitScheme::I2, seed)).matrix(rows, cols).unwrap();
        let a = (6.0 / (rows + cols) as f64).sqrt();
        prop_assert!(w.data().iter().all(|v| v.abs() <= a));
    }

    #[test]
    fn initialization_is_deterministic(seed in any::<u64>(), i2 in any::<bool>()) {
        let scheme = if i2 { InitScheme::I2 } else { InitScheme::I1 };
        let a = Initializer::new(InitMode::new(scheme, seed)).matrix(7, 5).unwrap();
        let b = Initializer::new(InitMode::new(scheme, seed)).matrix(7, 5).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn linear_gradients_match_closed_form(
        x in prop::collection::vec(-2.0..2.0f64, 3 * 4),
        w in prop::collection::vec(-2.0..2.0f64, 5 * 4),
        r in prop::collection::vec(-2.0..2.0f64, 3 * 5),
    ) {
        // L = sum(r .* (x W^T + b)): dW = r^T x, db = column sums of r.
        let mut store = ParamStore::new();
        let wid = store.add("w", Tensor::new(vec![5, 4], w).unwrap());
        let bid = store.add("b", Tensor::zeros(vec![5]));
        let mut g = Graph::new();
        let xv = g.input(Tensor::new(vec![3, 4], x.clone()).unwrap());
        let wv = g.param(&store, wid);
        let bv = g.param(&store, bid);
        let y = g.linear(xv, wv, Some(bv)).unwrap();
        let rv = g.input(Tensor::new(vec![3, 5], r.clone()).unwrap());
        let p = g.mul(y, rv).unwrap();
        let loss = g.sum(p);
        let grads = g.backward_scalar(loss).unwrap();
        let dw = grads.get(wid).unwrap().data();
        for o in 0..5 {
            for i in 0..4 {
                let expect: f64 = (0..3).map(|n| r[n * 5 + o] * x[n * 4 + i]).sum();
                prop_assert!((dw[o * 4 + i] - expect).abs() < 1e-12);
            }
        }
        let db = grads.get(bid).unwrap().data();
        for o in 0..5 {
            let expect: f64 = (0..3).map(|n| r[n * 5 + o]).sum();
            prop_assert!((db[o] - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn sgd_moves_against_the_gradient(p in prop::collection::vec(-5.0..5.0f64, 1..10), alpha in 0.0..1.0f64) {
        // L = sum(p^2) / 2 has gradient p, so one step scales p by (1 - alpha).
        let mut store = ParamStore::new();
        let id = store.add("p", Tensor::row(p.clone()));
        let mut g = Graph::new();
        let v = g.param(&store, id);
        let sq = g.mul(v, v).unwrap();
        let s = g.sum(sq);
        let half = g.scale(s, 0.5);
        let grads = g.backward_scalar(half).unwrap();
        sgd_step(&mut store, &grads, alpha).unwrap();
        for (after, before) in store.get(id).data().iter().zip(&p) {
            prop_assert!((after - (1.0 - alpha) * before).abs() < 1e-12);
        }
    }
}

#[test]
fn frozen_parameters_receive_no_gradient() {
    let mut store = ParamStore::new();
    let a = store.add("a", Tensor::row(vec![1.0, 2.0]));
    let b = store.add("b", Tensor::row(vec![3.0, 4.0]));
    let mut g = Graph::new();
    let av = g.param(&store, a);
    let bv = g.frozen(&store, b);
    let p = g.mul(av, bv).unwrap();
    let loss = g.sum(p);
    let grads = g.backward_scalar(loss).unwrap();
    assert_eq!(grads.get(a).unwrap().data(), &[3.0, 4.0]);
    assert!(grads.get(b).is_none());
}

#[test]
fn mlp_eval_mode_is_deterministic() {
    let mut store = ParamStore::new();
    let mut init = Initializer::new(InitMode::new(InitScheme::I2, 4));
    let mlp = Mlp::builder(&mut store, &mut init, "mlp", 6)
        .linear(8)
        .and_then(|b| b.relu())
        .and_then(|b| b.dropout(0.5))
        .and_then(|b| b.linear(3))
        .unwrap()
        .build();
    let x = Tensor::new(vec![2, 6], (0..12).map(|i| i as f64 * 0.1).collect()).unwrap();
    let run = |seed: u64| {
        let mut g = Graph::new();
        let xv = g.input(x.clone());
        let y = mlp
            .forward(&mut g, &store, xv, Access::Tracked, false, &mut ChaCha8Rng::seed_from_u64(seed))
            .unwrap();
        g.value(y).clone()
    };
    assert_eq!(run(1), run(2));
}
