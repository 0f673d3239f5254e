use proptest::prelude::*;
use vqa_lab::signal::{
    circular_convolve, circular_correlate, count_sketch, fft, fft_real, Complex64, Direction, SketchPlan,
};

fn naive_dft(x: &[Complex64]) -> Vec<Complex64> {
    let n = x.len();
    (0..n)
        .map(|k| {
            x.iter()
                .enumerate()
                .map(|(j, &v)| {
                    let angle = -2.0 * std::f64::consts::PI * ((j * k) % n) as f64 / n as f64;
                    v * Complex64::from_polar(1.0, angle)
                })
                .sum()
        })
        .collect()
}

fn direct_conv(a: &[f64], b: &[f64]) -> Vec<f64> {
    let n = a.len();
    (0..n)
        .map(|k| (0..n).map(|j| a[j] * b[(k + n - j) % n]).sum())
        .collect()
}

fn outer(x: &[f64], y: &[f64]) -> Vec<f64> {
    x.iter().flat_map(|&a| y.iter().map(move |&b| a * b)).collect()
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn pow2_len() -> impl Strategy<Value = usize> {
    (0u32..=8).prop_map(|e| 1usize << e)
}

fn real_vec(n: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-10.0..10.0f64, n)
}

fn complex_vec(n: usize) -> impl Strategy<Value = Vec<Complex64>> {
    prop::collection::vec((-10.0..10.0f64, -10.0..10.0f64).prop_map(|(r, i)| Complex64::new(r, i)), n)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn fft_matches_naive_dft(x in pow2_len().prop_flat_map(complex_vec)) {
        let fast = fft(&x, Direction::Forward).unwrap();
        let slow = naive_dft(&x);
        for (a, b) in fast.iter().zip(&slow) {
            prop_assert!((a - b).norm() < 1e-9, "{a} vs {b}");
        }
    }

    #[test]
    fn inverse_undoes_forward(x in pow2_len().prop_flat_map(complex_vec)) {
        let back = fft(&fft(&x, Direction::Forward).unwrap(), Direction::Inverse).unwrap();
        for (a, b) in back.iter().zip(&x) {
            prop_assert!((a - b).norm() < 1e-12);
        }
    }

    #[test]
    fn parseval_holds(x in pow2_len().prop_flat_map(real_vec)) {
        let spectrum = fft_real(&x).unwrap();
        let time: f64 = x.iter().map(|v| v * v).sum();
        let freq: f64 = spectrum.iter().map(|z| z.norm_sqr()).sum::<f64>() / x.len() as f64;
        prop_assert!((time - freq).abs() <= 1e-9 * time.max(1.0));
    }

    #[test]
    fn real_input_spectrum_is_conjugate_symmetric(x in pow2_len().prop_flat_map(real_vec)) {
        let s = fft_real(&x).unwrap();
        let n = s.len();
        for k in 1..n {
            prop_assert!((s[k] - s[n - k].conj()).norm() < 1e-9);
        }
    }

    #[test]
    fn convolution_matches_direct_sum(
        (a, b) in pow2_len().prop_flat_map(|n| (real_vec(n), real_vec(n)))
    ) {
        let fast = circular_convolve(&a, &b).unwrap();
        prop_assert!(max_abs_diff(&fast, &direct_conv(&a, &b)) < 1e-9);
    }

    #[test]
    fn convolution_commutes((a, b) in pow2_len().prop_flat_map(|n| (real_vec(n), real_vec(n)))) {
        let ab = circular_convolve(&a, &b).unwrap();
        let ba = circular_convolve(&b, &a).unwrap();
        prop_assert!(max_abs_diff(&ab, &ba) < 1e-9);
    }

    #[test]
    fn correlation_is_the_adjoint(
        (g, a, b) in pow2_len().prop_flat_map(|n| (real_vec(n), real_vec(n), real_vec(n)))
    ) {
        // <g, a * b> = <corr(g, b), a>
        let lhs: f64 = g.iter().zip(direct_conv(&a, &b)).map(|(x, y)| x * y).sum();
        let rhs: f64 = circular_correlate(&g, &b).unwrap().iter().zip(&a).map(|(x, y)| x * y).sum();
        prop_assert!((lhs - rhs).abs() <= 1e-8 * lhs.abs().max(1.0));
    }

    #[test]
    fn sketch_of_outer_product_is_convolution_of_sketches(
        (x, y) in (1usize..=32, 1usize..=32).prop_flat_map(|(dx, dy)| (real_vec(dx), real_vec(dy))),
        ds_exp in 0u32..=5,
        seeds in (any::<u64>(), any::<u64>()),
    ) {
        let ds = 1 << ds_exp;
        let px = SketchPlan::new(x.len(), ds, seeds.0).unwrap();
        let py = SketchPlan::new(y.len(), ds, seeds.1).unwrap();
        let joint = SketchPlan::product(&px, &py).unwrap();
        let lhs = count_sketch(&outer(&x, &y), &joint).unwrap();
        let rhs = circular_convolve(&count_sketch(&x, &px).unwrap(), &count_sketch(&y, &py).unwrap()).unwrap();
        prop_assert!(max_abs_diff(&lhs, &rhs) < 1e-9);
    }

    #[test]
    fn sketch_is_linear(
        (x, y) in (1usize..=40).prop_flat_map(|d| (real_vec(d), real_vec(d))),
        (a, b) in (-3.0..3.0f64, -3.0..3.0f64),
        seed in any::<u64>(),
    ) {
        let plan = SketchPlan::new(x.len(), 16, seed).unwrap();
        let mixed: Vec<f64> = x.iter().zip(&y).map(|(u, v)| a * u + b * v).collect();
        let lhs = count_sketch(&mixed, &plan).unwrap();
        let sx = count_sketch(&x, &plan).unwrap();
        let sy = count_sketch(&y, &plan).unwrap();
        let rhs: Vec<f64> = sx.iter().zip(&sy).map(|(u, v)| a * u + b * v).collect();
        prop_assert!(max_abs_diff(&lhs, &rhs) < 1e-9);
    }

    #[test]
    fn sketch_entries_are_signed_bucket_sums(x in (1usize..=40).prop_flat_map(real_vec), seed in any::<u64>()) {
        let plan = SketchPlan::new(x.len(), 8, seed).unwrap();
        let s = count_sketch(&x, &plan).unwrap();
        let mut expect = vec![0.0; 8];
        for (i, v) in x.iter().enumerate() {
            expect[plan.bucket(i)] += plan.sign(i) * v;
        }
        prop_assert!(max_abs_diff(&s, &expect) < 1e-12);
    }
}

#[test]
fn sketch_preserves_inner_products_on_average() {
    let x: Vec<f64> = (0..20).map(|i| (i as f64 * 0.37).sin()).collect();
    let y: Vec<f64> = (0..20).map(|i| (i as f64 * 0.91).cos()).collect();
    let exact: f64 = x.iter().zip(&y).map(|(a, b)| a * b).sum();
    let trials = 4000;
    let mean = (0..trials)
        .map(|seed| {
            let plan = SketchPlan::new(20, 8, seed).unwrap();
            let sx = count_sketch(&x, &plan).unwrap();
            let sy = count_sketch(&y, &plan).unwrap();
            sx.iter().zip(&sy).map(|(a, b)| a * b).sum::<f64>()
        })
        .sum::<f64>()
        / trials as f64;
    // Each estimate has variance below (|x||y|)^2 / d_s, about 12 here.
    assert!((mean - exact).abs() < 0.25, "mean {mean} vs exact {exact}");
}

#[test]
fn non_power_of_two_lengths_are_rejected() {
    assert!(fft(&[Complex64::new(1.0, 0.0); 3], Direction::Forward).is_err());
    assert!(circular_convolve(&[1.0; 6], &[1.0; 6]).is_err());
    assert!(circular_convolve(&[1.0; 4], &[1.0; 8]).is_err());
}
