//! Count sketch of an outer product equals the circular convolution of the
//! two sketches. This is what makes compact bilinear pooling cheap.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use vqa_lab::signal::{circular_convolve, count_sketch, SketchPlan};

fn main() -> vqa_lab::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let (dx, dy, d) = (12, 20, 16);
    let x: Vec<f64> = (0..dx).map(|_| rng.random_range(-1.0..1.0)).collect();
    let y: Vec<f64> = (0..dy).map(|_| rng.random_range(-1.0..1.0)).collect();
    let px = SketchPlan::new(dx, d, 1)?;
    let py = SketchPlan::new(dy, d, 2)?;

    let outer: Vec<f64> = x.iter().flat_map(|a| y.iter().map(move |b| a * b)).collect();
    let direct = count_sketch(&outer, &SketchPlan::product(&px, &py)?)?;
    let fast = circular_convolve(&count_sketch(&x, &px)?, &count_sketch(&y, &py)?)?;

    let gap = direct.iter().zip(&fast).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    println!("{}-dim outer product sketched to {d} dims", dx * dy);
    println!("max |sketch(x (x) y) - sketch(x) * sketch(y)| = {gap:.2e}");
    Ok(())
}
