//! Radix-2 FFT, its inverse, and circular convolution through the
//! frequency domain.

use vqa_lab::signal::{circular_convolve, circular_correlate, fft, fft_real, Complex64, Direction};

fn main() -> vqa_lab::Result<()> {
    let x: Vec<f64> = (0..8).map(|i| (i as f64 * 0.7).sin()).collect();
    let spectrum = fft_real(&x)?;
    for (k, c) in spectrum.iter().enumerate() {
        println!("X[{k}] = {:+.4} {:+.4}i", c.re, c.im);
    }

    let back = fft(&spectrum, Direction::Inverse)?;
    let err = back.iter().zip(&x).map(|(b, &a)| (b - Complex64::new(a, 0.0)).norm()).fold(0.0, f64::max);
    println!("round trip error {err:.2e}");

    let a = [1.0, 2.0, 0.0, 0.0];
    let b = [0.0, 1.0, 0.5, 0.0];
    println!("a * b   = {:?}", circular_convolve(&a, &b)?);
    println!("corr    = {:?}", circular_correlate(&a, &b)?);
    Ok(())
}
