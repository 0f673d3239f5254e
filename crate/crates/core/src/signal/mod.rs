//! Count sketch, radix-2 FFT and circular convolution: the kernel behind
//! compact bilinear pooling.

mod conv;
mod fft;
mod sketch;

pub use conv::{circular_convolve, circular_correlate};
pub use fft::{fft, fft_real, Direction, FftPlan};
pub use sketch::{count_sketch, SketchPlan};

pub use num_complex::Complex64;
