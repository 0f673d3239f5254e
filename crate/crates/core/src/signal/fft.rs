use std::cell::RefCell;
use std::collections::HashMap;
use std::f64::consts::PI;
use std::rc::Rc;

use num_complex::Complex64;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Forward,
    /// Normalized by `1/n`, so `Inverse` undoes `Forward`.
    Inverse,
}

/// Precomputed twiddles and bit-reversal permutation for one length.
#[derive(Debug, Clone)]
pub struct FftPlan {
    n: usize,
    // exp(-2*pi*i*k/n) for k in 0..n/2
    twiddles: Vec<Complex64>,
    bitrev: Vec<usize>,
}

impl FftPlan {
    pub fn new(n: usize) -> Result<Self> {
        if n == 0 || !n.is_power_of_two() {
            return Err(Error::InvalidArgument(format!(
                "fft length {n} is not a power of two"
            )));
        }
        let bits = n.trailing_zeros();
        let bitrev = (0..n)
            .map(|i| {
                if bits == 0 {
                    0
                } else {
                    i.reverse_bits() >> (usize::BITS - bits)
                }
            })
            .collect();
        let twiddles = (0..n / 2)
            .map(|k| Complex64::from_polar(1.0, -2.0 * PI * k as f64 / n as f64))
            .collect();
        Ok(Self {
            n,
            twiddles,
            bitrev,
        })
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    /// In-place iterative radix-2 transform.
    pub fn process(&self, buf: &mut [Complex64], direction: Direction) -> Result<()> {
        let n = self.n;
        if buf.len() != n {
            return Err(Error::Shape(format!(
                "buffer of length {} given to a length-{n} plan",
                buf.len()
            )));
        }
        for i in 0..n {
            let j = self.bitrev[i];
            if i < j {
                buf.swap(i, j);
            }
        }
        let mut len = 2;
        while len <= n {
            let half = len / 2;
            let stride = n / len;
            for start in (0..n).step_by(len) {
                for k in 0..half {
                    let mut w = self.twiddles[k * stride];
                    if direction == Direction::Inverse {
                        w = w.conj();
                    }
                    let u = buf[start + k];
                    let v = buf[start + k + half] * w;
                    buf[start + k] = u + v;
                    buf[start + k + half] = u - v;
                }
            }
            len <<= 1;
        }
        if direction == Direction::Inverse {
            let scale = 1.0 / n as f64;
            buf.iter_mut().for_each(|z| *z *= scale);
        }
        Ok(())
    }
}

thread_local! {
    static PLANS: RefCell<HashMap<usize, Rc<FftPlan>>> = RefCell::new(HashMap::new());
}

/// Cached plan for length `n` on the current thread.
pub(crate) fn plan_for(n: usize) -> Result<Rc<FftPlan>> {
    PLANS.with(|plans| {
        if let Some(p) = plans.borrow().get(&n) {
            return Ok(Rc::clone(p));
        }
        let p = Rc::new(FftPlan::new(n)?);
        plans.borrow_mut().insert(n, Rc::clone(&p));
        Ok(p)
    })
}

/// Discrete Fourier transform of `x`; the length must be a power of two.
pub fn fft(x: &[Complex64], direction: Direction) -> Result<Vec<Complex64>> {
    let plan = plan_for(x.len())?;
    let mut buf = x.to_vec();
    plan.process(&mut buf, direction)?;
    Ok(buf)
}

/// Forward transform of a real signal.
pub fn fft_real(x: &[f64]) -> Result<Vec<Complex64>> {
    let plan = plan_for(x.len())?;
    let mut buf: Vec<Complex64> = x.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    plan.process(&mut buf, Direction::Forward)?;
    Ok(buf)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn impulse_is_flat() {
        let x = [1.0, 0.0, 0.0, 0.0].map(|v| Complex64::new(v, 0.0));
        let y = fft(&x, Direction::Forward).unwrap();
        for z in y {
            assert!((z - Complex64::new(1.0, 0.0)).norm() < 1e-15);
        }
    }

    #[test]
    fn rejects_non_power_of_two() {
        assert!(fft(&[Complex64::default(); 6], Direction::Forward).is_err());
        assert!(fft(&[], Direction::Forward).is_err());
    }

    #[test]
    fn length_one_is_identity() {
        let x = [Complex64::new(2.5, -1.0)];
        assert_eq!(fft(&x, Direction::Forward).unwrap(), x.to_vec());
        assert_eq!(fft(&x, Direction::Inverse).unwrap(), x.to_vec());
    }
}
