//! In-place iterative radix-2 FFT over split real/imaginary buffers.

use std::f64::consts::PI;

use crate::error::{Error, Result};

/// Precomputed twiddles and bit-reversal permutation for one power-of-two size.
#[derive(Clone, Debug)]
pub struct Fft {
    n: usize,
    cos: Vec<f64>,
    sin: Vec<f64>,
    rev: Vec<usize>,
}

impl Fft {
    pub fn new(n: usize) -> Result<Self> {
        if n == 0 || !n.is_power_of_two() {
            return Err(Error::Parameter(format!("fft size {n} is not a power of two")));
        }
        let bits = n.trailing_zeros();
        let rev = (0..n)
            .map(|i| if bits == 0 { 0 } else { i.reverse_bits() >> (usize::BITS - bits) })
            .collect();
        let (cos, sin) = (0..n / 2)
            .map(|k| {
                let a = -2.0 * PI * k as f64 / n as f64;
                (a.cos(), a.sin())
            })
            .unzip();
        Ok(Fft { n, cos, sin, rev })
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    /// Forward transform `X[k] = Σ x[n] e^{-2πikn/N}`, in place.
    pub fn forward(&self, re: &mut [f64], im: &mut [f64]) {
        assert_eq!(re.len(), self.n);
        assert_eq!(im.len(), self.n);
        for i in 0..self.n {
            let j = self.rev[i];
            if i < j {
                re.swap(i, j);
                im.swap(i, j);
            }
        }
        let mut len = 2;
        while len <= self.n {
            let half = len / 2;
            let step = self.n / len;
            for start in (0..self.n).step_by(len) {
                for k in 0..half {
                    let (wr, wi) = (self.cos[k * step], self.sin[k * step]);
                    let (a, b) = (start + k, start + k + half);
                    let tr = re[b] * wr - im[b] * wi;
                    let ti = re[b] * wi + im[b] * wr;
                    re[b] = re[a] - tr;
                    im[b] = im[a] - ti;
                    re[a] += tr;
                    im[a] += ti;
                }
            }
            len <<= 1;
        }
    }

    /// `|X[k]|²` for `k = 0..=N/2` of a real input (zero-padded to `N`).
    pub fn power_spectrum(&self, x: &[f64], out: &mut [f64]) {
        let mut re = vec![0.0; self.n];
        let mut im = vec![0.0; self.n];
        re[..x.len()].copy_from_slice(x);
        self.forward(&mut re, &mut im);
        for (k, o) in out.iter_mut().enumerate().take(self.n / 2 + 1) {
            *o = re[k] * re[k] + im[k] * im[k];
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn naive_dft(re: &[f64], im: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let n = re.len();
        let mut or = vec![0.0; n];
        let mut oi = vec![0.0; n];
        for k in 0..n {
            for t in 0..n {
                let a = -2.0 * PI * ((k * t) % n) as f64 / n as f64;
                or[k] += re[t] * a.cos() - im[t] * a.sin();
                oi[k] += re[t] * a.sin() + im[t] * a.cos();
            }
        }
        (or, oi)
    }

    #[test]
    fn matches_naive_dft() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for &n in &[1usize, 2, 8, 64, 512] {
            let re: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let im: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let (er, ei) = naive_dft(&re, &im);
            let (mut fr, mut fi) = (re.clone(), im.clone());
            Fft::new(n).unwrap().forward(&mut fr, &mut fi);
            let scale = er.iter().chain(&ei).fold(0.0f64, |m, v| m.max(v.abs()));
            for k in 0..n {
                assert!((fr[k] - er[k]).abs() <= 1e-9 * scale.max(1.0), "n={n} k={k}");
                assert!((fi[k] - ei[k]).abs() <= 1e-9 * scale.max(1.0), "n={n} k={k}");
            }
        }
    }

    #[test]
    fn rejects_non_power_of_two() {
        assert!(Fft::new(400).is_err());
        assert!(Fft::new(0).is_err());
    }
}
