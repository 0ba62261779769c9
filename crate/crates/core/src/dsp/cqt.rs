//! Constant-Q transform by direct kernel inner products.

use std::f64::consts::PI;

use crate::error::{Error, Result};

#[derive(Clone, Debug)]
struct Kernel {
    /// Window length `N_k`.
    len: usize,
    /// `w[n]·e^{-2πi f_k n / fs} / N_k`, real and imaginary parts.
    re: Vec<f64>,
    im: Vec<f64>,
}

/// Precomputed kernels for one sample rate and bin layout.
#[derive(Clone, Debug)]
pub struct Cqt {
    pub fmin: f64,
    pub bins_per_octave: usize,
    pub hop: usize,
    pub sample_rate: f64,
    kernels: Vec<Kernel>,
}

impl Cqt {
    pub fn new(sample_rate: f64, fmin: f64, bins_per_octave: usize, n_bins: usize, hop: usize) -> Result<Self> {
        if bins_per_octave == 0 || n_bins == 0 || hop == 0 || !(fmin > 0.0) {
            return Err(Error::Parameter("cqt needs positive fmin, bins and hop".into()));
        }
        let top = fmin * 2f64.powf(n_bins as f64 / bins_per_octave as f64);
        if top > sample_rate / 2.0 {
            return Err(Error::Parameter(format!(
                "cqt range reaches {top:.1} Hz, above Nyquist {} Hz",
                sample_rate / 2.0
            )));
        }
        let q = Self::q_factor(bins_per_octave);
        let kernels = (0..n_bins)
            .map(|k| {
                let f = fmin * 2f64.powf(k as f64 / bins_per_octave as f64);
                let len = (q * sample_rate / f).ceil() as usize;
                let (re, im) = (0..len)
                    .map(|n| {
                        let w = 0.5 - 0.5 * (2.0 * PI * n as f64 / len as f64).cos();
                        let a = -2.0 * PI * f * n as f64 / sample_rate;
                        (w * a.cos() / len as f64, w * a.sin() / len as f64)
                    })
                    .unzip();
                Kernel { len, re, im }
            })
            .collect();
        Ok(Cqt { fmin, bins_per_octave, hop, sample_rate, kernels })
    }

    pub fn q_factor(bins_per_octave: usize) -> f64 {
        1.0 / (2f64.powf(1.0 / bins_per_octave as f64) - 1.0)
    }

    pub fn n_bins(&self) -> usize {
        self.kernels.len()
    }

    pub fn center_hz(&self, k: usize) -> f64 {
        self.fmin * 2f64.powf(k as f64 / self.bins_per_octave as f64)
    }

    pub fn window_len(&self, k: usize) -> usize {
        self.kernels[k].len
    }

    pub fn n_frames(&self, n_samples: usize) -> usize {
        if n_samples == 0 {
            0
        } else {
            1 + (n_samples - 1) / self.hop
        }
    }

    /// `|X_k(t)|²` as `n_bins × T`, `T = 1 + floor((N-1)/hop)`. Window `k` at
    /// frame `t` is centered on sample `t·hop`; samples outside the signal are zero.
    pub fn power(&self, x: &[f64]) -> Vec<f64> {
        let frames = self.n_frames(x.len());
        let mut out = vec![0.0; self.kernels.len() * frames];
        for (k, ker) in self.kernels.iter().enumerate() {
            let half = ker.len / 2;
            for t in 0..frames {
                let start = (t * self.hop) as isize - half as isize;
                let lo = (-start).max(0) as usize;
                let hi = ((x.len() as isize - start).max(0) as usize).min(ker.len);
                let (mut re, mut im) = (0.0, 0.0);
                for n in lo..hi {
                    let v = x[(start + n as isize) as usize];
                    re += v * ker.re[n];
                    im += v * ker.im[n];
                }
                out[k * frames + t] = re * re + im * im;
            }
        }
        out
    }
}
