//! Triangular filterbanks and the orthonormal DCT-II.

use crate::error::{Error, Result};

pub fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

pub fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

/// Row-major `rows × cols` matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct Matrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Matrix {
    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    /// `self · x` for a vector `x` of length `cols`.
    pub fn apply(&self, x: &[f64], out: &mut [f64]) {
        for (r, o) in out.iter_mut().enumerate().take(self.rows) {
            *o = self.row(r).iter().zip(x).map(|(a, b)| a * b).sum();
        }
    }
}

fn check_band(n_filters: usize, fft_size: usize, fs: f64, fmin: f64, fmax: f64) -> Result<()> {
    if n_filters < 2 {
        return Err(Error::Parameter(format!("need at least 2 filters, got {n_filters}")));
    }
    if fft_size < 2 {
        return Err(Error::Parameter(format!("fft size {fft_size} too small")));
    }
    if !(fmin >= 0.0 && fmin < fmax && fmax <= fs / 2.0) {
        return Err(Error::Parameter(format!(
            "band [{fmin}, {fmax}] Hz is not inside [0, {}] Hz",
            fs / 2.0
        )));
    }
    Ok(())
}

/// Triangles with corner frequencies `edges[i], edges[i+1], edges[i+2]`, peak 1.
fn triangles(edges: &[f64], fft_size: usize, fs: f64) -> Matrix {
    let n_bins = fft_size / 2 + 1;
    let rows = edges.len() - 2;
    let mut data = vec![0.0; rows * n_bins];
    for r in 0..rows {
        let (lo, c, hi) = (edges[r], edges[r + 1], edges[r + 2]);
        for k in 0..n_bins {
            let f = k as f64 * fs / fft_size as f64;
            let up = (f - lo) / (c - lo);
            let down = (hi - f) / (hi - c);
            data[r * n_bins + k] = up.min(down).max(0.0);
        }
    }
    Matrix { rows, cols: n_bins, data }
}

/// Mel filterbank `n_mels × (fft_size/2+1)` with centers equally spaced on the mel scale.
pub fn mel_filterbank(n_mels: usize, fft_size: usize, fs: f64, fmin: f64, fmax: f64) -> Result<Matrix> {
    check_band(n_mels, fft_size, fs, fmin, fmax)?;
    let (m0, m1) = (hz_to_mel(fmin), hz_to_mel(fmax));
    let edges: Vec<f64> = (0..n_mels + 2)
        .map(|i| mel_to_hz(m0 + (m1 - m0) * i as f64 / (n_mels + 1) as f64))
        .collect();
    Ok(triangles(&edges, fft_size, fs))
}

/// Linear filterbank with centers equally spaced in Hz.
pub fn linear_filterbank(n_filters: usize, fft_size: usize, fs: f64, fmin: f64, fmax: f64) -> Result<Matrix> {
    check_band(n_filters, fft_size, fs, fmin, fmax)?;
    let edges: Vec<f64> = (0..n_filters + 2)
        .map(|i| fmin + (fmax - fmin) * i as f64 / (n_filters + 1) as f64)
        .collect();
    Ok(triangles(&edges, fft_size, fs))
}

/// Center frequency of each filter row.
pub fn filter_centers_hz(n_filters: usize, fmin: f64, fmax: f64, mel: bool) -> Vec<f64> {
    (1..=n_filters)
        .map(|i| {
            let a = i as f64 / (n_filters + 1) as f64;
            if mel {
                let (m0, m1) = (hz_to_mel(fmin), hz_to_mel(fmax));
                mel_to_hz(m0 + (m1 - m0) * a)
            } else {
                fmin + (fmax - fmin) * a
            }
        })
        .collect()
}

/// First `n_coef` rows of the orthonormal DCT-II of size `n`.
pub fn dct_matrix(n_coef: usize, n: usize) -> Result<Matrix> {
    if n_coef == 0 || n_coef > n {
        return Err(Error::Parameter(format!("cannot keep {n_coef} coefficients of {n} inputs")));
    }
    let mut data = vec![0.0; n_coef * n];
    for k in 0..n_coef {
        let scale = if k == 0 { (1.0 / n as f64).sqrt() } else { (2.0 / n as f64).sqrt() };
        for i in 0..n {
            data[k * n + i] = scale * (std::f64::consts::PI / n as f64 * (i as f64 + 0.5) * k as f64).cos();
        }
    }
    Ok(Matrix { rows: n_coef, cols: n, data })
}
