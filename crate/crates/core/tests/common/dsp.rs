//! Slow reference front-ends: naive DFT per frame and filterbanks built
//! straight from their defining formulas.

use std::f64::consts::PI;

pub const EPS: f64 = 1e-10;

pub fn naive_dft(re: &[f64], im: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let n = re.len();
    let mut out_re = vec![0.0; n];
    let mut out_im = vec![0.0; n];
    for k in 0..n {
        for t in 0..n {
            let a = -2.0 * PI * ((k * t) % n) as f64 / n as f64;
            let (s, c) = a.sin_cos();
            out_re[k] += re[t] * c - im[t] * s;
            out_im[k] += re[t] * s + im[t] * c;
        }
    }
    (out_re, out_im)
}

/// `(fft/2+1) × T` power spectrogram, row-major by bin.
pub fn power_spectrogram(x: &[f64], win: usize, hop: usize, fft: usize) -> (Vec<f64>, usize) {
    let frames = 1 + (x.len() - win) / hop;
    let bins = fft / 2 + 1;
    let mut out = vec![0.0; bins * frames];
    for t in 0..frames {
        let frame: Vec<f64> = (0..fft)
            .map(|n| {
                if n < win {
                    let w = 0.5 - 0.5 * (2.0 * PI * n as f64 / win as f64).cos();
                    w * x[t * hop + n]
                } else {
                    0.0
                }
            })
            .collect();
        for k in 0..bins {
            let (mut re, mut im) = (0.0, 0.0);
            for (n, &v) in frame.iter().enumerate() {
                let a = 2.0 * PI * ((k * n) % fft) as f64 / fft as f64;
                re += v * a.cos();
                im -= v * a.sin();
            }
            out[k * frames + t] = re * re + im * im;
        }
    }
    (out, frames)
}

fn mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

fn inv_mel(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

/// Weight of a triangle with corners `lo`, `c`, `hi` at frequency `f`.
fn triangle(f: f64, lo: f64, c: f64, hi: f64) -> f64 {
    if f <= lo || f >= hi {
        0.0
    } else if f <= c {
        (f - lo) / (c - lo)
    } else {
        (hi - f) / (hi - c)
    }
}

pub fn filterbank(n: usize, fft: usize, fs: f64, fmin: f64, fmax: f64, mel_scale: bool) -> Vec<Vec<f64>> {
    let corner = |i: usize| {
        let a = i as f64 / (n + 1) as f64;
        if mel_scale {
            inv_mel(mel(fmin) + a * (mel(fmax) - mel(fmin)))
        } else {
            fmin + a * (fmax - fmin)
        }
    };
    (0..n)
        .map(|r| {
            let (lo, c, hi) = (corner(r), corner(r + 1), corner(r + 2));
            (0..=fft / 2).map(|k| triangle(k as f64 * fs / fft as f64, lo, c, hi)).collect()
        })
        .collect()
}

/// `log(bank · power + eps)`, `rows × T`.
pub fn log_filtered(power: &[f64], frames: usize, bank: &[Vec<f64>]) -> Vec<f64> {
    let mut out = vec![0.0; bank.len() * frames];
    for (r, row) in bank.iter().enumerate() {
        for t in 0..frames {
            let e: f64 = row.iter().enumerate().map(|(k, w)| w * power[k * frames + t]).sum();
            out[r * frames + t] = (e + EPS).ln();
        }
    }
    out
}

/// Orthonormal DCT-II over the row axis of a `rows × T` matrix, first `keep` coefficients.
pub fn dct_rows(x: &[f64], rows: usize, frames: usize, keep: usize) -> Vec<f64> {
    let mut out = vec![0.0; keep * frames];
    for k in 0..keep {
        let s = if k == 0 { (1.0 / rows as f64).sqrt() } else { (2.0 / rows as f64).sqrt() };
        for t in 0..frames {
            out[k * frames + t] =
                s * (0..rows).map(|i| x[i * frames + t] * (PI * k as f64 * (2 * i + 1) as f64 / (2 * rows) as f64).cos()).sum::<f64>();
        }
    }
    out
}

/// Direct constant-Q transform: Hann-windowed complex exponentials of length
/// `ceil(Q·fs/f_k)` centred on each hop, scaled by the window length.
pub fn cqt(x: &[f64], fs: f64, fmin: f64, bpo: usize, n_bins: usize, hop: usize) -> (Vec<f64>, usize) {
    let frames = 1 + (x.len() - 1) / hop;
    let q = 1.0 / (2f64.powf(1.0 / bpo as f64) - 1.0);
    let mut out = vec![0.0; n_bins * frames];
    for k in 0..n_bins {
        let f = fmin * 2f64.powf(k as f64 / bpo as f64);
        let len = (q * fs / f).ceil() as usize;
        for t in 0..frames {
            let (mut re, mut im) = (0.0, 0.0);
            for n in 0..len {
                let i = (t * hop + n) as isize - (len / 2) as isize;
                if i < 0 || i as usize >= x.len() {
                    continue;
                }
                let w = 0.5 * (1.0 - (2.0 * PI * n as f64 / len as f64).cos());
                let phase = 2.0 * PI * f * n as f64 / fs;
                re += w * x[i as usize] * phase.cos();
                im -= w * x[i as usize] * phase.sin();
            }
            let norm = len as f64;
            out[k * frames + t] = ((re * re + im * im) / (norm * norm) + EPS).ln();
        }
    }
    (out, frames)
}

/// `max |a−b| / max(|b|, 1)` over all entries.
pub fn max_rel(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs() / y.abs().max(1.0)).fold(0.0, f64::max)
}
