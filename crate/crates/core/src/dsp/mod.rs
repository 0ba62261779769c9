//! Handcrafted spectral front-ends: Mel, MFCC, log spectrogram, LFCC and CQT.
//!
//! Every extractor returns a `D×T` [`FeatureTensor`] (feature axis first).
//! Arithmetic is done in `f64` and stored as `f32`.

mod cqt;
mod fft;
mod filterbank;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::audio::AudioClip;
use crate::error::{Error, Result};
use crate::featureio::FeatureTensor;

pub use cqt::Cqt;
pub use fft::Fft;
pub use filterbank::{
    dct_matrix, filter_centers_hz, hz_to_mel, linear_filterbank, mel_filterbank, mel_to_hz, Matrix,
};

/// Floor added before every logarithm.
pub const LOG_EPS: f64 = 1e-10;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Window {
    /// Periodic Hann, `0.5 - 0.5·cos(2πn/N)`.
    Hann,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrameConfig {
    pub win_len: usize,
    pub hop_len: usize,
    pub fft_size: usize,
    pub window: Window,
}

impl FrameConfig {
    pub fn new(win_len: usize, hop_len: usize, fft_size: usize) -> Result<Self> {
        let cfg = FrameConfig { win_len, hop_len, fft_size, window: Window::Hann };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Window and hop given in milliseconds at `sample_rate`.
    pub fn from_ms(sample_rate: u32, win_ms: f64, hop_ms: f64, fft_size: usize) -> Result<Self> {
        let win = (win_ms * sample_rate as f64 / 1000.0).round() as usize;
        let hop = (hop_ms * sample_rate as f64 / 1000.0).round() as usize;
        Self::new(win, hop, fft_size)
    }

    pub fn validate(&self) -> Result<()> {
        if self.win_len == 0 || self.win_len > self.fft_size {
            return Err(Error::Parameter(format!(
                "window {} must be in 1..={}",
                self.win_len, self.fft_size
            )));
        }
        if self.hop_len == 0 || self.hop_len > self.win_len {
            return Err(Error::Parameter(format!("hop {} must be in 1..={}", self.hop_len, self.win_len)));
        }
        if !self.fft_size.is_power_of_two() {
            return Err(Error::Parameter(format!("fft size {} is not a power of two", self.fft_size)));
        }
        Ok(())
    }

    pub fn n_frames(&self, n_samples: usize) -> Result<usize> {
        if n_samples < self.win_len {
            return Err(Error::TooShort { len: n_samples, needed: self.win_len });
        }
        Ok(1 + (n_samples - self.win_len) / self.hop_len)
    }

    pub fn window_coefficients(&self) -> Vec<f64> {
        match self.window {
            Window::Hann => hann(self.win_len),
        }
    }
}

pub fn hann(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / n as f64).cos())
        .collect()
}

/// `T × win_len` frames; frame `t` starts at sample `t·hop`, no padding.
pub fn frame_signal(clip: &AudioClip, cfg: &FrameConfig) -> Result<Vec<Vec<f32>>> {
    cfg.validate()?;
    let t = cfg.n_frames(clip.len())?;
    Ok((0..t)
        .map(|i| clip.samples[i * cfg.hop_len..i * cfg.hop_len + cfg.win_len].to_vec())
        .collect())
}

/// Power spectra as `T × (fft_size/2+1)` rows in `f64`.
fn stft_rows(clip: &AudioClip, cfg: &FrameConfig, fft: &Fft, window: &[f64]) -> Result<Vec<Vec<f64>>> {
    let t = cfg.n_frames(clip.len())?;
    let bins = cfg.fft_size / 2 + 1;
    let mut frame = vec![0.0; cfg.win_len];
    Ok((0..t)
        .map(|i| {
            let s = &clip.samples[i * cfg.hop_len..i * cfg.hop_len + cfg.win_len];
            for (f, (&x, &w)) in frame.iter_mut().zip(s.iter().zip(window)) {
                *f = x as f64 * w;
            }
            let mut p = vec![0.0; bins];
            fft.power_spectrum(&frame, &mut p);
            p
        })
        .collect())
}

/// Lays `T` rows of width `D` out as a `D×T` tensor.
fn to_feature(name: &str, rows: &[Vec<f64>], frame_rate: f64, f: impl Fn(f64) -> f64) -> Result<FeatureTensor> {
    let t = rows.len();
    let d = rows.first().map_or(0, Vec::len);
    let data = (0..d * t).map(|i| f(rows[i % t][i / t]) as f32).collect();
    FeatureTensor::new(name, vec![d, t], data, frame_rate as f32)
}

fn frame_rate(clip: &AudioClip, hop: usize) -> f64 {
    clip.sample_rate as f64 / hop as f64
}

pub fn power_stft(clip: &AudioClip, cfg: &FrameConfig) -> Result<FeatureTensor> {
    cfg.validate()?;
    let fft = Fft::new(cfg.fft_size)?;
    let rows = stft_rows(clip, cfg, &fft, &cfg.window_coefficients())?;
    to_feature("power", &rows, frame_rate(clip, cfg.hop_len), |v| v)
}

/// Which handcrafted feature to compute.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureKind {
    Mel,
    Mfcc,
    LogSpec,
    Lfcc,
    Cqt,
}

impl FeatureKind {
    pub const ALL: [FeatureKind; 5] =
        [FeatureKind::Mel, FeatureKind::Mfcc, FeatureKind::LogSpec, FeatureKind::Lfcc, FeatureKind::Cqt];

    pub fn name(self) -> &'static str {
        match self {
            FeatureKind::Mel => "mel",
            FeatureKind::Mfcc => "mfcc",
            FeatureKind::LogSpec => "logspec",
            FeatureKind::Lfcc => "lfcc",
            FeatureKind::Cqt => "cqt",
        }
    }
}

impl FromStr for FeatureKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        FeatureKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Usage(format!("unknown feature {s:?} (mel|mfcc|logspec|lfcc|cqt)")))
    }
}

impl fmt::Display for FeatureKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Filterbank, cepstrum and CQT settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FeatureParams {
    pub n_mels: usize,
    pub n_mfcc: usize,
    pub n_lfcc_filters: usize,
    pub n_lfcc: usize,
    pub fmin: f64,
    /// Upper band edge; `None` means the Nyquist frequency.
    pub fmax: Option<f64>,
    pub cqt_fmin: f64,
    pub cqt_bins_per_octave: usize,
    pub cqt_bins: usize,
    pub cqt_hop: usize,
}

impl Default for FeatureParams {
    fn default() -> Self {
        FeatureParams {
            n_mels: 80,
            n_mfcc: 20,
            n_lfcc_filters: 20,
            n_lfcc: 20,
            fmin: 0.0,
            fmax: None,
            cqt_fmin: 32.70,
            cqt_bins_per_octave: 12,
            cqt_bins: 84,
            cqt_hop: 160,
        }
    }
}

#[derive(Clone, Debug)]
enum Plan {
    Stft { fft: Fft, window: Vec<f64>, bank: Option<Matrix>, dct: Option<Matrix> },
    Cqt(Cqt),
}

/// A feature extractor with its transforms precomputed for one sample rate.
/// Shareable across threads.
#[derive(Clone, Debug)]
pub struct Extractor {
    pub kind: FeatureKind,
    pub sample_rate: u32,
    pub frame: FrameConfig,
    plan: Plan,
}

impl Extractor {
    pub fn new(kind: FeatureKind, sample_rate: u32, frame: &FrameConfig, params: &FeatureParams) -> Result<Self> {
        frame.validate()?;
        let fs = sample_rate as f64;
        let fmax = params.fmax.unwrap_or(fs / 2.0);
        let stft = |bank: Option<Matrix>, dct: Option<Matrix>| -> Result<Plan> {
            Ok(Plan::Stft { fft: Fft::new(frame.fft_size)?, window: frame.window_coefficients(), bank, dct })
        };
        let plan = match kind {
            FeatureKind::LogSpec => stft(None, None)?,
            FeatureKind::Mel => stft(Some(mel_filterbank(params.n_mels, frame.fft_size, fs, params.fmin, fmax)?), None)?,
            FeatureKind::Mfcc => stft(
                Some(mel_filterbank(params.n_mels, frame.fft_size, fs, params.fmin, fmax)?),
                Some(dct_matrix(params.n_mfcc, params.n_mels)?),
            )?,
            FeatureKind::Lfcc => stft(
                Some(linear_filterbank(params.n_lfcc_filters, frame.fft_size, fs, params.fmin, fmax)?),
                Some(dct_matrix(params.n_lfcc, params.n_lfcc_filters)?),
            )?,
            FeatureKind::Cqt => Plan::Cqt(Cqt::new(
                fs,
                params.cqt_fmin,
                params.cqt_bins_per_octave,
                params.cqt_bins,
                params.cqt_hop,
            )?),
        };
        Ok(Extractor { kind, sample_rate, frame: *frame, plan })
    }

    pub fn extract(&self, clip: &AudioClip) -> Result<FeatureTensor> {
        if clip.sample_rate != self.sample_rate {
            return Err(Error::Parameter(format!(
                "extractor built for {} Hz, clip is {} Hz",
                self.sample_rate, clip.sample_rate
            )));
        }
        let name = self.kind.name();
        match &self.plan {
            Plan::Stft { fft, window, bank, dct } => {
                let rate = frame_rate(clip, self.frame.hop_len);
                let mut rows = stft_rows(clip, &self.frame, fft, window)?;
                if let Some(bank) = bank {
                    for r in rows.iter_mut() {
                        let mut e = vec![0.0; bank.rows];
                        bank.apply(r, &mut e);
                        e.iter_mut().for_each(|v| *v = (*v + LOG_EPS).ln());
                        *r = e;
                    }
                    if let Some(dct) = dct {
                        for r in rows.iter_mut() {
                            let mut c = vec![0.0; dct.rows];
                            dct.apply(r, &mut c);
                            *r = c;
                        }
                    }
                    to_feature(name, &rows, rate, |v| v)
                } else {
                    to_feature(name, &rows, rate, |v| (v + LOG_EPS).ln())
                }
            }
            Plan::Cqt(cqt) => {
                let x: Vec<f64> = clip.samples.iter().map(|&v| v as f64).collect();
                let p = cqt.power(&x);
                let t = cqt.n_frames(x.len());
                let data = p.iter().map(|&v| (v + LOG_EPS).ln() as f32).collect();
                FeatureTensor::new(name, vec![cqt.n_bins(), t], data, frame_rate(clip, cqt.hop) as f32)
            }
        }
    }
}

pub fn mel_spectrogram(clip: &AudioClip, cfg: &FrameConfig, n_mels: usize) -> Result<FeatureTensor> {
    let p = FeatureParams { n_mels, ..Default::default() };
    Extractor::new(FeatureKind::Mel, clip.sample_rate, cfg, &p)?.extract(clip)
}

pub fn mfcc(clip: &AudioClip, cfg: &FrameConfig, n_mels: usize, n_coef: usize) -> Result<FeatureTensor> {
    let p = FeatureParams { n_mels, n_mfcc: n_coef, ..Default::default() };
    Extractor::new(FeatureKind::Mfcc, clip.sample_rate, cfg, &p)?.extract(clip)
}

pub fn log_spectrogram(clip: &AudioClip, cfg: &FrameConfig) -> Result<FeatureTensor> {
    Extractor::new(FeatureKind::LogSpec, clip.sample_rate, cfg, &FeatureParams::default())?.extract(clip)
}

pub fn lfcc(clip: &AudioClip, cfg: &FrameConfig, n_filters: usize, n_coef: usize) -> Result<FeatureTensor> {
    let p = FeatureParams { n_lfcc_filters: n_filters, n_lfcc: n_coef, ..Default::default() };
    Extractor::new(FeatureKind::Lfcc, clip.sample_rate, cfg, &p)?.extract(clip)
}

pub fn cqt(clip: &AudioClip, fmin: f64, bins_per_octave: usize, n_bins: usize, hop: usize) -> Result<FeatureTensor> {
    let p = FeatureParams {
        cqt_fmin: fmin,
        cqt_bins_per_octave: bins_per_octave,
        cqt_bins: n_bins,
        cqt_hop: hop,
        ..Default::default()
    };
    // the frame config is unused by the CQT plan
    let frame = FrameConfig::new(1, 1, 1)?;
    Extractor::new(FeatureKind::Cqt, clip.sample_rate, &frame, &p)?.extract(clip)
}
