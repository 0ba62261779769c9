//! WAV decoding, band-limited resampling and duration normalization.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Mono waveform with amplitudes nominally in `[-1, 1]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AudioClip {
    pub samples: Vec<f32>,
    pub sample_rate: u32,
}

impl AudioClip {
    pub fn new(samples: Vec<f32>, sample_rate: u32) -> Result<Self> {
        if sample_rate == 0 {
            return Err(Error::Parameter("sample rate must be positive".into()));
        }
        if let Some(i) = samples.iter().position(|s| !s.is_finite()) {
            return Err(Error::Validation(format!("non-finite sample at index {i}")));
        }
        Ok(AudioClip { samples, sample_rate })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_secs(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }
}

fn wav_err(chunk: &str, reason: impl Into<String>) -> Error {
    Error::WavDecode { chunk: chunk.into(), reason: reason.into() }
}

/// Decodes a RIFF/WAVE image holding PCM16 or IEEE float32 samples
/// (1 or 2 channels). Stereo is averaged to mono.
pub fn decode_wav(bytes: &[u8]) -> Result<AudioClip> {
    if bytes.len() < 12 {
        return Err(wav_err("RIFF", "file shorter than the RIFF header"));
    }
    if &bytes[0..4] != b"RIFF" {
        return Err(wav_err("RIFF", "missing RIFF tag"));
    }
    if &bytes[8..12] != b"WAVE" {
        return Err(wav_err("RIFF", "form type is not WAVE"));
    }
    let mut pos = 12;
    let mut fmt: Option<(u16, u16, u32, u16)> = None;
    let mut data: Option<&[u8]> = None;
    while pos + 8 <= bytes.len() {
        let id = &bytes[pos..pos + 4];
        let size = u32::from_le_bytes(bytes[pos + 4..pos + 8].try_into().unwrap()) as usize;
        let name = String::from_utf8_lossy(id).into_owned();
        let body_start = pos + 8;
        let body_end = body_start
            .checked_add(size)
            .filter(|&e| e <= bytes.len())
            .ok_or_else(|| wav_err(&name, format!("declares {size} bytes but only {} remain", bytes.len() - body_start)))?;
        let body = &bytes[body_start..body_end];
        match id {
            b"fmt " => {
                if body.len() < 16 {
                    return Err(wav_err("fmt ", format!("chunk is {} bytes, need 16", body.len())));
                }
                let le16 = |o: usize| u16::from_le_bytes(body[o..o + 2].try_into().unwrap());
                let mut format = le16(0);
                let channels = le16(2);
                let rate = u32::from_le_bytes(body[4..8].try_into().unwrap());
                let bits = le16(14);
                // WAVE_FORMAT_EXTENSIBLE carries the real format in the sub-format GUID
                if format == 0xFFFE && body.len() >= 26 {
                    format = le16(24);
                }
                fmt = Some((format, channels, rate, bits));
            }
            b"data" => data = Some(body),
            _ => {}
        }
        pos = body_end + (size & 1);
    }
    let (format, channels, rate, bits) = fmt.ok_or_else(|| wav_err("fmt ", "chunk missing"))?;
    let data = data.ok_or_else(|| wav_err("data", "chunk missing"))?;
    if channels == 0 || channels > 2 {
        return Err(Error::UnsupportedFormat(format!("{channels} channels (only mono and stereo)")));
    }
    if rate == 0 {
        return Err(wav_err("fmt ", "sample rate is zero"));
    }
    let raw: Vec<f32> = match (format, bits) {
        (1, 16) => data
            .chunks_exact(2)
            .map(|b| i16::from_le_bytes([b[0], b[1]]) as f32 / 32768.0)
            .collect(),
        (3, 32) => data.chunks_exact(4).map(|b| f32::from_le_bytes(b.try_into().unwrap())).collect(),
        _ => {
            return Err(Error::UnsupportedFormat(format!(
                "format tag {format} with {bits} bits per sample (need PCM16 or float32)"
            )))
        }
    };
    let samples = if channels == 2 {
        raw.chunks_exact(2).map(|f| (f[0] + f[1]) * 0.5).collect()
    } else {
        raw
    };
    AudioClip::new(samples, rate)
}

/// Encodes 16-bit PCM (`channels` interleaved) with round-to-nearest and clipping.
pub fn encode_wav_pcm16(samples: &[f32], sample_rate: u32, channels: u16) -> Vec<u8> {
    let data_len = samples.len() * 2;
    let mut out = Vec::with_capacity(44 + data_len);
    out.extend_from_slice(b"RIFF");
    out.extend_from_slice(&((36 + data_len) as u32).to_le_bytes());
    out.extend_from_slice(b"WAVEfmt ");
    out.extend_from_slice(&16u32.to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes());
    out.extend_from_slice(&channels.to_le_bytes());
    out.extend_from_slice(&sample_rate.to_le_bytes());
    out.extend_from_slice(&(sample_rate * channels as u32 * 2).to_le_bytes());
    out.extend_from_slice(&(channels * 2).to_le_bytes());
    out.extend_from_slice(&16u16.to_le_bytes());
    out.extend_from_slice(b"data");
    out.extend_from_slice(&(data_len as u32).to_le_bytes());
    for &s in samples {
        let q = (s as f64 * 32768.0).round().clamp(-32768.0, 32767.0) as i16;
        out.extend_from_slice(&q.to_le_bytes());
    }
    out
}

/// Encodes IEEE float32 samples.
pub fn encode_wav_f32(samples: &[f32], sample_rate: u32, channels: u16) -> Vec<u8> {
    let data_len = samples.len() * 4;
    let mut out = Vec::with_capacity(44 + data_len);
    out.extend_from_slice(b"RIFF");
    out.extend_from_slice(&((36 + data_len) as u32).to_le_bytes());
    out.extend_from_slice(b"WAVEfmt ");
    out.extend_from_slice(&16u32.to_le_bytes());
    out.extend_from_slice(&3u16.to_le_bytes());
    out.extend_from_slice(&channels.to_le_bytes());
    out.extend_from_slice(&sample_rate.to_le_bytes());
    out.extend_from_slice(&(sample_rate * channels as u32 * 4).to_le_bytes());
    out.extend_from_slice(&(channels * 4).to_le_bytes());
    out.extend_from_slice(&32u16.to_le_bytes());
    out.extend_from_slice(b"data");
    out.extend_from_slice(&(data_len as u32).to_le_bytes());
    for &s in samples {
        out.extend_from_slice(&s.to_le_bytes());
    }
    out
}

pub const KAISER_BETA: f64 = 8.6;
/// Taps per polyphase branch at unit ratio (sixteen zero crossings each side).
pub const TAPS_PER_PHASE: usize = 32;
/// Above this many phases the kernel is evaluated per output sample instead of tabulated.
const MAX_TABLE_PHASES: usize = 1024;

fn gcd(a: u64, b: u64) -> u64 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// Zeroth-order modified Bessel function of the first kind (power series).
fn bessel_i0(x: f64) -> f64 {
    let mut sum = 1.0;
    let mut term = 1.0;
    let q = x * x / 4.0;
    for k in 1..64 {
        term *= q / (k * k) as f64;
        sum += term;
        if term < sum * 1e-17 {
            break;
        }
    }
    sum
}

fn sinc(x: f64) -> f64 {
    if x == 0.0 {
        1.0
    } else {
        let px = std::f64::consts::PI * x;
        px.sin() / px
    }
}

/// Polyphase windowed-sinc resampler.
///
/// Output sample `j` sits at input position `j·src/dst`. The kernel is a
/// Kaiser-windowed sinc (β = 8.6) whose cutoff is the lower of the two
/// Nyquist rates; it spans sixteen zero crossings of that sinc on each side,
/// which is 32 taps per phase when upsampling and proportionally more when
/// decimating. Each phase is normalized to unit DC gain. Samples outside the
/// input are zero.
#[derive(Clone, Debug)]
pub struct Resampler {
    up: usize,
    down: usize,
    cutoff: f64,
    half_width: f64,
    taps: usize,
    table: Option<Vec<Vec<f64>>>,
}

impl Resampler {
    pub fn new(source_rate: u32, target_rate: u32) -> Result<Self> {
        if source_rate == 0 || target_rate == 0 {
            return Err(Error::Parameter("sample rates must be positive".into()));
        }
        let g = gcd(source_rate as u64, target_rate as u64);
        let up = (target_rate as u64 / g) as usize;
        let down = (source_rate as u64 / g) as usize;
        let cutoff = (up as f64 / down as f64).min(1.0);
        let half_width = (TAPS_PER_PHASE / 2) as f64 / cutoff;
        let taps = 2 * half_width.ceil() as usize;
        let mut r = Resampler { up, down, cutoff, half_width, taps, table: None };
        if up <= MAX_TABLE_PHASES {
            r.table = Some((0..up).map(|ph| r.phase_kernel(ph as f64 / up as f64)).collect());
        }
        Ok(r)
    }

    /// Taps for an output sample at fractional input offset `frac ∈ [0, 1)`;
    /// tap `k` multiplies input `floor(pos) - taps/2 + 1 + k`.
    fn phase_kernel(&self, frac: f64) -> Vec<f64> {
        let first = 1 - (self.taps / 2) as isize;
        let norm = bessel_i0(KAISER_BETA);
        let mut h: Vec<f64> = (0..self.taps)
            .map(|k| {
                let d = (first + k as isize) as f64 - frac;
                let r = d / self.half_width;
                if r.abs() > 1.0 {
                    return 0.0;
                }
                let w = bessel_i0(KAISER_BETA * (1.0 - r * r).sqrt()) / norm;
                self.cutoff * sinc(self.cutoff * d) * w
            })
            .collect();
        let s: f64 = h.iter().sum();
        h.iter_mut().for_each(|v| *v /= s);
        h
    }

    pub fn output_len(&self, input_len: usize) -> usize {
        ((input_len as u128 * self.up as u128 + self.down as u128 / 2) / self.down as u128) as usize
    }

    pub fn process(&self, input: &[f32]) -> Vec<f32> {
        let out_len = self.output_len(input.len());
        let first = 1 - (self.taps / 2) as isize;
        (0..out_len)
            .map(|j| {
                let num = j as u128 * self.down as u128;
                let base = (num / self.up as u128) as isize;
                let phase = (num % self.up as u128) as usize;
                let owned;
                let h: &[f64] = match &self.table {
                    Some(t) => &t[phase],
                    None => {
                        owned = self.phase_kernel(phase as f64 / self.up as f64);
                        &owned
                    }
                };
                let mut acc = 0.0f64;
                for (k, &c) in h.iter().enumerate() {
                    let i = base + first + k as isize;
                    if i >= 0 && (i as usize) < input.len() {
                        acc += c * input[i as usize] as f64;
                    }
                }
                acc as f32
            })
            .collect()
    }
}

pub fn resample(clip: &AudioClip, target_rate: u32) -> Result<AudioClip> {
    if target_rate == 0 {
        return Err(Error::Parameter("target rate must be positive".into()));
    }
    if target_rate == clip.sample_rate {
        return Ok(clip.clone());
    }
    let r = Resampler::new(clip.sample_rate, target_rate)?;
    Ok(AudioClip { samples: r.process(&clip.samples), sample_rate: target_rate })
}

/// Trims to the first `seconds` or cyclically repeats a short clip up to that length.
pub fn fix_duration(clip: &AudioClip, seconds: f64) -> Result<AudioClip> {
    if !(seconds > 0.0) {
        return Err(Error::Parameter(format!("duration must be positive, got {seconds}")));
    }
    if clip.is_empty() {
        return Err(Error::EmptyInput("cannot pad an empty clip".into()));
    }
    let target = (seconds * clip.sample_rate as f64).round() as usize;
    let samples = clip.samples.iter().copied().cycle().take(target).collect();
    Ok(AudioClip { samples, sample_rate: clip.sample_rate })
}
