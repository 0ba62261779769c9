//! Shared inputs for the criterion benches.

use addlab::audio::AudioClip;
use addlab::{Label, ScoreSet};

/// Four seconds of a two-tone signal at 16 kHz.
pub fn clip_4s() -> AudioClip {
    let n = 64000;
    let s = (0..n)
        .map(|i| {
            let t = i as f64 / 16000.0;
            (0.4 * (2.0 * std::f64::consts::PI * 440.0 * t).sin() + 0.2 * (2.0 * std::f64::consts::PI * 3100.0 * t).sin()) as f32
        })
        .collect();
    AudioClip::new(s, 16000).expect("valid clip")
}

/// `n` overlapping scores, half of each class, from a fixed LCG.
pub fn scores(n: usize) -> ScoreSet {
    let mut state = 0x2545_f491_4f6c_dd1du64;
    let mut next = || {
        state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        (state >> 11) as f64 / (1u64 << 53) as f64
    };
    let labels: Vec<Label> = (0..n).map(|i| if i % 2 == 0 { Label::Genuine } else { Label::Spoof }).collect();
    let values: Vec<f64> = labels.iter().map(|l| next() + if *l == Label::Genuine { 0.3 } else { 0.0 }).collect();
    ScoreSet::from_pairs(&values, &labels).expect("two classes")
}
