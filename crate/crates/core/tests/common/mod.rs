#![allow(dead_code)]

pub mod dsp;
pub mod eer;
pub mod grad;
pub mod gradsuite;

use addlab::synth::{SynthSpec, SynthView};
use addlab::{Label, ScoreSet};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

/// Random two-class score set. Every third set is quantized to force ties.
pub fn random_scores(rng: &mut ChaCha8Rng, case: usize) -> ScoreSet {
    let ng = rng.gen_range(1..160);
    let ns = rng.gen_range(1..160);
    let shift = rng.gen_range(-1.0..3.0);
    let noise = Normal::new(0.0, 1.0).unwrap();
    let mut scores = Vec::with_capacity(ng + ns);
    let mut labels = Vec::with_capacity(ng + ns);
    for i in 0..ng + ns {
        let genuine = i < ng;
        let mut s: f64 = noise.sample(rng) + if genuine { shift } else { 0.0 };
        if case % 3 == 0 {
            s = (s * 4.0).round() / 4.0;
        }
        scores.push(s);
        labels.push(if genuine { Label::Genuine } else { Label::Spoof });
    }
    ScoreSet::from_pairs(&scores, &labels).unwrap()
}

/// Small two-view synthetic problem for quick training runs.
pub fn small_spec(n_train: usize, n_dev: usize, seed: u64) -> SynthSpec {
    SynthSpec {
        views: vec![
            SynthView { name: "a".into(), dim: 6, frames: 18, informativeness: 0.5 },
            SynthView { name: "b".into(), dim: 4, frames: 16, informativeness: 0.5 },
        ],
        n_train,
        n_dev,
        n_eval: 16,
        noise: 1.0,
        signal_scale: 2.0,
        seed,
    }
}
