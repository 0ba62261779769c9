//! Synthetic multi-view two-class data with controllable per-view signal.
//!
//! View `i` of a sample with label sign `y` (+1 genuine, -1 spoof) is
//!
//! ```text
//! X_i = y · a_i · M_i + σ · Z,   a_i = informativeness_i · signal_scale
//! ```
//!
//! where `M_i = u vᵢᵀ` is a unit-Frobenius rank-1 template (constant over
//! time, random ±1 pattern over the feature axis) and `Z` is i.i.d. standard
//! normal. The projection `⟨X_i, M_i⟩` is a sufficient statistic, so the
//! Bayes EER of view `i` alone is `Φ(-a_i/σ)` and of a set of views
//! `Φ(-‖a‖/σ)`.

use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::data::{Dataset, Sample};
use crate::error::{Error, Result};
use crate::eval::{compute_eer, score_dataset};
use crate::featureio::{write_feature_file, DatasetManifest, FeatureTensor, Label, Record, Split};
use crate::incorporation::FusionHeadConfig;
use crate::model::{Mode, ModelConfig, ViewSpec};
use crate::nn::{ResidualCnnConfig, SelectionHeadConfig};
use crate::tensor::Tensor;
use crate::train::{fit, TrainConfig};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthView {
    pub name: String,
    pub dim: usize,
    pub frames: usize,
    pub informativeness: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSpec {
    pub views: Vec<SynthView>,
    pub n_train: usize,
    pub n_dev: usize,
    pub n_eval: usize,
    /// Per-entry noise standard deviation `σ`.
    pub noise: f64,
    /// Class amplitude of a view with informativeness 1.
    pub signal_scale: f64,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        let v = |name: &str, dim, inf| SynthView { name: name.into(), dim, frames: 16, informativeness: inf };
        SynthSpec {
            views: vec![v("v0", 24, 0.5), v("v1", 16, 0.5), v("v2", 20, 0.0)],
            n_train: 2000,
            n_dev: 0,
            n_eval: 500,
            noise: 1.0,
            signal_scale: 2.0,
            seed: 0,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if self.views.is_empty() {
            return Err(Error::Parameter("synthetic spec needs at least one view".into()));
        }
        let mut total = 0.0;
        for v in &self.views {
            if v.dim == 0 || v.frames == 0 {
                return Err(Error::Parameter(format!("view {} has an empty shape", v.name)));
            }
            if !(0.0..=1.0).contains(&v.informativeness) {
                return Err(Error::Parameter(format!(
                    "view {} informativeness {} outside [0, 1]",
                    v.name, v.informativeness
                )));
            }
            total += v.informativeness;
        }
        if total > 1.0 + 1e-12 {
            return Err(Error::Parameter(format!("informativeness sums to {total} > 1")));
        }
        if !(self.noise > 0.0) || !(self.signal_scale >= 0.0) {
            return Err(Error::Parameter("noise must be positive and signal_scale non-negative".into()));
        }
        if self.n_train + self.n_dev + self.n_eval == 0 {
            return Err(Error::Parameter("no samples requested".into()));
        }
        Ok(())
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let s: SynthSpec = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        s.validate()?;
        Ok(s)
    }

    pub fn view_specs(&self) -> Vec<ViewSpec> {
        self.views.iter().map(|v| ViewSpec { name: v.name.clone(), dim: v.dim }).collect()
    }

    /// Class amplitude `a_i` of each view.
    pub fn amplitudes(&self) -> Vec<f64> {
        self.views.iter().map(|v| v.informativeness * self.signal_scale).collect()
    }
}

/// Bayes-optimal EER of a classifier seeing views with class amplitudes `amps` under noise `σ`.
pub fn bayes_eer(amps: &[f64], noise: f64) -> f64 {
    let snr = amps.iter().map(|a| a * a).sum::<f64>().sqrt() / noise;
    0.5 * erfc(snr / std::f64::consts::SQRT_2)
}

/// Unit-Frobenius `T×D` template per view, time-major.
fn templates(spec: &SynthSpec) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    spec.views
        .iter()
        .map(|v| {
            let pattern: Vec<f64> = (0..v.dim).map(|_| if rng.gen::<bool>() { 1.0 } else { -1.0 }).collect();
            let norm = ((v.dim * v.frames) as f64).sqrt();
            (0..v.frames * v.dim).map(|i| pattern[i % v.dim] / norm).collect()
        })
        .collect()
}

/// Split of sample `k` in global order: train, then dev, then eval.
fn split_of(spec: &SynthSpec, k: usize) -> (Split, usize) {
    if k < spec.n_train {
        (Split::Train, k)
    } else if k < spec.n_train + spec.n_dev {
        (Split::Dev, k - spec.n_train)
    } else {
        (Split::Eval, k - spec.n_train - spec.n_dev)
    }
}

/// Labels alternate within each split, so every split is exactly balanced when its size is even.
fn make_sample(spec: &SynthSpec, templates: &[Vec<f64>], k: usize) -> (Split, Sample) {
    let (split, j) = split_of(spec, k);
    let label = if j % 2 == 0 { Label::Genuine } else { Label::Spoof };
    let y = if label == Label::Genuine { 1.0 } else { -1.0 };
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(k as u64 + 1);
    let amps = spec.amplitudes();
    let views = spec
        .views
        .iter()
        .zip(templates)
        .zip(&amps)
        .map(|((v, m), &a)| {
            let data = m
                .iter()
                .map(|&t| {
                    let z: f64 = rng.sample(StandardNormal);
                    (y * a * t + spec.noise * z) as f32
                })
                .collect();
            Tensor::new(&[v.frames, v.dim], data).expect("template shape")
        })
        .collect();
    let id = format!("{}_{:05}", split, j);
    (split, Sample { id, label, views })
}

/// In-memory splits. `dev` is `None` when `n_dev == 0`.
#[derive(Clone, Debug)]
pub struct SynthData {
    pub train: Dataset,
    pub dev: Option<Dataset>,
    pub eval: Dataset,
}

pub fn generate(spec: &SynthSpec) -> Result<SynthData> {
    spec.validate()?;
    let t = templates(spec);
    let total = spec.n_train + spec.n_dev + spec.n_eval;
    let all: Vec<(Split, Sample)> = (0..total).into_par_iter().map(|k| make_sample(spec, &t, k)).collect();
    let names: Vec<String> = spec.views.iter().map(|v| v.name.clone()).collect();
    let mut parts = [Vec::new(), Vec::new(), Vec::new()];
    for (split, s) in all {
        parts[split as usize].push(s);
    }
    let [train, dev, eval] = parts;
    Ok(SynthData {
        train: Dataset::new(names.clone(), train)?,
        dev: if spec.n_dev > 0 { Some(Dataset::new(names.clone(), dev)?) } else { None },
        eval: Dataset::new(names, eval)?,
    })
}

/// Writes `features/<view>/<id>.addf` and `manifest.txt` under `out_dir`.
pub fn generate_to_dir(spec: &SynthSpec, out_dir: &Path) -> Result<PathBuf> {
    let data = generate(spec)?;
    let mut recs: Vec<(Split, &Sample)> = data.train.samples.iter().map(|s| (Split::Train, s)).collect();
    if let Some(dev) = &data.dev {
        recs.extend(dev.samples.iter().map(|s| (Split::Dev, s)));
    }
    recs.extend(data.eval.samples.iter().map(|s| (Split::Eval, s)));
    let records = recs
        .par_iter()
        .map(|(split, s)| {
            let mut features = std::collections::BTreeMap::new();
            for (v, x) in spec.views.iter().zip(&s.views) {
                let rel = PathBuf::from("features").join(&v.name).join(format!("{}.addf", s.id));
                let d_by_t = x.transpose2()?;
                let f = FeatureTensor::new(v.name.clone(), vec![v.dim, v.frames], d_by_t.into_data(), 100.0)?;
                write_feature_file(&f, &out_dir.join(&rel))?;
                features.insert(v.name.clone(), rel);
            }
            Ok(Record { id: s.id.clone(), label: s.label, split: *split, audio: None, features })
        })
        .collect::<Result<Vec<_>>>()?;
    let manifest = DatasetManifest { records, base_dir: out_dir.to_path_buf() };
    let path = out_dir.join("manifest.txt");
    manifest.save(&path)?;
    Ok(path)
}

/// One model family to train in a study.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StudyArm {
    pub label: String,
    pub mode: Mode,
    /// View names fed to the model, in order.
    pub views: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StudyConfig {
    pub spec: SynthSpec,
    pub seeds: Vec<u64>,
    pub train: TrainConfig,
    pub classifier: ResidualCnnConfig,
    pub selection: SelectionHeadConfig,
    pub fusion: FusionHeadConfig,
    pub arms: Vec<StudyArm>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StudyRow {
    pub arm: String,
    pub seed: u64,
    pub eer: f64,
    pub best_epoch: usize,
    /// Last-epoch training keep rate per view (select mode).
    pub keep_rate: Option<Vec<f64>>,
    pub seconds: f64,
}

/// For each seed: regenerate the data (spec seed = study seed), then train and
/// evaluate every arm with that seed. Validation is the tail of the training split.
pub fn run_study(cfg: &StudyConfig) -> Result<Vec<StudyRow>> {
    let mut rows = Vec::new();
    for &seed in &cfg.seeds {
        let spec = SynthSpec { seed, ..cfg.spec.clone() };
        let data = generate(&spec)?;
        let (train_all, val_all) = match &data.dev {
            Some(dev) => (data.train.clone(), dev.clone()),
            None => data.train.split_tail(cfg.train.val_fraction)?,
        };
        for arm in &cfg.arms {
            let start = Instant::now();
            let specs: Vec<ViewSpec> = arm
                .views
                .iter()
                .map(|n| {
                    spec.view_specs()
                        .into_iter()
                        .find(|v| &v.name == n)
                        .ok_or_else(|| Error::Usage(format!("study arm {} names unknown view {n}", arm.label)))
                })
                .collect::<Result<_>>()?;
            let model = ModelConfig {
                mode: arm.mode,
                views: specs,
                classifier: cfg.classifier.clone(),
                selection: cfg.selection.clone(),
                fusion: cfg.fusion.clone(),
            };
            let train = train_all.select_views(&arm.views)?;
            let val = val_all.select_views(&arm.views)?;
            let eval = data.eval.select_views(&arm.views)?;
            let tc = TrainConfig { seed, ..cfg.train.clone() };
            let out = fit(&model, &train, &val, &tc)?;
            let det = out.checkpoint.detector()?;
            let scores = score_dataset(&det, &out.checkpoint.params, &eval, tc.batch_size)?;
            let eer = compute_eer(&scores)?.eer;
            let keep_rate = out.log.epochs.last().and_then(|r| r.keep_rate.clone());
            let seconds = start.elapsed().as_secs_f64();
            log::info!("study seed {seed} arm {}: eer {eer:.4} ({seconds:.1}s)", arm.label);
            rows.push(StudyRow { arm: arm.label.clone(), seed, eer, best_epoch: out.checkpoint.epoch, keep_rate, seconds });
        }
    }
    Ok(rows)
}

/// Mean EER per arm label, in first-appearance order.
pub fn mean_eer_by_arm(rows: &[StudyRow]) -> Vec<(String, f64)> {
    let mut out: Vec<(String, f64, usize)> = Vec::new();
    for r in rows {
        match out.iter_mut().find(|(l, _, _)| *l == r.arm) {
            Some(e) => {
                e.1 += r.eer;
                e.2 += 1;
            }
            None => out.push((r.arm.clone(), r.eer, 1)),
        }
    }
    out.into_iter().map(|(l, s, n)| (l, s / n as f64)).collect()
}
