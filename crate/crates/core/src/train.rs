//! Adam, the training loop and its log.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::featureio::write_atomic;
use crate::incorporation::GateMode;
use crate::model::{Detector, Mode, ModelConfig};
use crate::params::ParamStore;
use crate::tensor::{Graph, Real};

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lr: f64,
    pub weight_decay: f64,
    /// AdamW-style decay applied to the weights instead of the gradient.
    pub decoupled_weight_decay: bool,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// Gumbel-softmax temperature for the selection gates.
    pub tau: f64,
    /// Tail fraction of the training split held out when there is no dev split.
    pub val_fraction: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 1e-4,
            weight_decay: 1e-4,
            decoupled_weight_decay: false,
            epochs: 100,
            batch_size: 32,
            seed: 0,
            tau: 1.0,
            val_fraction: 0.1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::Parameter(format!("lr must be finite and non-negative, got {}", self.lr)));
        }
        if !(self.weight_decay >= 0.0) {
            return Err(Error::Parameter(format!("weight_decay must be non-negative, got {}", self.weight_decay)));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Parameter("epochs and batch_size must be at least 1".into()));
        }
        if !(self.tau > 0.0) {
            return Err(Error::Parameter(format!("tau must be positive, got {}", self.tau)));
        }
        if !(self.val_fraction > 0.0 && self.val_fraction < 1.0) {
            return Err(Error::Parameter(format!("val_fraction must be in (0, 1), got {}", self.val_fraction)));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamHyper {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub decoupled: bool,
}

impl AdamHyper {
    pub fn new(lr: f64, weight_decay: f64) -> Self {
        AdamHyper { lr, beta1: ADAM_BETA1, beta2: ADAM_BETA2, eps: ADAM_EPS, weight_decay, decoupled: false }
    }
}

/// First and second moment estimates of one parameter tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<T> {
    pub m: Vec<T>,
    pub v: Vec<T>,
}

impl<T: Real> AdamState<T> {
    pub fn zeros(n: usize) -> Self {
        AdamState { m: vec![T::zero(); n], v: vec![T::zero(); n] }
    }
}

/// One Adam update at step `t ≥ 1` with bias correction.
pub fn adam_step<T: Real>(param: &mut [T], grad: &[T], state: &mut AdamState<T>, t: u64, h: &AdamHyper) -> Result<()> {
    if param.len() != grad.len() || state.m.len() != param.len() || state.v.len() != param.len() {
        return Err(Error::Usage(format!(
            "adam: {} parameters, {} gradients, {} moments",
            param.len(),
            grad.len(),
            state.m.len()
        )));
    }
    if t == 0 {
        return Err(Error::Usage("adam step counter starts at 1".into()));
    }
    let (b1, b2) = (T::of(h.beta1), T::of(h.beta2));
    let one = T::one();
    let c1 = one - T::of(h.beta1.powi(t as i32));
    let c2 = one - T::of(h.beta2.powi(t as i32));
    let lr = T::of(h.lr);
    let wd = T::of(h.weight_decay);
    let eps = T::of(h.eps);
    for i in 0..param.len() {
        let mut g = grad[i];
        if h.decoupled {
            param[i] -= lr * wd * param[i];
        } else {
            g += wd * param[i];
        }
        state.m[i] = b1 * state.m[i] + (one - b1) * g;
        state.v[i] = b2 * state.v[i] + (one - b2) * g * g;
        let m_hat = state.m[i] / c1;
        let v_hat = state.v[i] / c2;
        param[i] -= lr * m_hat / (v_hat.sqrt() + eps);
    }
    Ok(())
}

/// Adam over every tensor of a [`ParamStore`].
#[derive(Clone, Debug)]
pub struct Adam<T> {
    pub hyper: AdamHyper,
    pub t: u64,
    states: Vec<AdamState<T>>,
}

impl<T: Real> Adam<T> {
    pub fn new(store: &ParamStore<T>, hyper: AdamHyper) -> Self {
        Adam { hyper, t: 0, states: store.iter().map(|p| AdamState::zeros(p.data().len())).collect() }
    }

    pub fn step(&mut self, store: &mut ParamStore<T>, grads: &[Vec<T>]) -> Result<()> {
        if grads.len() != self.states.len() {
            return Err(Error::Usage(format!("{} gradients for {} parameters", grads.len(), self.states.len())));
        }
        self.t += 1;
        for ((p, g), s) in store.params_mut().iter_mut().zip(grads).zip(self.states.iter_mut()) {
            adam_step(p.data_mut(), g, s, self.t, &self.hyper)?;
        }
        Ok(())
    }
}

/// Seed plus stream position of the training RNG.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngState {
    pub seed: u64,
    /// ChaCha word position, decimal.
    pub word_pos: String,
}

impl RngState {
    pub fn capture(seed: u64, rng: &ChaCha8Rng) -> Self {
        RngState { seed, word_pos: rng.get_word_pos().to_string() }
    }

    pub fn restore(&self) -> Result<ChaCha8Rng> {
        let pos: u128 = self
            .word_pos
            .parse()
            .map_err(|_| Error::Validation(format!("bad rng position {:?}", self.word_pos)))?;
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_word_pos(pos);
        Ok(rng)
    }
}

/// Parameters and everything needed to rebuild the model around them.
#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub model: ModelConfig,
    pub train: TrainConfig,
    /// 1-based epoch the parameters come from.
    pub epoch: usize,
    pub val_loss: f64,
    pub rng: RngState,
    pub params: ParamStore<f32>,
}

impl Checkpoint {
    /// Rebuilds the detector and checks the stored parameters fit it.
    pub fn detector(&self) -> Result<Detector> {
        let mut fresh = ParamStore::<f32>::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let det = Detector::new(&self.model, &mut fresh, &mut rng)?;
        if fresh.len() != self.params.len() {
            return Err(Error::Validation(format!(
                "checkpoint holds {} tensors, model needs {}",
                self.params.len(),
                fresh.len()
            )));
        }
        for (a, b) in fresh.iter().zip(self.params.iter()) {
            if a.name != b.name || a.shape != b.shape {
                return Err(Error::Validation(format!(
                    "checkpoint tensor {} {:?} does not match model tensor {} {:?}",
                    b.name, b.shape, a.name, a.shape
                )));
            }
        }
        Ok(det)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    /// Fraction of kept samples per view over the epoch (select mode).
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub keep_rate: Option<Vec<f64>>,
}

/// JSON-lines log: one header object with the resolved configuration, then one record per epoch.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainLog {
    pub header: serde_json::Value,
    pub epochs: Vec<EpochRecord>,
}

impl TrainLog {
    pub fn best(&self) -> Option<&EpochRecord> {
        self.epochs.iter().fold(None, |best: Option<&EpochRecord>, r| match best {
            Some(b) if b.val_loss <= r.val_loss => Some(b),
            _ => Some(r),
        })
    }

    pub fn to_jsonl(&self) -> String {
        let mut s = serde_json::json!({ "header": self.header }).to_string();
        s.push('\n');
        for r in &self.epochs {
            s.push_str(&serde_json::to_string(r).expect("epoch record serializes"));
            s.push('\n');
        }
        s
    }

    pub fn parse_jsonl(text: &str) -> Result<Self> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let first = lines.next().ok_or_else(|| Error::Validation("empty train log".into()))?;
        let head: serde_json::Value =
            serde_json::from_str(first).map_err(|e| Error::Validation(format!("train log header: {e}")))?;
        let header = head
            .get("header")
            .cloned()
            .ok_or_else(|| Error::Validation("train log header object missing".into()))?;
        let epochs = lines
            .map(|l| serde_json::from_str(l).map_err(|e| Error::Validation(format!("train log record: {e}"))))
            .collect::<Result<Vec<_>>>()?;
        Ok(TrainLog { header, epochs })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, self.to_jsonl().as_bytes())
    }
}

pub struct FitOutput {
    pub checkpoint: Checkpoint,
    pub log: TrainLog,
    /// Parameters after the final epoch.
    pub last: ParamStore<f32>,
}

fn check_views(model: &ModelConfig, data: &Dataset, what: &str) -> Result<()> {
    if data.is_empty() {
        return Err(Error::Validation(format!("{what} set is empty")));
    }
    if data.view_names != model.view_names() {
        return Err(Error::Validation(format!(
            "{what} views {:?} differ from model views {:?}",
            data.view_names,
            model.view_names()
        )));
    }
    for ((_, d), spec) in data.view_shapes().iter().zip(&model.views) {
        if *d != spec.dim {
            return Err(Error::Shape(format!("{what} view {} has D={d}, model expects {}", spec.name, spec.dim)));
        }
    }
    Ok(())
}

fn batches(n: usize, size: usize) -> Vec<Vec<usize>> {
    (0..n).collect::<Vec<_>>().chunks(size).map(<[usize]>::to_vec).collect()
}

/// Raw `B×2` logits for samples `idx`, noise-free gates.
pub fn batch_logits(det: &Detector, store: &ParamStore<f32>, data: &Dataset, idx: &[usize]) -> Result<Vec<[f32; 2]>> {
    let (views, _) = data.batch(idx)?;
    let g = Graph::new();
    let p = store.bind(&g);
    let vars: Vec<_> = views.into_iter().map(|v| g.constant(v)).collect();
    let out = det.forward::<f32, ChaCha8Rng>(&p, &vars, GateMode::Argmax)?;
    let l = out.logits.value();
    Ok(l.data().chunks(2).map(|c| [c[0], c[1]]).collect())
}

/// Logits for every sample, computed over batches in parallel.
pub fn dataset_logits(det: &Detector, store: &ParamStore<f32>, data: &Dataset, batch_size: usize) -> Result<Vec<[f32; 2]>> {
    let parts = batches(data.len(), batch_size.max(1))
        .par_iter()
        .map(|idx| batch_logits(det, store, data, idx))
        .collect::<Result<Vec<_>>>()?;
    Ok(parts.into_iter().flatten().collect())
}

/// Mean cross-entropy with noise-free gates. Batches run in parallel, summed in order.
pub fn mean_loss(det: &Detector, store: &ParamStore<f32>, data: &Dataset, batch_size: usize) -> Result<f64> {
    let labels: Vec<usize> = data.labels().iter().map(|l| l.index()).collect();
    let logits = dataset_logits(det, store, data, batch_size)?;
    let total: f64 = logits
        .iter()
        .zip(&labels)
        .map(|(l, &y)| {
            let (a, b) = (l[0] as f64, l[1] as f64);
            let m = a.max(b);
            let lse = m + ((a - m).exp() + (b - m).exp()).ln();
            lse - [a, b][y]
        })
        .sum();
    Ok(total / data.len() as f64)
}

/// Fraction of samples whose argmax logit matches the label.
pub fn accuracy(det: &Detector, store: &ParamStore<f32>, data: &Dataset, batch_size: usize) -> Result<f64> {
    let logits = dataset_logits(det, store, data, batch_size)?;
    let hits = logits
        .iter()
        .zip(data.labels())
        .filter(|(l, y)| usize::from(l[1] > l[0]) == y.index())
        .count();
    Ok(hits as f64 / data.len() as f64)
}

/// Trains a fresh model for `cfg.epochs` epochs and returns the parameters with
/// the lowest validation loss (earliest epoch on ties). Initialization,
/// shuffling and Gumbel noise all draw from one ChaCha8 stream seeded by `cfg.seed`.
pub fn fit(model: &ModelConfig, train: &Dataset, val: &Dataset, cfg: &TrainConfig) -> Result<FitOutput> {
    cfg.validate()?;
    model.validate()?;
    check_views(model, train, "training")?;
    check_views(model, val, "validation")?;

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut store = ParamStore::<f32>::new();
    let det = Detector::new(model, &mut store, &mut rng)?;
    let mut hyper = AdamHyper::new(cfg.lr, cfg.weight_decay);
    hyper.decoupled = cfg.decoupled_weight_decay;
    let mut adam = Adam::new(&store, hyper);
    let n_views = model.views.len();
    let select = model.mode == Mode::Select;

    let header = serde_json::json!({
        "model": det.config,
        "train": cfg,
        "params": store.num_scalars(),
        "n_train": train.len(),
        "n_val": val.len(),
    });
    let mut log = TrainLog { header, epochs: Vec::with_capacity(cfg.epochs) };
    let mut best: Option<(usize, f64, ParamStore<f32>, RngState)> = None;
    let mut order: Vec<usize> = (0..train.len()).collect();

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut kept = vec![0.0f64; n_views];
        for (b, idx) in order.chunks(cfg.batch_size).enumerate() {
            let (views, labels) = train.batch(idx)?;
            let g = Graph::new();
            let p = store.bind(&g);
            let vars: Vec<_> = views.into_iter().map(|v| g.constant(v)).collect();
            let out = det.forward(&p, &vars, GateMode::Sample { tau: cfg.tau, rng: &mut rng })?;
            let loss = out.logits.cross_entropy(&labels)?;
            let lv = loss.item() as f64;
            if !lv.is_finite() {
                return Err(Error::NonFiniteLoss { epoch, batch: b + 1 });
            }
            if let Some(m) = out.masks {
                for row in m.value().data().chunks(n_views) {
                    for (k, &v) in kept.iter_mut().zip(row) {
                        *k += v as f64;
                    }
                }
            }
            let mut grads = g.backward(loss)?;
            let grads = p.collect_grads(&mut grads);
            drop(p);
            adam.step(&mut store, &grads)?;
            loss_sum += lv * idx.len() as f64;
        }
        let val_loss = mean_loss(&det, &store, val, cfg.batch_size)?;
        if !val_loss.is_finite() {
            return Err(Error::NonFiniteLoss { epoch, batch: 0 });
        }
        let train_loss = loss_sum / train.len() as f64;
        let keep_rate = select.then(|| kept.iter().map(|k| k / train.len() as f64).collect());
        log::info!("epoch {epoch}: train {train_loss:.5} val {val_loss:.5}");
        log.epochs.push(EpochRecord { epoch, train_loss, val_loss, keep_rate });
        if best.as_ref().map_or(true, |b| val_loss < b.1) {
            best = Some((epoch, val_loss, store.clone(), RngState::capture(cfg.seed, &rng)));
        }
    }

    let (epoch, val_loss, params, rng_state) = best.expect("at least one epoch");
    Ok(FitOutput {
        checkpoint: Checkpoint { model: det.config.clone(), train: cfg.clone(), epoch, val_loss, rng: rng_state, params },
        log,
        last: store,
    })
}
