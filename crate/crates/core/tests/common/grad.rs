//! Central finite-difference gradient checks.
//!
//! A probe maps parameters and inputs to some tensor; the checked scalar is
//! `sum(out ⊙ R)` with a fixed random `R`, so every output coordinate
//! contributes. The 64-bit analytic gradient and the 32-bit analytic gradient
//! are both compared against 64-bit central differences.

use addlab::params::{Bound, ParamStore};
use addlab::{Graph, Real, Result, Tensor, Var};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub trait Probe {
    fn forward<'g, T: Real>(&self, p: &Bound<'g, T>, xs: &[Var<'g, T>]) -> Result<Var<'g, T>>;
}

/// Builds a unit struct probe from a body using `p` and `xs`.
#[macro_export]
macro_rules! probe {
    ($name:ident, |$p:ident, $xs:ident| $body:expr) => {
        struct $name;
        impl $crate::common::grad::Probe for $name {
            #[allow(unused_variables)]
            fn forward<'g, T: addlab::Real>(
                &self,
                $p: &addlab::params::Bound<'g, T>,
                $xs: &[addlab::Var<'g, T>],
            ) -> addlab::Result<addlab::Var<'g, T>> {
                $body
            }
        }
    };
}

pub const STEP: f64 = 1e-6;
/// Coordinates sampled per tensor; smaller tensors are checked in full.
pub const COORDS_PER_TENSOR: usize = 12;

#[derive(Clone, Copy, Debug)]
pub struct GradReport {
    pub rel64: f64,
    pub rel32: f64,
    pub coords: usize,
}

impl GradReport {
    pub fn worst(reports: &[GradReport]) -> GradReport {
        reports.iter().fold(GradReport { rel64: 0.0, rel32: 0.0, coords: 0 }, |a, r| GradReport {
            rel64: a.rel64.max(r.rel64),
            rel32: a.rel32.max(r.rel32),
            coords: a.coords + r.coords,
        })
    }

    pub fn passes(&self) -> bool {
        self.rel64 < 1e-6 && self.rel32 < 1e-4
    }
}

fn projected<'g, T: Real, P: Probe>(
    probe: &P,
    graph: &'g Graph<T>,
    store: &ParamStore<T>,
    inputs: &[Tensor<T>],
    weights: Option<&Tensor<T>>,
    track: bool,
) -> Result<(Var<'g, T>, Bound<'g, T>, Vec<Var<'g, T>>)> {
    let bound = store.bind(graph);
    let xs: Vec<Var<'g, T>> = inputs.iter().map(|t| graph.leaf(t.clone(), track)).collect();
    let out = probe.forward(&bound, &xs)?;
    let loss = match weights {
        Some(w) => out.mul(graph.constant(w.clone()))?.sum(),
        None => out,
    };
    Ok((loss, bound, xs))
}

fn analytic<T: Real, P: Probe>(
    probe: &P,
    store: &ParamStore<T>,
    inputs: &[Tensor<T>],
    weights: &Tensor<T>,
) -> Result<Vec<Vec<f64>>> {
    let graph = Graph::new();
    let (loss, bound, xs) = projected(probe, &graph, store, inputs, Some(weights), true)?;
    let mut grads = graph.backward(loss)?;
    let mut out: Vec<Vec<f64>> = bound
        .collect_grads(&mut grads)
        .into_iter()
        .map(|g| g.iter().map(|v| v.to_f64().unwrap()).collect())
        .collect();
    for (x, t) in xs.iter().zip(inputs) {
        let g = grads.wrt(*x).map(|g| g.to_vec()).unwrap_or_else(|| vec![T::zero(); t.numel()]);
        out.push(g.iter().map(|v| v.to_f64().unwrap()).collect());
    }
    Ok(out)
}

fn loss64<P: Probe>(probe: &P, store: &ParamStore<f64>, inputs: &[Tensor<f64>], w: &Tensor<f64>) -> Result<f64> {
    let graph = Graph::new();
    Ok(projected(probe, &graph, store, inputs, Some(w), false)?.0.item())
}

/// Checks the probe's gradient with respect to every parameter in `store`
/// and every input tensor.
pub fn grad_check<P: Probe>(probe: &P, store: &ParamStore<f64>, inputs: &[Tensor<f64>], seed: u64) -> Result<GradReport> {
    grad_check_against(probe, probe, store, inputs, seed)
}

/// Analytic gradients of `probe` against finite differences of `reference`.
/// The two must agree in value at the unperturbed point.
pub fn grad_check_against<P: Probe, Q: Probe>(
    probe: &P,
    reference: &Q,
    store: &ParamStore<f64>,
    inputs: &[Tensor<f64>],
    seed: u64,
) -> Result<GradReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shape = {
        let graph = Graph::new();
        projected(probe, &graph, store, inputs, None, false)?.0.shape()
    };
    let w = Tensor::from_fn(&shape, |_| StandardNormal.sample(&mut rng));
    let a64 = analytic(probe, store, inputs, &w)?;
    let store32 = store.cast::<f32>();
    let inputs32: Vec<Tensor<f32>> = inputs.iter().map(|t| t.cast()).collect();
    let a32 = analytic(probe, &store32, &inputs32, &w.cast())?;

    let n_params = store.len();
    let ids: Vec<_> = store.ids().collect();
    let (mut max_num, mut err64, mut err32, mut coords) = (0f64, 0f64, 0f64, 0usize);
    for k in 0..a64.len() {
        let len = a64[k].len();
        let picks: Vec<usize> = if len <= COORDS_PER_TENSOR {
            (0..len).collect()
        } else {
            sample(&mut rng, len, COORDS_PER_TENSOR).into_vec()
        };
        for i in picks {
            let eval = |delta: f64| -> Result<f64> {
                if k < n_params {
                    let mut s = store.clone();
                    s.get_mut(ids[k]).data_mut()[i] += delta;
                    loss64(reference, &s, inputs, &w)
                } else {
                    let mut xs = inputs.to_vec();
                    xs[k - n_params].data_mut()[i] += delta;
                    loss64(reference, store, &xs, &w)
                }
            };
            let num = (eval(STEP)? - eval(-STEP)?) / (2.0 * STEP);
            max_num = max_num.max(num.abs());
            err64 = err64.max((a64[k][i] - num).abs());
            err32 = err32.max((a32[k][i] - num).abs());
            coords += 1;
        }
    }
    let scale = max_num.max(f64::MIN_POSITIVE);
    Ok(GradReport { rel64: err64 / scale, rel32: err32 / scale, coords })
}

/// Overwrites every parameter with `N(0, std²)` draws so that no gradient
/// path is switched off by a zero initialization.
pub fn randomize(store: &mut ParamStore<f64>, std: f64, rng: &mut ChaCha8Rng) {
    for p in store.params_mut() {
        for v in p.data_mut().iter_mut() {
            *v = std * { let z: f64 = StandardNormal.sample(rng); z };
        }
    }
}

pub fn normal_tensor(shape: &[usize], std: f64, rng: &mut ChaCha8Rng) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| std * { let z: f64 = StandardNormal.sample(rng); z })
}

/// Normal values pushed at least `gap` away from zero, for inputs to kinked ops.
pub fn off_zero_tensor(shape: &[usize], gap: f64, rng: &mut ChaCha8Rng) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| {
        let v: f64 = StandardNormal.sample(rng);
        v.signum() * (gap + v.abs())
    })
}

pub fn positive_tensor(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| {
        let v: f64 = StandardNormal.sample(rng);
        0.2 + v.abs()
    })
}
