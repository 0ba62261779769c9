//! Fused ops with hand-written backward rules.

use rand::Rng;

use super::graph::{BackwardCtx, Var};
use super::{shape_err, Real, Tensor};
use crate::error::{Error, Result};

/// `(outer, len, inner)` split of a shape around `axis`.
fn split_axis(shape: &[usize], axis: usize) -> Result<(usize, usize, usize)> {
    if axis >= shape.len() {
        return Err(shape_err(format!("axis {axis} out of range for {shape:?}")));
    }
    Ok((
        shape[..axis].iter().product(),
        shape[axis],
        shape[axis + 1..].iter().product(),
    ))
}

fn softmax_slices<T: Real>(x: &[T], outer: usize, len: usize, inner: usize, scale: T) -> Vec<T> {
    let mut y = vec![T::zero(); x.len()];
    for o in 0..outer {
        for i in 0..inner {
            let at = |l: usize| (o * len + l) * inner + i;
            let mut m = T::neg_infinity();
            for l in 0..len {
                m = m.max(x[at(l)] * scale);
            }
            let mut s = T::zero();
            for l in 0..len {
                let e = (x[at(l)] * scale - m).exp();
                y[at(l)] = e;
                s += e;
            }
            for l in 0..len {
                y[at(l)] /= s;
            }
        }
    }
    y
}

/// Backward of `y = softmax(scale·x)`: `dx = scale · y ⊙ (g − Σ g⊙y)`.
fn softmax_backward<T: Real>(
    y: &[T],
    g: &[T],
    outer: usize,
    len: usize,
    inner: usize,
    scale: T,
) -> Vec<T> {
    let mut dx = vec![T::zero(); y.len()];
    for o in 0..outer {
        for i in 0..inner {
            let at = |l: usize| (o * len + l) * inner + i;
            let dot = (0..len).fold(T::zero(), |a, l| a + g[at(l)] * y[at(l)]);
            for l in 0..len {
                dx[at(l)] = scale * y[at(l)] * (g[at(l)] - dot);
            }
        }
    }
    dx
}

impl<'g, T: Real> Var<'g, T> {
    /// Numerically stable softmax along `axis`.
    pub fn softmax(self, axis: usize) -> Result<Var<'g, T>> {
        let shape = self.shape();
        let (outer, len, inner) = split_axis(&shape, axis)?;
        let y = softmax_slices(&self.raw(), outer, len, inner, T::one());
        Ok(self.graph.record(
            shape,
            y,
            &[self],
            Box::new(move |ctx: &BackwardCtx<'_, T>| {
                vec![Some(softmax_backward(ctx.out, ctx.grad, outer, len, inner, T::one()))]
            }),
        ))
    }

    /// Normalizes each slice along `axis` to zero mean and unit variance
    /// (ε = 1e-5), then applies `gain` and `bias` of length `shape[axis]`.
    pub fn layer_norm(self, gain: Var<'g, T>, bias: Var<'g, T>, axis: usize) -> Result<Var<'g, T>> {
        let shape = self.shape();
        let (outer, len, inner) = split_axis(&shape, axis)?;
        if gain.shape() != [len] || bias.shape() != [len] {
            return Err(shape_err(format!(
                "layer_norm over {len} with gain {:?} bias {:?}",
                gain.shape(),
                bias.shape()
            )));
        }
        let eps = T::of(1e-5);
        let x = self.raw();
        let (gv, bv) = (gain.raw(), bias.raw());
        let n = T::of(len as f64);
        let mut xhat = vec![T::zero(); x.len()];
        let mut rstd = vec![T::zero(); outer * inner];
        let mut y = vec![T::zero(); x.len()];
        for o in 0..outer {
            for i in 0..inner {
                let at = |l: usize| (o * len + l) * inner + i;
                let mean = (0..len).fold(T::zero(), |a, l| a + x[at(l)]) / n;
                let var = (0..len).fold(T::zero(), |a, l| {
                    let d = x[at(l)] - mean;
                    a + d * d
                }) / n;
                let r = T::one() / (var + eps).sqrt();
                rstd[o * inner + i] = r;
                for l in 0..len {
                    let h = (x[at(l)] - mean) * r;
                    xhat[at(l)] = h;
                    y[at(l)] = h * gv[l] + bv[l];
                }
            }
        }
        Ok(self.graph.record(
            shape,
            y,
            &[self, gain, bias],
            Box::new(move |ctx: &BackwardCtx<'_, T>| {
                let (g, gv) = (ctx.grad, ctx.inputs[1]);
                let mut dx = vec![T::zero(); g.len()];
                let mut dgain = vec![T::zero(); len];
                let mut dbias = vec![T::zero(); len];
                for o in 0..outer {
                    for i in 0..inner {
                        let at = |l: usize| (o * len + l) * inner + i;
                        let mut sum_dh = T::zero();
                        let mut sum_dh_h = T::zero();
                        for l in 0..len {
                            let dh = g[at(l)] * gv[l];
                            sum_dh += dh;
                            sum_dh_h += dh * xhat[at(l)];
                            dgain[l] += g[at(l)] * xhat[at(l)];
                            dbias[l] += g[at(l)];
                        }
                        let r = rstd[o * inner + i];
                        for l in 0..len {
                            let dh = g[at(l)] * gv[l];
                            dx[at(l)] = r * (dh - sum_dh / n - xhat[at(l)] * sum_dh_h / n);
                        }
                    }
                }
                vec![Some(dx), Some(dgain), Some(dbias)]
            }),
        ))
    }

    /// Mean negative log-likelihood of `labels` under `softmax(logits)` for `B×C` logits.
    pub fn cross_entropy(self, labels: &[usize]) -> Result<Var<'g, T>> {
        let shape = self.shape();
        if shape.len() != 2 || shape[0] != labels.len() {
            return Err(shape_err(format!(
                "cross_entropy logits {shape:?} with {} labels",
                labels.len()
            )));
        }
        let (b, c) = (shape[0], shape[1]);
        if let Some(&bad) = labels.iter().find(|&&l| l >= c) {
            return Err(Error::Label(format!("{bad} (expected < {c})")));
        }
        let probs = softmax_slices(&self.raw(), b, c, 1, T::one());
        let inv_b = T::one() / T::of(b as f64);
        let x = self.raw();
        let mut loss = T::zero();
        for (r, &l) in labels.iter().enumerate() {
            let row = &x[r * c..(r + 1) * c];
            // ln(1 + sum of the non-max terms) keeps confident rows accurate
            let top = (0..c).fold(0, |a, k| if row[k] > row[a] { k } else { a });
            let m = row[top];
            let rest = (0..c).filter(|&k| k != top).fold(T::zero(), |a, k| a + (row[k] - m).exp());
            loss += (m - row[l]) + rest.ln_1p();
        }
        let labels = labels.to_vec();
        Ok(self.graph.record(
            vec![],
            vec![loss * inv_b],
            &[self],
            Box::new(move |ctx: &BackwardCtx<'_, T>| {
                let g0 = ctx.grad[0] * inv_b;
                let mut d = probs.clone();
                for (r, &l) in labels.iter().enumerate() {
                    d[r * c + l] -= T::one();
                }
                d.iter_mut().for_each(|v| *v *= g0);
                vec![Some(d)]
            }),
        ))
    }

    /// Straight-through Gumbel-softmax along the last axis. The forward value
    /// is the exact one-hot of `argmax(logits + noise)`; the backward pass
    /// uses the Jacobian of `softmax((logits + noise) / tau)`.
    pub fn gumbel_softmax_st(self, noise: &Tensor<T>, tau: T) -> Result<Var<'g, T>> {
        let shape = self.shape();
        if noise.shape() != shape.as_slice() {
            return Err(shape_err(format!("gumbel noise {:?} for logits {shape:?}", noise.shape())));
        }
        if !(tau > T::zero()) {
            return Err(Error::Parameter(format!("temperature must be positive, got {tau}")));
        }
        let k = *shape.last().ok_or_else(|| shape_err("gumbel on a scalar"))?;
        let rows = self.numel() / k.max(1);
        let perturbed: Vec<T> = self.raw().iter().zip(noise.data()).map(|(&l, &n)| l + n).collect();
        let inv_tau = T::one() / tau;
        let soft = softmax_slices(&perturbed, rows, k, 1, inv_tau);
        let mut hard = vec![T::zero(); perturbed.len()];
        for r in 0..rows {
            let row = &perturbed[r * k..(r + 1) * k];
            let mut best = 0;
            for (j, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = j;
                }
            }
            hard[r * k + best] = T::one();
        }
        Ok(self.graph.record(
            shape,
            hard,
            &[self],
            Box::new(move |ctx: &BackwardCtx<'_, T>| {
                vec![Some(softmax_backward(&soft, ctx.grad, rows, k, 1, inv_tau))]
            }),
        ))
    }

    /// Linear interpolation of `B×T×D` along the time axis to `frames` steps,
    /// mapping the first and last frames onto each other.
    pub fn interp_time(self, frames: usize) -> Result<Var<'g, T>> {
        let s = self.shape();
        if s.len() != 3 || s[1] < 1 || frames < 1 {
            return Err(shape_err(format!("interp_time to {frames} on {s:?}")));
        }
        let (b, t_in, d) = (s[0], s[1], s[2]);
        if t_in == frames {
            return self.reshape(&s);
        }
        let taps = interp_taps(t_in, frames);
        let x = self.raw();
        let mut y = vec![T::zero(); b * frames * d];
        for bi in 0..b {
            for (j, &(i0, w1)) in taps.iter().enumerate() {
                let w1 = T::of(w1);
                let w0 = T::one() - w1;
                let i1 = (i0 + 1).min(t_in - 1);
                for c in 0..d {
                    y[(bi * frames + j) * d + c] =
                        w0 * x[(bi * t_in + i0) * d + c] + w1 * x[(bi * t_in + i1) * d + c];
                }
            }
        }
        Ok(self.graph.record(
            vec![b, frames, d],
            y,
            &[self],
            Box::new(move |ctx: &BackwardCtx<'_, T>| {
                let mut gx = vec![T::zero(); b * t_in * d];
                for bi in 0..b {
                    for (j, &(i0, w1)) in taps.iter().enumerate() {
                        let w1 = T::of(w1);
                        let w0 = T::one() - w1;
                        let i1 = (i0 + 1).min(t_in - 1);
                        for c in 0..d {
                            let g = ctx.grad[(bi * frames + j) * d + c];
                            gx[(bi * t_in + i0) * d + c] += w0 * g;
                            gx[(bi * t_in + i1) * d + c] += w1 * g;
                        }
                    }
                }
                vec![Some(gx)]
            }),
        ))
    }
}

/// `(left index, right weight)` per output frame.
fn interp_taps(t_in: usize, t_out: usize) -> Vec<(usize, f64)> {
    (0..t_out)
        .map(|j| {
            if t_out == 1 || t_in == 1 {
                return (0, 0.0);
            }
            let pos = j as f64 * (t_in - 1) as f64 / (t_out - 1) as f64;
            let i0 = (pos.floor() as usize).min(t_in - 1);
            (i0, pos - i0 as f64)
        })
        .collect()
}

/// Draws standard Gumbel(0, 1) noise as `−ln(−ln U)` with `U ∈ (0, 1)`.
pub fn sample_gumbel<T: Real, R: Rng + ?Sized>(shape: &[usize], rng: &mut R) -> Tensor<T> {
    Tensor::from_fn(shape, |_| {
        let u: f64 = loop {
            let u: f64 = rng.gen();
            if u > 0.0 && u < 1.0 {
                break u;
            }
        };
        T::of(-(-u.ln()).ln())
    })
}
