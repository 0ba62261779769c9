use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::params::{Bound, ParamId, ParamStore};
use crate::tensor::{Real, Tensor, Var};

#[derive(Clone, Debug)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
    pub d_in: usize,
    pub d_out: usize,
}

impl Linear {
    /// Weights uniform in `±1/sqrt(d_in)`, zero bias.
    pub fn new<T: Real, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        d_in: usize,
        d_out: usize,
        rng: &mut R,
    ) -> Self {
        let bound = 1.0 / (d_in as f64).sqrt();
        let w = store.uniform(format!("{name}.weight"), &[d_in, d_out], bound, rng);
        let b = store.zeros(format!("{name}.bias"), &[d_out]);
        Linear { w, b, d_in, d_out }
    }

    pub fn forward<'g, T: Real>(&self, p: &Bound<'g, T>, x: Var<'g, T>) -> Result<Var<'g, T>> {
        x.linear(p.var(self.w), Some(p.var(self.b)))
    }

    pub fn zero<T: Real>(&self, store: &mut ParamStore<T>) {
        store.fill(self.w, T::zero());
        store.fill(self.b, T::zero());
    }

    /// Sets the weight to the identity (requires `d_in == d_out`) and the bias to zero.
    pub fn set_identity<T: Real>(&self, store: &mut ParamStore<T>) -> Result<()> {
        store.set(self.w, Tensor::eye(self.d_in))?;
        store.fill(self.b, T::zero());
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct Conv2d {
    pub w: ParamId,
    pub b: ParamId,
    pub stride: usize,
    pub pad: usize,
}

impl Conv2d {
    /// He-uniform weights (`±sqrt(6/fan_in)`), zero bias.
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Real, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        c_in: usize,
        c_out: usize,
        k: usize,
        stride: usize,
        pad: usize,
        rng: &mut R,
    ) -> Self {
        let fan_in = (c_in * k * k) as f64;
        let w = store.uniform(format!("{name}.weight"), &[c_out, c_in, k, k], (6.0 / fan_in).sqrt(), rng);
        let b = store.zeros(format!("{name}.bias"), &[c_out]);
        Conv2d { w, b, stride, pad }
    }

    pub fn forward<'g, T: Real>(&self, p: &Bound<'g, T>, x: Var<'g, T>) -> Result<Var<'g, T>> {
        x.conv2d(p.var(self.w), Some(p.var(self.b)), self.stride, self.pad)
    }

    pub fn zero<T: Real>(&self, store: &mut ParamStore<T>) {
        store.fill(self.w, T::zero());
        store.fill(self.b, T::zero());
    }
}

#[derive(Clone, Debug)]
pub struct LayerNorm {
    pub gain: ParamId,
    pub bias: ParamId,
}

impl LayerNorm {
    pub fn new<T: Real>(store: &mut ParamStore<T>, name: &str, dim: usize) -> Self {
        LayerNorm {
            gain: store.add(format!("{name}.gain"), Tensor::full(&[dim], T::one())),
            bias: store.zeros(format!("{name}.bias"), &[dim]),
        }
    }

    /// Normalizes over the last axis.
    pub fn forward<'g, T: Real>(&self, p: &Bound<'g, T>, x: Var<'g, T>) -> Result<Var<'g, T>> {
        let axis = x.shape().len().saturating_sub(1);
        x.layer_norm(p.var(self.gain), p.var(self.bias), axis)
    }
}

/// Whether a block is being run for optimization or for scoring.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Phase {
    Train,
    Eval,
}
