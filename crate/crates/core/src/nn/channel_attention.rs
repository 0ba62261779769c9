use rand::Rng;

use super::layers::Linear;
use crate::error::{Error, Result};
use crate::params::{Bound, ParamStore};
use crate::tensor::{PoolKind, Real, Tensor, Var};

/// Squeeze-excitation channel attention over `B×C×H×W`.
#[derive(Clone, Debug)]
pub struct ChannelAttention {
    pub squeeze: Linear,
    pub excite: Linear,
    pub channels: usize,
}

impl ChannelAttention {
    pub fn new<T: Real, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        channels: usize,
        reduction: usize,
        rng: &mut R,
    ) -> Result<Self> {
        if reduction == 0 || channels < reduction {
            return Err(Error::Parameter(format!(
                "channel attention needs channels >= reduction, got {channels} < {reduction}"
            )));
        }
        let hidden = channels / reduction;
        Ok(ChannelAttention {
            squeeze: Linear::new(store, &format!("{name}.fc1"), channels, hidden, rng),
            excite: Linear::new(store, &format!("{name}.fc2"), hidden, channels, rng),
            channels,
        })
    }

    /// Returns `(weights B×C, y)` where `y` is `x` scaled per channel.
    pub fn forward<'g, T: Real>(
        &self,
        p: &Bound<'g, T>,
        x: Var<'g, T>,
    ) -> Result<(Var<'g, T>, Var<'g, T>)> {
        let s = x.shape();
        if s.len() != 4 || s[1] != self.channels {
            return Err(Error::Shape(format!("channel attention over {} channels got {s:?}", self.channels)));
        }
        let desc = x.pool2d(PoolKind::GlobalAvg, 0, 0)?;
        let hidden = self.squeeze.forward(p, desc)?.relu();
        let weights = self.excite.forward(p, hidden)?.sigmoid();
        let y = x.mul(weights.reshape(&[s[0], s[1], 1, 1])?)?;
        Ok((weights, y))
    }

    /// Applies fixed per-channel weights instead of the learned ones.
    pub fn forward_fixed<'g, T: Real>(&self, x: Var<'g, T>, weight: T) -> Result<(Var<'g, T>, Var<'g, T>)> {
        let s = x.shape();
        let w = x.graph.constant(Tensor::full(&[s[0], s[1]], weight));
        let y = x.mul(w.reshape(&[s[0], s[1], 1, 1])?)?;
        Ok((w, y))
    }

    pub fn zero_excitation<T: Real>(&self, store: &mut ParamStore<T>) {
        self.squeeze.zero(store);
        self.excite.zero(store);
    }
}
