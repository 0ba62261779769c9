use rand::Rng;
use serde::{Deserialize, Serialize};

use super::attention::MultiHeadSelfAttention;
use super::layers::Linear;
use crate::error::{Error, Result};
use crate::params::{Bound, ParamStore};
use crate::tensor::{Real, Tensor, Var};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SelectionHeadConfig {
    pub attn_dim: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    /// Initial logit of the keep class; the drop logit starts at zero.
    pub keep_bias_init: f64,
    /// One head shared by all views instead of one head per view.
    pub share_across_views: bool,
}

impl Default for SelectionHeadConfig {
    fn default() -> Self {
        SelectionHeadConfig { attn_dim: 64, n_layers: 1, n_heads: 2, keep_bias_init: 2.0, share_across_views: false }
    }
}

/// Gate network for one feature view: projection, residual self-attention
/// layers, mean pooling over time, then a `(keep, drop)` logit pair.
#[derive(Clone, Debug)]
pub struct SelectionHead {
    pub proj: Linear,
    pub layers: Vec<MultiHeadSelfAttention>,
    pub out: Linear,
}

impl SelectionHead {
    pub fn new<T: Real, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        d_in: usize,
        cfg: &SelectionHeadConfig,
        rng: &mut R,
    ) -> Result<Self> {
        if cfg.n_heads == 0 || cfg.attn_dim % cfg.n_heads != 0 {
            return Err(Error::Parameter(format!(
                "attn_dim {} not divisible by {} heads",
                cfg.attn_dim, cfg.n_heads
            )));
        }
        let proj = Linear::new(store, &format!("{name}.proj"), d_in, cfg.attn_dim, rng);
        let layers = (0..cfg.n_layers)
            .map(|i| MultiHeadSelfAttention::new(store, &format!("{name}.attn{i}"), cfg.attn_dim, cfg.n_heads, rng))
            .collect::<Result<Vec<_>>>()?;
        let out = Linear::new(store, &format!("{name}.gate"), cfg.attn_dim, 2, rng);
        // gate starts input-independent at (keep_bias_init, 0)
        store.fill(out.w, T::zero());
        store.set(out.b, Tensor::new(&[2], vec![T::of(cfg.keep_bias_init), T::zero()])?)?;
        Ok(SelectionHead { proj, layers, out })
    }

    /// `f: B×T×d_in` to gate logits `B×2` (index 0 = keep).
    pub fn forward<'g, T: Real>(&self, p: &Bound<'g, T>, f: Var<'g, T>) -> Result<Var<'g, T>> {
        let mut h = self.proj.forward(p, f)?;
        for layer in &self.layers {
            h = h.add(layer.forward(p, h)?)?;
        }
        self.out.forward(p, h.mean_axis(1)?)
    }
}
