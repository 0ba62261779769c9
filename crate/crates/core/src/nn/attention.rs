use rand::Rng;

use super::layers::{LayerNorm, Linear};
use crate::error::{Error, Result};
use crate::params::{Bound, ParamStore};
use crate::tensor::{Real, Var};

/// Scaled dot-product self-attention over `B×T×d` with `heads` parallel heads.
/// No masking and no positional information.
#[derive(Clone, Debug)]
pub struct MultiHeadSelfAttention {
    pub query: Linear,
    pub key: Linear,
    pub value: Linear,
    pub out: Linear,
    pub heads: usize,
    pub dim: usize,
}

impl MultiHeadSelfAttention {
    pub fn new<T: Real, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        dim: usize,
        heads: usize,
        rng: &mut R,
    ) -> Result<Self> {
        if heads == 0 || dim % heads != 0 {
            return Err(Error::Parameter(format!("model width {dim} not divisible by {heads} heads")));
        }
        Ok(MultiHeadSelfAttention {
            query: Linear::new(store, &format!("{name}.q"), dim, dim, rng),
            key: Linear::new(store, &format!("{name}.k"), dim, dim, rng),
            value: Linear::new(store, &format!("{name}.v"), dim, dim, rng),
            out: Linear::new(store, &format!("{name}.o"), dim, dim, rng),
            heads,
            dim,
        })
    }

    pub fn forward<'g, T: Real>(&self, p: &Bound<'g, T>, x: Var<'g, T>) -> Result<Var<'g, T>> {
        Ok(self.forward_with_weights(p, x)?.0)
    }

    /// Also returns the attention weights, shaped `B×heads×T×T`.
    pub fn forward_with_weights<'g, T: Real>(
        &self,
        p: &Bound<'g, T>,
        x: Var<'g, T>,
    ) -> Result<(Var<'g, T>, Var<'g, T>)> {
        let s = x.shape();
        if s.len() != 3 || s[2] != self.dim {
            return Err(Error::Shape(format!("attention over width {} got {s:?}", self.dim)));
        }
        let (b, t, h) = (s[0], s[1], self.heads);
        let dh = self.dim / h;
        let split = |v: Var<'g, T>| v.reshape(&[b, t, h, dh])?.permute(&[0, 2, 1, 3]);
        let q = split(self.query.forward(p, x)?)?;
        let k = split(self.key.forward(p, x)?)?;
        let v = split(self.value.forward(p, x)?)?;
        let scores = q.bmm(k.permute(&[0, 1, 3, 2])?)?.scale(T::one() / T::of(dh as f64).sqrt());
        let weights = scores.softmax(3)?;
        let ctx = weights.bmm(v)?.permute(&[0, 2, 1, 3])?.reshape(&[b, t, self.dim])?;
        Ok((self.out.forward(p, ctx)?, weights))
    }
}

/// Pre-norm encoder layer: `x + MHSA(LN(x))`, then `+ FFN(LN(·))` with a ReLU FFN.
#[derive(Clone, Debug)]
pub struct TransformerEncoderLayer {
    pub norm1: LayerNorm,
    pub attn: MultiHeadSelfAttention,
    pub norm2: LayerNorm,
    pub ff1: Linear,
    pub ff2: Linear,
}

impl TransformerEncoderLayer {
    pub fn new<T: Real, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        dim: usize,
        heads: usize,
        ff_dim: usize,
        rng: &mut R,
    ) -> Result<Self> {
        Ok(TransformerEncoderLayer {
            norm1: LayerNorm::new(store, &format!("{name}.ln1"), dim),
            attn: MultiHeadSelfAttention::new(store, &format!("{name}.attn"), dim, heads, rng)?,
            norm2: LayerNorm::new(store, &format!("{name}.ln2"), dim),
            ff1: Linear::new(store, &format!("{name}.ff1"), dim, ff_dim, rng),
            ff2: Linear::new(store, &format!("{name}.ff2"), ff_dim, dim, rng),
        })
    }

    pub fn forward<'g, T: Real>(&self, p: &Bound<'g, T>, x: Var<'g, T>) -> Result<Var<'g, T>> {
        let a = self.attn.forward(p, self.norm1.forward(p, x)?)?;
        let x = x.add(a)?;
        let f = self.ff1.forward(p, self.norm2.forward(p, x)?)?.relu();
        x.add(self.ff2.forward(p, f)?)
    }

    /// Zeroes both residual-branch output projections so the layer is the identity.
    pub fn zero_output_projections<T: Real>(&self, store: &mut ParamStore<T>) {
        self.attn.out.zero(store);
        self.ff2.zero(store);
    }
}
