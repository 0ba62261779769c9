//! Multi-view feature incorporation: time alignment, the plain concat
//! baseline, sample-wise gated selection and attention-based fusion.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{ChannelAttention, Linear, SelectionHead, SelectionHeadConfig, TransformerEncoderLayer};
use crate::params::{Bound, ParamStore};
use crate::tensor::{sample_gumbel, Real, Tensor, Var};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FusionHeadConfig {
    pub proj_dim: usize,
    pub se_reduction: usize,
    pub te_layers: usize,
    pub te_heads: usize,
    pub te_ff_dim: usize,
}

impl Default for FusionHeadConfig {
    fn default() -> Self {
        FusionHeadConfig { proj_dim: 128, se_reduction: 4, te_layers: 2, te_heads: 4, te_ff_dim: 256 }
    }
}

/// Candidate feature views for one batch; view `i` is `B×T_i×D_i`.
#[derive(Clone, Debug)]
pub struct MultiViewBatch<T> {
    pub views: Vec<Tensor<T>>,
    pub names: Vec<String>,
}

impl<T: Real> MultiViewBatch<T> {
    pub fn new(views: Vec<Tensor<T>>, names: Vec<String>) -> Result<Self> {
        if views.is_empty() {
            return Err(Error::Usage("a multi-view batch needs at least one view".into()));
        }
        if names.len() != views.len() {
            return Err(Error::Usage(format!("{} views but {} names", views.len(), names.len())));
        }
        let b = views[0].shape().first().copied().unwrap_or(0);
        for (v, n) in views.iter().zip(&names) {
            if v.shape().len() != 3 || v.shape()[0] != b {
                return Err(Error::Shape(format!("view {n}: expected {b}×T×D, got {:?}", v.shape())));
            }
        }
        Ok(MultiViewBatch { views, names })
    }

    pub fn batch_size(&self) -> usize {
        self.views[0].shape()[0]
    }

    pub fn len(&self) -> usize {
        self.views.len()
    }

    pub fn is_empty(&self) -> bool {
        self.views.is_empty()
    }
}

/// Per-view linear projections to a shared width.
#[derive(Clone, Debug)]
pub struct ViewAligner {
    pub projections: Vec<Linear>,
    pub d_proj: usize,
}

impl ViewAligner {
    pub fn new<T: Real, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        view_dims: &[usize],
        d_proj: usize,
        rng: &mut R,
    ) -> Result<Self> {
        if view_dims.is_empty() {
            return Err(Error::Usage("no views to align".into()));
        }
        let projections = view_dims
            .iter()
            .enumerate()
            .map(|(i, &d)| Linear::new(store, &format!("align.v{i}"), d, d_proj, rng))
            .collect();
        Ok(ViewAligner { projections, d_proj })
    }

    /// Interpolates every view to the smallest frame count, then projects it
    /// to `d_proj`. Returns one `B×T×d_proj` var per view.
    pub fn align<'g, T: Real>(&self, p: &Bound<'g, T>, views: &[Var<'g, T>]) -> Result<Vec<Var<'g, T>>> {
        if views.is_empty() {
            return Err(Error::Usage("no views to align".into()));
        }
        if views.len() != self.projections.len() {
            return Err(Error::Shape(format!(
                "aligner built for {} views, got {}",
                self.projections.len(),
                views.len()
            )));
        }
        let mut frames = usize::MAX;
        for v in views {
            let s = v.shape();
            if s.len() != 3 || s[1] < 2 {
                return Err(Error::Shape(format!("view must be B×T×D with T >= 2, got {s:?}")));
            }
            frames = frames.min(s[1]);
        }
        views
            .iter()
            .zip(&self.projections)
            .map(|(&v, proj)| proj.forward(p, v.interp_time(frames)?))
            .collect()
    }
}

/// Stacks aligned views on a channel axis: `B×N×T×d`.
pub fn concat_views<'g, T: Real>(aligned: &[Var<'g, T>]) -> Result<Var<'g, T>> {
    if aligned.is_empty() {
        return Err(Error::Usage("concat of zero views".into()));
    }
    Var::stack(aligned, 1)
}

/// How the selection gates are decided.
pub enum GateMode<'r, R: Rng + ?Sized> {
    /// Straight-through Gumbel sample at temperature `tau` (training).
    Sample { tau: f64, rng: &'r mut R },
    /// Noise-free argmax of the gate logits (scoring).
    Argmax,
    /// Debug override: fixed binary decision per view for every sample.
    Force(Vec<bool>),
}

/// One selection head per view (or one shared head).
#[derive(Clone, Debug)]
pub struct FeatureSelector {
    pub heads: Vec<SelectionHead>,
    pub n_views: usize,
}

impl FeatureSelector {
    pub fn new<T: Real, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        n_views: usize,
        d_proj: usize,
        cfg: &SelectionHeadConfig,
        rng: &mut R,
    ) -> Result<Self> {
        if n_views == 0 {
            return Err(Error::Usage("selection over zero views".into()));
        }
        let n_heads = if cfg.share_across_views { 1 } else { n_views };
        let heads = (0..n_heads)
            .map(|i| SelectionHead::new(store, &format!("select.h{i}"), d_proj, cfg, rng))
            .collect::<Result<Vec<_>>>()?;
        Ok(FeatureSelector { heads, n_views })
    }

    fn head(&self, view: usize) -> &SelectionHead {
        &self.heads[view.min(self.heads.len() - 1)]
    }

    /// Gates each aligned view with its own binary mask and stacks the
    /// results: returns `(F_select: B×N×T×d, masks: B×N)`.
    pub fn select<'g, T: Real, R: Rng + ?Sized>(
        &self,
        p: &Bound<'g, T>,
        aligned: &[Var<'g, T>],
        mode: GateMode<'_, R>,
    ) -> Result<(Var<'g, T>, Var<'g, T>)> {
        if aligned.is_empty() {
            return Err(Error::Usage("selection over zero views".into()));
        }
        if aligned.len() != self.n_views {
            return Err(Error::Shape(format!("selector built for {} views, got {}", self.n_views, aligned.len())));
        }
        let graph = aligned[0].graph;
        let b = aligned[0].shape()[0];
        let mut mode = mode;
        let mut gated = Vec::with_capacity(aligned.len());
        let mut masks = Vec::with_capacity(aligned.len());
        for (i, &f) in aligned.iter().enumerate() {
            let mask = match &mut mode {
                GateMode::Force(keep) => {
                    let k = *keep
                        .get(i)
                        .ok_or_else(|| Error::Usage(format!("forced gates cover {} views, need {}", keep.len(), aligned.len())))?;
                    graph.constant(Tensor::full(&[b, 1], if k { T::one() } else { T::zero() }))
                }
                GateMode::Sample { tau, rng } => {
                    let logits = self.head(i).forward(p, f)?;
                    let noise = sample_gumbel::<T, R>(&[b, 2], rng);
                    logits.gumbel_softmax_st(&noise, T::of(*tau))?.narrow(1, 0, 1)?
                }
                GateMode::Argmax => {
                    let logits = self.head(i).forward(p, f)?;
                    let zeros = Tensor::zeros(&[b, 2]);
                    logits.gumbel_softmax_st(&zeros, T::one())?.narrow(1, 0, 1)?
                }
            };
            gated.push(f.mul(mask.reshape(&[b, 1, 1])?)?);
            masks.push(mask);
        }
        Ok((concat_views(&gated)?, Var::concat(&masks, 1)?))
    }
}

/// Channel attention across views followed by axial Transformer encoding:
/// first along time (tokens are frames, width `N·d`), then across views
/// (tokens are the per-view chunks of width `d`).
#[derive(Clone, Debug)]
pub struct FusionHead {
    pub channel_attention: ChannelAttention,
    pub time_layers: Vec<TransformerEncoderLayer>,
    pub view_layers: Vec<TransformerEncoderLayer>,
    pub n_views: usize,
    pub d_proj: usize,
}

impl FusionHead {
    pub fn new<T: Real, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        n_views: usize,
        cfg: &FusionHeadConfig,
        rng: &mut R,
    ) -> Result<Self> {
        if n_views == 0 {
            return Err(Error::Usage("fusion over zero views".into()));
        }
        if cfg.te_heads == 0 || cfg.proj_dim % cfg.te_heads != 0 {
            return Err(Error::Parameter(format!(
                "proj_dim {} not divisible by {} heads",
                cfg.proj_dim, cfg.te_heads
            )));
        }
        // one channel per view; fewer views than the reduction ratio clamp the ratio
        let reduction = cfg.se_reduction.clamp(1, n_views);
        let channel_attention = ChannelAttention::new(store, "fuse.ca", n_views, reduction, rng)?;
        let wide = n_views * cfg.proj_dim;
        let time_layers = (0..cfg.te_layers)
            .map(|i| TransformerEncoderLayer::new(store, &format!("fuse.time{i}"), wide, cfg.te_heads, cfg.te_ff_dim, rng))
            .collect::<Result<Vec<_>>>()?;
        let view_layers = (0..cfg.te_layers)
            .map(|i| {
                TransformerEncoderLayer::new(store, &format!("fuse.view{i}"), cfg.proj_dim, cfg.te_heads, cfg.te_ff_dim, rng)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(FusionHead { channel_attention, time_layers, view_layers, n_views, d_proj: cfg.proj_dim })
    }

    /// `aligned` views to `F_fusion: B×T×(N·d)`. `channel_weight` replaces the
    /// learned channel-attention weights with a constant when given.
    pub fn fuse<'g, T: Real>(
        &self,
        p: &Bound<'g, T>,
        aligned: &[Var<'g, T>],
        channel_weight: Option<T>,
    ) -> Result<Var<'g, T>> {
        Ok(self.fuse_with_weights(p, aligned, channel_weight)?.0)
    }

    /// As [`FusionHead::fuse`], also returning the channel weights `B×N`.
    pub fn fuse_with_weights<'g, T: Real>(
        &self,
        p: &Bound<'g, T>,
        aligned: &[Var<'g, T>],
        channel_weight: Option<T>,
    ) -> Result<(Var<'g, T>, Var<'g, T>)> {
        if aligned.len() != self.n_views {
            return Err(Error::Shape(format!("fusion built for {} views, got {}", self.n_views, aligned.len())));
        }
        let stacked = concat_views(aligned)?;
        let s = stacked.shape();
        let (b, n, t, d) = (s[0], s[1], s[2], s[3]);
        if d != self.d_proj {
            return Err(Error::Shape(format!("fusion expects width {}, got {d}", self.d_proj)));
        }
        let (weights, r) = match channel_weight {
            Some(w) => self.channel_attention.forward_fixed(stacked, w)?,
            None => self.channel_attention.forward(p, stacked)?,
        };
        let mut h = r.permute(&[0, 2, 1, 3])?.reshape(&[b, t, n * d])?;
        for layer in &self.time_layers {
            h = layer.forward(p, h)?;
        }
        let mut v = h.reshape(&[b * t, n, d])?;
        for layer in &self.view_layers {
            v = layer.forward(p, v)?;
        }
        Ok((v.reshape(&[b, t, n * d])?, weights))
    }

    /// Unflattens `B×T×(N·d)` back to the `B×N×T×d` channel layout the classifier consumes.
    pub fn to_channels<'g, T: Real>(&self, fused: Var<'g, T>) -> Result<Var<'g, T>> {
        let s = fused.shape();
        fused.reshape(&[s[0], s[1], self.n_views, self.d_proj])?.permute(&[0, 2, 1, 3])
    }

    pub fn zero_encoders<T: Real>(&self, store: &mut ParamStore<T>) {
        for l in self.time_layers.iter().chain(&self.view_layers) {
            l.zero_output_projections(store);
        }
    }
}
