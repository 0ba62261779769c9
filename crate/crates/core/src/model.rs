//! A complete detector: view alignment, an optional incorporation head and the classifier.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::incorporation::{concat_views, FeatureSelector, FusionHead, FusionHeadConfig, GateMode, ViewAligner};
use crate::nn::{ResidualCnn, ResidualCnnConfig, SelectionHeadConfig};
use crate::params::{Bound, ParamStore};
use crate::tensor::{Real, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// One view straight into the classifier.
    Single,
    /// All views stacked as channels, no gating.
    Concat,
    /// Sample-wise binary gate per view.
    Select,
    /// Channel attention + axial Transformer fusion.
    Fuse,
}

impl std::str::FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "single" => Ok(Mode::Single),
            "concat" => Ok(Mode::Concat),
            "select" => Ok(Mode::Select),
            "fuse" => Ok(Mode::Fuse),
            other => Err(Error::Usage(format!("unknown mode {other:?} (single|concat|select|fuse)"))),
        }
    }
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Mode::Single => "single",
            Mode::Concat => "concat",
            Mode::Select => "select",
            Mode::Fuse => "fuse",
        };
        f.write_str(s)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ViewSpec {
    pub name: String,
    /// Feature width `D_i`.
    pub dim: usize,
}

/// Architecture of a detector. `classifier.in_channels` is derived from the view count.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub mode: Mode,
    pub views: Vec<ViewSpec>,
    pub classifier: ResidualCnnConfig,
    pub selection: SelectionHeadConfig,
    pub fusion: FusionHeadConfig,
}

impl ModelConfig {
    pub fn d_proj(&self) -> usize {
        self.fusion.proj_dim
    }

    pub fn view_names(&self) -> Vec<String> {
        self.views.iter().map(|v| v.name.clone()).collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.views.is_empty() {
            return Err(Error::Usage("model needs at least one view".into()));
        }
        if self.mode == Mode::Single && self.views.len() != 1 {
            return Err(Error::Usage(format!("single mode takes one view, got {}", self.views.len())));
        }
        let mut names = self.view_names();
        names.sort();
        names.dedup();
        if names.len() != self.views.len() {
            return Err(Error::Usage("view names must be unique".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
enum Head {
    None,
    Select(FeatureSelector),
    Fuse(FusionHead),
}

/// Output of one forward pass.
pub struct DetectorOutput<'g, T: Real> {
    pub logits: Var<'g, T>,
    /// Binary gates `B×N` in select mode.
    pub masks: Option<Var<'g, T>>,
}

/// Parameter layout plus block structure. Parameters live in a separate [`ParamStore`].
#[derive(Clone, Debug)]
pub struct Detector {
    pub config: ModelConfig,
    pub aligner: ViewAligner,
    head: Head,
    pub classifier: ResidualCnn,
}

impl Detector {
    /// Builds the blocks and registers freshly initialized parameters in `store`.
    pub fn new<T: Real, R: Rng + ?Sized>(config: &ModelConfig, store: &mut ParamStore<T>, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let n = config.views.len();
        let dims: Vec<usize> = config.views.iter().map(|v| v.dim).collect();
        let aligner = ViewAligner::new(store, &dims, config.d_proj(), rng)?;
        let head = match config.mode {
            Mode::Single | Mode::Concat => Head::None,
            Mode::Select => Head::Select(FeatureSelector::new(store, n, config.d_proj(), &config.selection, rng)?),
            Mode::Fuse => Head::Fuse(FusionHead::new(store, n, &config.fusion, rng)?),
        };
        let mut cls = config.classifier.clone();
        cls.in_channels = n;
        let classifier = ResidualCnn::new(store, "cls", &cls, rng)?;
        let mut config = config.clone();
        config.classifier = cls;
        Ok(Detector { config, aligner, head, classifier })
    }

    pub fn selector(&self) -> Option<&FeatureSelector> {
        match &self.head {
            Head::Select(s) => Some(s),
            _ => None,
        }
    }

    pub fn fusion(&self) -> Option<&FusionHead> {
        match &self.head {
            Head::Fuse(f) => Some(f),
            _ => None,
        }
    }

    /// `views[i]` is `B×T_i×D_i`. `gates` only matters in select mode.
    pub fn forward<'g, T: Real, R: Rng + ?Sized>(
        &self,
        p: &Bound<'g, T>,
        views: &[Var<'g, T>],
        gates: GateMode<'_, R>,
    ) -> Result<DetectorOutput<'g, T>> {
        self.forward_with(p, views, gates, None)
    }

    /// As [`Detector::forward`], with an optional constant replacing the fusion
    /// head's channel-attention weights.
    pub fn forward_with<'g, T: Real, R: Rng + ?Sized>(
        &self,
        p: &Bound<'g, T>,
        views: &[Var<'g, T>],
        gates: GateMode<'_, R>,
        channel_weight: Option<T>,
    ) -> Result<DetectorOutput<'g, T>> {
        if views.len() != self.config.views.len() {
            return Err(Error::Shape(format!(
                "model expects {} views, got {}",
                self.config.views.len(),
                views.len()
            )));
        }
        for (v, spec) in views.iter().zip(&self.config.views) {
            let s = v.shape();
            if s.len() != 3 || s[2] != spec.dim {
                return Err(Error::Shape(format!(
                    "view {} expects B×T×{}, got {s:?}",
                    spec.name, spec.dim
                )));
            }
        }
        let aligned = self.aligner.align(p, views)?;
        let (input, masks) = match &self.head {
            Head::None => (concat_views(&aligned)?, None),
            Head::Select(sel) => {
                let (x, m) = sel.select(p, &aligned, gates)?;
                (x, Some(m))
            }
            Head::Fuse(fuse) => {
                let fused = fuse.fuse(p, &aligned, channel_weight)?;
                (fuse.to_channels(fused)?, None)
            }
        };
        let logits = self.classifier.forward(p, input)?;
        Ok(DetectorOutput { logits, masks })
    }
}
