use rand::Rng;
use serde::{Deserialize, Serialize};

use super::layers::{Conv2d, Linear};
use crate::error::{Error, Result};
use crate::params::{Bound, ParamStore};
use crate::tensor::{PoolKind, Real, Var};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ResidualCnnConfig {
    /// Basic blocks per stage; `[2, 2, 2, 2]` is the ResNet18 layout.
    pub stage_blocks: Vec<usize>,
    pub base_channels: usize,
    pub num_classes: usize,
    pub in_channels: usize,
}

impl Default for ResidualCnnConfig {
    fn default() -> Self {
        Self::resnet18(1)
    }
}

impl ResidualCnnConfig {
    pub fn resnet18(in_channels: usize) -> Self {
        ResidualCnnConfig { stage_blocks: vec![2, 2, 2, 2], base_channels: 64, num_classes: 2, in_channels }
    }

    pub fn toy(in_channels: usize) -> Self {
        ResidualCnnConfig { stage_blocks: vec![1, 1], base_channels: 8, num_classes: 2, in_channels }
    }

    pub fn validate(&self) -> Result<()> {
        if self.stage_blocks.is_empty() || self.stage_blocks.contains(&0) {
            return Err(Error::Parameter("stage_blocks must be non-empty and positive".into()));
        }
        if self.base_channels == 0 || self.num_classes < 2 || self.in_channels == 0 {
            return Err(Error::Parameter(format!("invalid classifier config {self:?}")));
        }
        Ok(())
    }
}

/// Two 3×3 convolutions plus a skip path (1×1 strided projection when the shape changes).
#[derive(Clone, Debug)]
pub struct BasicBlock {
    pub conv1: Conv2d,
    pub conv2: Conv2d,
    pub downsample: Option<Conv2d>,
}

impl BasicBlock {
    pub fn new<T: Real, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        c_in: usize,
        c_out: usize,
        stride: usize,
        rng: &mut R,
    ) -> Self {
        let conv1 = Conv2d::new(store, &format!("{name}.conv1"), c_in, c_out, 3, stride, 1, rng);
        let conv2 = Conv2d::new(store, &format!("{name}.conv2"), c_out, c_out, 3, 1, 1, rng);
        let downsample = (stride != 1 || c_in != c_out)
            .then(|| Conv2d::new(store, &format!("{name}.down"), c_in, c_out, 1, stride, 0, rng));
        BasicBlock { conv1, conv2, downsample }
    }

    pub fn forward<'g, T: Real>(&self, p: &Bound<'g, T>, x: Var<'g, T>) -> Result<Var<'g, T>> {
        let h = self.conv1.forward(p, x)?.relu();
        let h = self.conv2.forward(p, h)?;
        let skip = match &self.downsample {
            Some(d) => d.forward(p, x)?,
            None => x,
        };
        Ok(h.add(skip)?.relu())
    }

    /// Zeroes both convolutions on the residual path.
    pub fn zero_residual<T: Real>(&self, store: &mut ParamStore<T>) {
        self.conv1.zero(store);
        self.conv2.zero(store);
    }
}

/// ResNet-style classifier: 7×7/2 stem, stages of basic blocks, global average pool, linear head.
/// No batch normalization.
#[derive(Clone, Debug)]
pub struct ResidualCnn {
    pub config: ResidualCnnConfig,
    pub stem: Conv2d,
    pub stages: Vec<Vec<BasicBlock>>,
    pub head: Linear,
}

impl ResidualCnn {
    pub fn new<T: Real, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        config: &ResidualCnnConfig,
        rng: &mut R,
    ) -> Result<Self> {
        config.validate()?;
        let base = config.base_channels;
        let stem = Conv2d::new(store, &format!("{name}.stem"), config.in_channels, base, 7, 2, 3, rng);
        let mut stages = Vec::new();
        let mut c_in = base;
        for (si, &n) in config.stage_blocks.iter().enumerate() {
            let c_out = base << si;
            let mut blocks = Vec::new();
            for bi in 0..n {
                let stride = if si > 0 && bi == 0 { 2 } else { 1 };
                blocks.push(BasicBlock::new(store, &format!("{name}.s{si}.b{bi}"), c_in, c_out, stride, rng));
                c_in = c_out;
            }
            stages.push(blocks);
        }
        let head = Linear::new(store, &format!("{name}.fc"), c_in, config.num_classes, rng);
        Ok(ResidualCnn { config: config.clone(), stem, stages, head })
    }

    /// `x: B×C×H×W` to logits `B×num_classes`.
    pub fn forward<'g, T: Real>(&self, p: &Bound<'g, T>, x: Var<'g, T>) -> Result<Var<'g, T>> {
        let s = x.shape();
        if s.len() != 4 || s[1] != self.config.in_channels {
            return Err(Error::Shape(format!(
                "classifier expects B×{}×H×W, got {s:?}",
                self.config.in_channels
            )));
        }
        let after_stem = |n: usize| (n + 6).saturating_sub(7) / 2 + 1;
        let min_after = 8usize.max(1 << (self.stages.len() - 1));
        if s[2] + 6 < 7 || s[3] + 6 < 7 || after_stem(s[2]) < min_after || after_stem(s[3]) < min_after {
            return Err(Error::Shape(format!(
                "input {}x{} too small: need at least {min_after}x{min_after} after the stride-2 stem",
                s[2], s[3]
            )));
        }
        let mut h = self.stem.forward(p, x)?.relu();
        for block in self.stages.iter().flatten() {
            h = block.forward(p, h)?;
        }
        let pooled = h.pool2d(PoolKind::GlobalAvg, 0, 0)?;
        self.head.forward(p, pooled)
    }
}
