//! Pipeline configuration file (TOML).
//!
//! Every field has a default, so an empty file is a complete configuration:
//!
//! ```toml
//! [audio]
//! sample_rate = 16000
//! duration_s = 4.0
//!
//! [framing]
//! win_ms = 25.0
//! hop_ms = 10.0
//! fft = 512
//!
//! [features]
//! n_mels = 80
//! n_mfcc = 20
//! n_lfcc_filters = 20
//! n_lfcc = 20
//! fmin = 0.0
//! cqt_fmin = 32.7
//! cqt_bins_per_octave = 12
//! cqt_bins = 84
//! cqt_hop = 160
//!
//! [model]
//! mode = "fuse"
//! [model.classifier]
//! stage_blocks = [2, 2, 2, 2]
//! base_channels = 64
//! [model.selection]
//! attn_dim = 64
//! [model.fusion]
//! proj_dim = 128
//!
//! [train]
//! lr = 1e-4
//! weight_decay = 1e-4
//! epochs = 100
//! batch_size = 32
//! seed = 0
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dsp::{FeatureParams, FrameConfig};
use crate::error::{Error, Result};
use crate::incorporation::FusionHeadConfig;
use crate::model::{Mode, ModelConfig, ViewSpec};
use crate::nn::{ResidualCnnConfig, SelectionHeadConfig};
use crate::train::TrainConfig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AudioConfig {
    pub sample_rate: u32,
    pub duration_s: f64,
}

impl Default for AudioConfig {
    fn default() -> Self {
        AudioConfig { sample_rate: 16000, duration_s: 4.0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FramingConfig {
    pub win_ms: f64,
    pub hop_ms: f64,
    pub fft: usize,
}

impl Default for FramingConfig {
    fn default() -> Self {
        FramingConfig { win_ms: 25.0, hop_ms: 10.0, fft: 512 }
    }
}

impl FramingConfig {
    pub fn frame_config(&self, sample_rate: u32) -> Result<FrameConfig> {
        FrameConfig::from_ms(sample_rate, self.win_ms, self.hop_ms, self.fft)
    }
}

/// Model architecture without the view list, which comes from the data.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub mode: Mode,
    pub classifier: ResidualCnnConfig,
    pub selection: SelectionHeadConfig,
    pub fusion: FusionHeadConfig,
}

impl Default for ModelSection {
    fn default() -> Self {
        ModelSection {
            mode: Mode::Fuse,
            classifier: ResidualCnnConfig::resnet18(1),
            selection: SelectionHeadConfig::default(),
            fusion: FusionHeadConfig::default(),
        }
    }
}

impl ModelSection {
    pub fn with_views(&self, views: Vec<ViewSpec>) -> ModelConfig {
        ModelConfig {
            mode: self.mode,
            views,
            classifier: self.classifier.clone(),
            selection: self.selection.clone(),
            fusion: self.fusion.clone(),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub audio: AudioConfig,
    pub framing: FramingConfig,
    pub features: FeatureParams,
    pub model: ModelSection,
    pub train: TrainConfig,
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: PipelineConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        if self.audio.sample_rate == 0 || !(self.audio.duration_s > 0.0) {
            return Err(Error::Config("audio.sample_rate and audio.duration_s must be positive".into()));
        }
        self.framing.frame_config(self.audio.sample_rate).map_err(|e| Error::Config(e.to_string()))?;
        self.model.classifier.validate().map_err(|e| Error::Config(e.to_string()))?;
        self.train.validate().map_err(|e| Error::Config(e.to_string()))?;
        Ok(())
    }
}
