//! Audio deepfake detection toolkit.
//!
//! Handcrafted front-ends (Mel, MFCC, log spectrogram, LFCC, CQT), a small
//! reverse-mode autodiff engine, a residual CNN classifier and two multi-view
//! incorporation heads: sample-wise gated feature selection and channel
//! attention + Transformer feature fusion. Training uses Adam with
//! cross-entropy; evaluation reports the equal error rate.
//!
//! ```text
//! WAV -> audio (decode, resample, fix duration) -> dsp (features) -> featureio (ADDF files)
//!     -> model (align views -> select | fuse | concat -> ResidualCnn) -> train -> eval (EER)
//! ```

pub mod audio;
pub mod checkpoint;
pub mod config;
pub mod data;
pub mod dsp;
pub mod error;
pub mod eval;
pub mod featureio;
pub mod incorporation;
pub mod model;
pub mod nn;
pub mod params;
pub mod synth;
pub mod tensor;
pub mod train;

pub use error::{Error, ErrorClass, Result};
pub use eval::{compute_eer, det_points, Eer, ScoreEntry, ScoreSet};
pub use featureio::{DatasetManifest, DimKind, FeatureTensor, Label, Split};
pub use model::{Detector, Mode, ModelConfig, ViewSpec};
pub use params::ParamStore;
pub use tensor::{Graph, Real, Tensor, Var};
pub use train::{Checkpoint, TrainConfig, TrainLog};
