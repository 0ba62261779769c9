//! Trainable building blocks.

mod attention;
mod channel_attention;
mod layers;
mod resnet;
mod selection;

pub use attention::{MultiHeadSelfAttention, TransformerEncoderLayer};
pub use channel_attention::ChannelAttention;
pub use layers::{Conv2d, LayerNorm, Linear, Phase};
pub use resnet::{BasicBlock, ResidualCnn, ResidualCnnConfig};
pub use selection::{SelectionHead, SelectionHeadConfig};
