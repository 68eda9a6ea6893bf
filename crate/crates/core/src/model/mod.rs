//! The segmentation network: a small ViT-style image encoder, a frozen audio
//! encoder, a phonological MLP, memory-token fusion, a cross-attention
//! decoder and a linear patch head, plus the concat-fusion variants.

mod checkpoint;
mod config;
mod layers;
mod network;
mod params;

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, CheckpointManifest, ParamEntry};
pub use config::{FusionMode, ModelConfig};
pub use layers::{DecoderTrace, Linear, MultiHeadAttention, Norm};
pub use network::{
    argmax_masks, l2_normalize, ForwardOutput, GlobalEmbeddings, MemoryTokens, ModalityMask, ModelInput, TokenKind, VocSegModel,
    AUDIO_PREFIX, IMAGE_PREFIX,
};
pub use params::{Ctx, Param, ParamId, ParamStore};

use thiserror::Error;

use crate::numcore::NumError;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid model config: {0}")]
    Config(String),
    #[error("shape error: {0}")]
    Shape(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Num(#[from] NumError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[cfg(test)]
mod tests;
