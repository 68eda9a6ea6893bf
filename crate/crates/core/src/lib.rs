//! Tri-modal (video, audio, phonological) articulator segmentation.
//!
//! The crate is organised bottom-up:
//!
//! - [`numcore`]: tensors and a reverse-mode differentiation tape
//! - [`model`]: image/audio/phonological encoders, memory-token fusion,
//!   cross-attention decoder and patch segmentation head
//! - [`objectives`]: cross-entropy, soft Dice and two-level contrastive losses
//! - [`metrics`]: IoU/Dice/precision/recall and surface distances (ASSD, HD95)
//! - [`synthdata`]: procedural multimodal frames, augmentation, preprocessing
//!   and leave-one-speaker-out splits
//! - [`harness`]: AdamW, early stopping, progressive unfreezing, evaluation and
//!   the ablation grid
//! - [`verify`]: finite-difference and brute-force oracle suites

pub mod numcore;

pub use numcore::{Element, NumError, Tape, Tensor, Var};
pub mod verify;
pub mod model;
pub mod metrics;
pub mod objectives;
pub mod synthdata;
pub mod harness;
