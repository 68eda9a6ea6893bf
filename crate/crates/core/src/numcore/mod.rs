//! Dense tensors with a reverse-mode differentiation tape.
//!
//! Only the primitives the segmentation model and its objectives need are
//! provided. Every op output is checked for NaN/Inf.

mod serial;
mod tape;
mod tensor;

pub use serial::{read_tensor, read_u8_raster, write_tensor, write_u8_raster};
pub use tape::{Tape, Var};
pub use tensor::{Element, Tensor};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum NumError {
    #[error("{op}: incompatible shapes {a:?} and {b:?}")]
    ShapeMismatch {
        op: &'static str,
        a: Vec<usize>,
        b: Vec<usize>,
    },
    #[error("{op}: expected rank {expected}, got {got}")]
    RankMismatch {
        op: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("shape {shape:?} does not hold {len} elements")]
    DataLength { shape: Vec<usize>, len: usize },
    #[error("zero extent in shape {0:?}")]
    EmptyExtent(Vec<usize>),
    #[error("cannot reshape {from:?} into {to:?}")]
    ReshapeMismatch { from: Vec<usize>, to: Vec<usize> },
    #[error("axis {axis} out of range for rank {rank}")]
    AxisOutOfRange { axis: usize, rank: usize },
    #[error("index {index} out of range (bound {bound})")]
    IndexOutOfRange { index: usize, bound: usize },
    #[error("invalid permutation {0:?}")]
    BadPermutation(Vec<usize>),
    #[error("concat/lookup of an empty list")]
    EmptyConcat,
    #[error("log of a non-positive value")]
    LogDomain,
    #[error("fractional power of a non-positive value")]
    PowDomain,
    #[error("non-finite value produced by {0}")]
    NonFinite(&'static str),
    #[error("backward needs a single-element loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
    #[error("tensor file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[cfg(test)]
mod tests;
