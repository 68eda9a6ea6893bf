//! Segmentation evaluation: overlap metrics, surface distances in
//! millimetres, per-dataset aggregation and confusion maps.

mod dataset;
mod edt;
mod io;
mod overlap;
mod surface;

pub use dataset::{
    evaluate_dataset, evaluate_frame, mean_std, quantile, write_frame_csv, write_summary_markdown, BoxStats, ClassSummary,
    DatasetReport, Stat,
};
pub use edt::squared_edt;
pub use io::{read_mask_file, write_mask_file, MaskSidecar};
pub use overlap::{fp_fn_map, overlap_metrics, Confusion, ConfusionMap, Overlap};
pub use surface::{assd, directed_distances, extract_surface, hd95, percentile, SurfacePointSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// In-plane pixel spacing of the source acquisition, in millimetres.
pub const SOURCE_SPACING_MM: f64 = 2.4;

/// Default class names; class 0 is background.
pub const CLASS_NAMES: [&str; 5] = ["background", "tongue", "velum", "upper_lip", "lower_lip"];

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("mask dimensions differ: {0:?} vs {1:?}")]
    DimensionMismatch((usize, usize), (usize, usize)),
    #[error("{0} predictions but {1} ground truths")]
    LengthMismatch(usize, usize),
    #[error("invalid mask: {0}")]
    InvalidMask(String),
    #[error("mask file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Per-pixel class raster with physical spacing.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabelMask {
    width: usize,
    height: usize,
    values: Vec<u8>,
    spacing_mm: f64,
}

impl LabelMask {
    pub fn new(width: usize, height: usize, values: Vec<u8>, spacing_mm: f64) -> Result<Self, MetricsError> {
        if width == 0 || height == 0 || values.len() != width * height {
            return Err(MetricsError::InvalidMask(format!(
                "{} values for a {width}x{height} raster",
                values.len()
            )));
        }
        if !(spacing_mm > 0.0) || !spacing_mm.is_finite() {
            return Err(MetricsError::InvalidMask(format!("spacing {spacing_mm} mm must be positive")));
        }
        Ok(Self {
            width,
            height,
            values,
            spacing_mm,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn values(&self) -> &[u8] {
        &self.values
    }

    pub fn spacing_mm(&self) -> f64 {
        self.spacing_mm
    }

    pub fn with_spacing(mut self, spacing_mm: f64) -> Result<Self, MetricsError> {
        if !(spacing_mm > 0.0) {
            return Err(MetricsError::InvalidMask(format!("spacing {spacing_mm} mm must be positive")));
        }
        self.spacing_mm = spacing_mm;
        Ok(self)
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> u8 {
        self.values[row * self.width + col]
    }

    /// Checks that every value is below `n_classes`.
    pub fn check_classes(&self, n_classes: usize) -> Result<(), MetricsError> {
        match self.values.iter().find(|&&v| v as usize >= n_classes) {
            Some(v) => Err(MetricsError::InvalidMask(format!("class {v} outside 0..{n_classes}"))),
            None => Ok(()),
        }
    }

    pub fn count(&self, class: u8) -> usize {
        self.values.iter().filter(|&&v| v == class).count()
    }

    pub(crate) fn same_dims(&self, other: &Self) -> Result<(), MetricsError> {
        if (self.width, self.height) != (other.width, other.height) {
            return Err(MetricsError::DimensionMismatch((self.width, self.height), (other.width, other.height)));
        }
        Ok(())
    }
}

/// Everything measured for one class in one frame. `None` marks an undefined
/// value (zero denominator or empty surface).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub class: u8,
    pub iou: Option<f64>,
    pub dice: Option<f64>,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub assd_mm: Option<f64>,
    pub hd95_mm: Option<f64>,
    pub support_pixels: usize,
    pub predicted_pixels: usize,
}
