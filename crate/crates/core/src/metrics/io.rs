//! Mask files: a u8 raster blob plus a JSON sidecar (`<file>.json`) holding
//! spacing and class names.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{LabelMask, MetricsError};
use crate::numcore::{read_u8_raster, write_u8_raster};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MaskSidecar {
    pub spacing_mm: f64,
    pub class_names: Vec<String>,
}

fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

fn fmt_err(e: impl std::fmt::Display) -> MetricsError {
    MetricsError::Format(e.to_string())
}

/// Writes `masks` as a `[N, H, W]` raster with its sidecar.
pub fn write_mask_file(path: &Path, masks: &[LabelMask], class_names: &[&str]) -> Result<(), MetricsError> {
    let first = masks.first().ok_or_else(|| MetricsError::Format("no masks to write".into()))?;
    let mut data = Vec::with_capacity(masks.len() * first.values().len());
    for m in masks {
        m.same_dims(first)?;
        if m.spacing_mm() != first.spacing_mm() {
            return Err(MetricsError::InvalidMask("mixed spacing in one file".into()));
        }
        data.extend_from_slice(m.values());
    }
    let mut w = BufWriter::new(File::create(path)?);
    write_u8_raster(&mut w, &[masks.len(), first.height(), first.width()], &data).map_err(fmt_err)?;
    let sidecar = MaskSidecar {
        spacing_mm: first.spacing_mm(),
        class_names: class_names.iter().map(|s| s.to_string()).collect(),
    };
    std::fs::write(sidecar_path(path), serde_json::to_vec_pretty(&sidecar).map_err(fmt_err)?)?;
    Ok(())
}

/// Reads masks written by [`write_mask_file`]. A `[H, W]` raster is read as
/// a single mask.
pub fn read_mask_file(path: &Path) -> Result<(Vec<LabelMask>, MaskSidecar), MetricsError> {
    let sidecar: MaskSidecar = serde_json::from_slice(&std::fs::read(sidecar_path(path))?).map_err(fmt_err)?;
    let (shape, data) = read_u8_raster(&mut BufReader::new(File::open(path)?)).map_err(fmt_err)?;
    let (n, h, w) = match shape[..] {
        [h, w] => (1, h, w),
        [n, h, w] => (n, h, w),
        _ => return Err(MetricsError::Format(format!("mask raster must be rank 2 or 3, got {shape:?}"))),
    };
    let n_classes = sidecar.class_names.len();
    let masks = data
        .chunks(h * w)
        .take(n)
        .map(|chunk| {
            let m = LabelMask::new(w, h, chunk.to_vec(), sidecar.spacing_mm)?;
            m.check_classes(n_classes)?;
            Ok(m)
        })
        .collect::<Result<Vec<_>, MetricsError>>()?;
    Ok((masks, sidecar))
}
