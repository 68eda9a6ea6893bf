use serde::{Deserialize, Serialize};

use super::{MultimodalSample, RAW_SIZE};
use crate::metrics::{LabelMask, SOURCE_SPACING_MM};
use crate::numcore::Tensor;

/// Dataset-wide intensity range used for min-max normalisation.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct IntensityRange {
    pub min: f32,
    pub max: f32,
}

impl IntensityRange {
    pub fn of<'a>(images: impl IntoIterator<Item = &'a [f32]>) -> Self {
        let mut r = Self {
            min: f32::INFINITY,
            max: f32::NEG_INFINITY,
        };
        for img in images {
            for &v in img {
                r.min = r.min.min(v);
                r.max = r.max.max(v);
            }
        }
        r
    }
}

/// Maps `range` onto `[0, 1]`; a zero-width range maps everything to 0.
pub fn min_max_normalize(values: &[f32], range: IntensityRange) -> Vec<f32> {
    let span = range.max - range.min;
    if !(span > 0.0) {
        return vec![0.0; values.len()];
    }
    values.iter().map(|&v| ((v - range.min) / span).clamp(0.0, 1.0)).collect()
}

/// Pixel spacing after resampling a raw frame to `size` pixels.
pub fn spacing_for(size: usize) -> f64 {
    SOURCE_SPACING_MM * RAW_SIZE as f64 / size as f64
}

/// Half-pixel-centre bilinear resize with edge clamping.
pub fn resize_bilinear(src: &[f32], h: usize, w: usize, oh: usize, ow: usize) -> Vec<f32> {
    if (h, w) == (oh, ow) {
        return src.to_vec();
    }
    let taps = |out: usize, inp: usize| -> Vec<(usize, usize, f32)> {
        (0..out)
            .map(|o| {
                let x = ((o as f64 + 0.5) * inp as f64 / out as f64 - 0.5).clamp(0.0, (inp - 1) as f64);
                let i0 = x.floor() as usize;
                let i1 = (i0 + 1).min(inp - 1);
                (i0, i1, (x - i0 as f64) as f32)
            })
            .collect()
    };
    let (tr, tc) = (taps(oh, h), taps(ow, w));
    let mut out = Vec::with_capacity(oh * ow);
    for &(r0, r1, fr) in &tr {
        for &(c0, c1, fc) in &tc {
            let top = src[r0 * w + c0] * (1.0 - fc) + src[r0 * w + c1] * fc;
            let bot = src[r1 * w + c0] * (1.0 - fc) + src[r1 * w + c1] * fc;
            out.push(top * (1.0 - fr) + bot * fr);
        }
    }
    out
}

/// Nearest-neighbour resize (source index `floor((o + 0.5)·in/out)`).
pub fn resize_nearest(src: &[u8], h: usize, w: usize, oh: usize, ow: usize) -> Vec<u8> {
    let idx = |o: usize, out: usize, inp: usize| (((o as f64 + 0.5) * inp as f64 / out as f64).floor() as usize).min(inp - 1);
    let mut out = Vec::with_capacity(oh * ow);
    for r in 0..oh {
        let sr = idx(r, oh, h);
        for c in 0..ow {
            out.push(src[sr * w + idx(c, ow, w)]);
        }
    }
    out
}

/// Resizes to `size` and normalises intensities into `[0, 1]` with the
/// dataset range; spacing is rescaled accordingly.
pub fn preprocess(sample: &MultimodalSample, size: usize, range: IntensityRange) -> MultimodalSample {
    let n = sample.size();
    let img = resize_bilinear(sample.image.data(), n, n, size, size);
    let img = min_max_normalize(&img, range);
    let mask = resize_nearest(sample.mask.values(), n, n, size, size);
    let spacing = sample.mask.spacing_mm() * n as f64 / size as f64;
    MultimodalSample {
        image: Tensor::new(&[1, size, size], img).expect("resized shape"),
        mask: LabelMask::new(size, size, mask, spacing).expect("resized mask"),
        ..sample.clone()
    }
}
