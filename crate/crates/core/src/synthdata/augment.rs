use rand::Rng;
use serde::{Deserialize, Serialize};

use super::MultimodalSample;
use crate::metrics::LabelMask;
use crate::numcore::Tensor;

/// Joint geometric transform plus image-only intensity transform.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AugmentParams {
    pub rotation_deg: f64,
    /// Translation in pixels along (row, col).
    pub shift: (f64, f64),
    pub scale: f64,
    pub brightness: f64,
    pub contrast: f64,
    pub gamma: f64,
}

impl AugmentParams {
    pub const IDENTITY: Self = Self {
        rotation_deg: 0.0,
        shift: (0.0, 0.0),
        scale: 1.0,
        brightness: 0.0,
        contrast: 1.0,
        gamma: 1.0,
    };

    pub fn sample<R: Rng>(rng: &mut R) -> Self {
        Self {
            rotation_deg: rng.random_range(-10.0..=10.0),
            shift: (rng.random_range(-4.0..=4.0), rng.random_range(-4.0..=4.0)),
            scale: rng.random_range(0.9..=1.1),
            brightness: rng.random_range(-0.1..=0.1),
            contrast: rng.random_range(0.8..=1.25),
            gamma: rng.random_range(0.8..=1.25),
        }
    }

    /// Source coordinate (pixel-centre convention) for an output pixel.
    fn source(&self, r: f64, c: f64, centre: f64) -> (f64, f64) {
        let th = self.rotation_deg.to_radians();
        let (dr, dc) = ((r - centre - self.shift.0) / self.scale, (c - centre - self.shift.1) / self.scale);
        let (sin, cos) = th.sin_cos();
        (centre + cos * dr + sin * dc, centre - sin * dr + cos * dc)
    }
}

/// Applies `params` to the image (bilinear) and mask (nearest); audio and
/// phonology are untouched. Intensity may leave `[0, 1]`; dataset-level
/// normalisation brings it back.
pub fn augment(sample: &MultimodalSample, params: &AugmentParams) -> MultimodalSample {
    let n = sample.size();
    let centre = (n as f64 - 1.0) / 2.0;
    let src = sample.image.data();
    let labels = sample.mask.values();
    let at = |r: i64, c: i64| src[r.clamp(0, n as i64 - 1) as usize * n + c.clamp(0, n as i64 - 1) as usize] as f64;
    let mut image = vec![0f32; n * n];
    let mut mask = vec![0u8; n * n];
    let offset = params.brightness + 0.5 - 0.5 * params.contrast;
    for r in 0..n {
        for c in 0..n {
            let (sr, sc) = params.source(r as f64, c as f64, centre);
            let (r0, c0) = (sr.floor(), sc.floor());
            let (fr, fc) = (sr - r0, sc - c0);
            let (r0, c0) = (r0 as i64, c0 as i64);
            let v = if fr == 0.0 && fc == 0.0 {
                at(r0, c0)
            } else {
                (1.0 - fr) * ((1.0 - fc) * at(r0, c0) + fc * at(r0, c0 + 1)) + fr * ((1.0 - fc) * at(r0 + 1, c0) + fc * at(r0 + 1, c0 + 1))
            };
            let v = v.clamp(0.0, 1.0).powf(params.gamma);
            image[r * n + c] = (v * params.contrast + offset) as f32;
            let (nr, nc) = (sr.round(), sc.round());
            if nr >= 0.0 && nc >= 0.0 && (nr as usize) < n && (nc as usize) < n {
                mask[r * n + c] = labels[nr as usize * n + nc as usize];
            }
        }
    }
    MultimodalSample {
        image: Tensor::new(&[1, n, n], image).expect("same shape"),
        mask: LabelMask::new(n, n, mask, sample.mask.spacing_mm()).expect("same shape"),
        ..sample.clone()
    }
}
