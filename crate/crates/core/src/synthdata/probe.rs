//! Linear-probe check that audio features carry articulator information.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::Dataset;
use crate::metrics::LabelMask;

/// Tongue centroid `(row, col)` in pixels; `None` if the tongue is absent.
pub fn tongue_centroid(mask: &LabelMask) -> Option<(f64, f64)> {
    let (mut n, mut sr, mut sc) = (0usize, 0.0, 0.0);
    for r in 0..mask.height() {
        for c in 0..mask.width() {
            if mask.get(r, c) == 1 {
                n += 1;
                sr += r as f64;
                sc += c as f64;
            }
        }
    }
    (n > 0).then(|| (sr / n as f64, sc / n as f64))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeReport {
    /// Held-out mean squared centroid error with the true audio.
    pub audio_mse: f64,
    /// Same probe trained and tested on audio shuffled across frames.
    pub shuffled_mse: f64,
}

/// Solves `(XᵀX + λI) w = Xᵀy` by Gaussian elimination with partial pivoting.
fn ridge(x: &[Vec<f64>], y: &[f64], lambda: f64) -> Vec<f64> {
    let d = x[0].len();
    let mut a = vec![vec![0.0; d + 1]; d];
    for (row, &t) in x.iter().zip(y) {
        for i in 0..d {
            for j in 0..d {
                a[i][j] += row[i] * row[j];
            }
            a[i][d] += row[i] * t;
        }
    }
    for (i, r) in a.iter_mut().enumerate() {
        r[i] += lambda;
    }
    for col in 0..d {
        let piv = (col..d).max_by(|&p, &q| a[p][col].abs().total_cmp(&a[q][col].abs())).expect("non-empty");
        a.swap(col, piv);
        for r in col + 1..d {
            let f = a[r][col] / a[col][col];
            for k in col..=d {
                a[r][k] -= f * a[col][k];
            }
        }
    }
    let mut w = vec![0.0; d];
    for i in (0..d).rev() {
        let s: f64 = (i + 1..d).map(|k| a[i][k] * w[k]).sum();
        w[i] = (a[i][d] - s) / a[i][i];
    }
    w
}

fn probe_mse(features: &[Vec<f64>], targets: &[(f64, f64)]) -> f64 {
    let n_train = features.len() * 7 / 10;
    let mut err = 0.0;
    for axis in 0..2 {
        let y: Vec<f64> = targets.iter().map(|t| if axis == 0 { t.0 } else { t.1 }).collect();
        let w = ridge(&features[..n_train], &y[..n_train], 1e-3);
        for (f, &t) in features[n_train..].iter().zip(&y[n_train..]) {
            let p: f64 = f.iter().zip(&w).map(|(a, b)| a * b).sum();
            err += (p - t).powi(2);
        }
    }
    err / (features.len() - n_train) as f64
}

/// Fits a linear map from the flattened audio window (plus bias) to the
/// tongue centroid on a random 70% of the original frames,
/// then reports held-out error against the same probe on shuffled audio.
pub fn audio_probe_errors(dataset: &Dataset, seed: u64) -> ProbeReport {
    let mut feats = Vec::new();
    let mut targets = Vec::new();
    for s in dataset.samples.iter().filter(|s| s.augmentation == 0) {
        if let Some(c) = tongue_centroid(&s.mask) {
            let mut f: Vec<f64> = s.audio.data().iter().map(|&v| v as f64).collect();
            f.push(1.0);
            feats.push(f);
            targets.push(c);
        }
    }
    // interleave so both partitions cover all speakers
    let mut order: Vec<usize> = (0..feats.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let feats: Vec<Vec<f64>> = order.iter().map(|&i| feats[i].clone()).collect();
    let targets: Vec<(f64, f64)> = order.iter().map(|&i| targets[i]).collect();
    let mut shuffled = feats.clone();
    shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(seed ^ 0x5a5a));
    ProbeReport {
        audio_mse: probe_mse(&feats, &targets),
        shuffled_mse: probe_mse(&shuffled, &targets),
    }
}
