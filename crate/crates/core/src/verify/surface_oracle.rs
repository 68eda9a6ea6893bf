//! Brute-force surface distances: every point against every point.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::metrics::{self, extract_surface, percentile, LabelMask, SurfacePointSet};

fn nearest(p: (usize, usize), to: &SurfacePointSet) -> f64 {
    let s = to.spacing_mm;
    to.points
        .iter()
        .map(|&(r, c)| {
            let dr = (p.0 as f64 - r as f64) * s;
            let dc = (p.1 as f64 - c as f64) * s;
            (dr * dr + dc * dc).sqrt()
        })
        .fold(f64::INFINITY, f64::min)
}

fn pooled(a: &SurfacePointSet, b: &SurfacePointSet) -> Option<Vec<f64>> {
    if a.is_empty() || b.is_empty() {
        return None;
    }
    let mut d: Vec<f64> = a.points.iter().map(|&p| nearest(p, b)).collect();
    d.extend(b.points.iter().map(|&p| nearest(p, a)));
    Some(d)
}

pub fn brute_force_assd(a: &SurfacePointSet, b: &SurfacePointSet) -> Option<f64> {
    pooled(a, b).map(|d| d.iter().sum::<f64>() / d.len() as f64)
}

pub fn brute_force_hd95(a: &SurfacePointSet, b: &SurfacePointSet) -> Option<f64> {
    pooled(a, b).map(|mut d| {
        d.sort_by(f64::total_cmp);
        percentile(&d, 0.95)
    })
}

/// Random multi-class mask of `width × height`: blobs (discs and
/// rectangles) of random classes painted over background, plus a sprinkle
/// of isolated pixels.
pub fn random_label_mask<R: Rng>(rng: &mut R, width: usize, height: usize, n_classes: u8, spacing_mm: f64) -> LabelMask {
    let mut v = vec![0u8; width * height];
    let span = width.max(height) as f64;
    for _ in 0..rng.random_range(1..6) {
        let class = rng.random_range(1..n_classes);
        let cr = rng.random_range(0.0..height as f64);
        let cc = rng.random_range(0.0..width as f64);
        let rad = rng.random_range(0.5..(span / 3.0).max(1.0));
        let disc = rng.random_bool(0.5);
        for r in 0..height {
            for c in 0..width {
                let (dr, dc) = (r as f64 - cr, c as f64 - cc);
                let hit = if disc { dr * dr + dc * dc <= rad * rad } else { dr.abs() <= rad && dc.abs() <= rad * 0.6 };
                if hit {
                    v[r * width + c] = class;
                }
            }
        }
    }
    for _ in 0..rng.random_range(0..4) {
        let i = rng.random_range(0..v.len());
        v[i] = rng.random_range(0..n_classes);
    }
    LabelMask::new(width, height, v, spacing_mm).expect("valid mask")
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct MetricOracleReport {
    pub cases: usize,
    /// Foreground (case, class) comparisons made.
    pub comparisons: usize,
    /// Largest |fast − brute force| over ASSD and HD95, in mm; infinite if
    /// one side was defined and the other was not.
    pub max_surface_err: f64,
    /// Classes whose TP/FP/FN differ from a naive recount.
    pub overlap_mismatches: usize,
}

/// Compares the transform-based surface metrics and the overlap counts with
/// brute-force recomputation on `cases` random mask pairs of up to
/// `max_size × max_size` pixels and 2 to 5 classes.
pub fn metric_oracle(cases: usize, max_size: usize, seed: u64) -> MetricOracleReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rep = MetricOracleReport {
        cases,
        ..Default::default()
    };
    for _ in 0..cases {
        let w = rng.random_range(2..=max_size);
        let h = rng.random_range(2..=max_size);
        let k = rng.random_range(2..=5u8);
        let spacing = rng.random_range(0.5..3.0);
        let pred = random_label_mask(&mut rng, w, h, k, spacing);
        let truth = random_label_mask(&mut rng, w, h, k, spacing);
        for class in 1..k {
            rep.comparisons += 1;
            let o = metrics::overlap_metrics(&pred, &truth, class).expect("same grid");
            let (mut tp, mut fp, mut fnn) = (0, 0, 0);
            for (&p, &t) in pred.values().iter().zip(truth.values()) {
                tp += (p == class && t == class) as usize;
                fp += (p == class && t != class) as usize;
                fnn += (p != class && t == class) as usize;
            }
            if (o.true_pos, o.false_pos, o.false_neg) != (tp, fp, fnn) {
                rep.overlap_mismatches += 1;
            }
            let a = extract_surface(&pred, class);
            let b = extract_surface(&truth, class);
            let fast = (metrics::assd(&a, &b).expect("same grid"), metrics::hd95(&a, &b).expect("same grid"));
            let slow = (brute_force_assd(&a, &b), brute_force_hd95(&a, &b));
            for (f, s) in [(fast.0, slow.0), (fast.1, slow.1)] {
                match (f, s) {
                    (Some(f), Some(s)) => rep.max_surface_err = rep.max_surface_err.max((f - s).abs()),
                    (None, None) => {}
                    _ => rep.max_surface_err = f64::INFINITY,
                }
            }
        }
    }
    rep
}
