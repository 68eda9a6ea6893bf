use super::edt::squared_edt;
use super::{LabelMask, MetricsError};

/// Boundary pixels of one class: members with at least one 4-neighbour
/// outside the class. Pixels past the image border count as outside.
#[derive(Clone, Debug, PartialEq)]
pub struct SurfacePointSet {
    pub width: usize,
    pub height: usize,
    pub spacing_mm: f64,
    /// `(row, col)` pairs in raster order.
    pub points: Vec<(usize, usize)>,
}

impl SurfacePointSet {
    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    fn seeds(&self) -> Vec<bool> {
        let mut s = vec![false; self.width * self.height];
        for &(r, c) in &self.points {
            s[r * self.width + c] = true;
        }
        s
    }
}

pub fn extract_surface(mask: &LabelMask, class: u8) -> SurfacePointSet {
    let (w, h) = (mask.width(), mask.height());
    let inside = |r: isize, c: isize| r >= 0 && c >= 0 && (r as usize) < h && (c as usize) < w && mask.get(r as usize, c as usize) == class;
    let mut points = Vec::new();
    for r in 0..h {
        for c in 0..w {
            if mask.get(r, c) != class {
                continue;
            }
            let (ri, ci) = (r as isize, c as isize);
            if !(inside(ri - 1, ci) && inside(ri + 1, ci) && inside(ri, ci - 1) && inside(ri, ci + 1)) {
                points.push((r, c));
            }
        }
    }
    SurfacePointSet {
        width: w,
        height: h,
        spacing_mm: mask.spacing_mm(),
        points,
    }
}

fn check_pair(a: &SurfacePointSet, b: &SurfacePointSet) -> Result<(), MetricsError> {
    if (a.width, a.height) != (b.width, b.height) {
        return Err(MetricsError::DimensionMismatch((a.width, a.height), (b.width, b.height)));
    }
    if a.spacing_mm != b.spacing_mm {
        return Err(MetricsError::InvalidMask(format!("spacing {} vs {} mm", a.spacing_mm, b.spacing_mm)));
    }
    Ok(())
}

/// Distance in millimetres from each point of `from` to the nearest point of
/// `to`. `None` when `to` is empty.
pub fn directed_distances(from: &SurfacePointSet, to: &SurfacePointSet) -> Result<Option<Vec<f64>>, MetricsError> {
    check_pair(from, to)?;
    let Some(field) = squared_edt(to.width, to.height, &to.seeds()) else {
        return Ok(None);
    };
    Ok(Some(
        from.points
            .iter()
            .map(|&(r, c)| field[r * from.width + c].sqrt() * from.spacing_mm)
            .collect(),
    ))
}

fn pooled(a: &SurfacePointSet, b: &SurfacePointSet) -> Result<Option<Vec<f64>>, MetricsError> {
    if a.is_empty() || b.is_empty() {
        check_pair(a, b)?;
        return Ok(None);
    }
    let mut ab = directed_distances(a, b)?.expect("non-empty surface");
    ab.extend(directed_distances(b, a)?.expect("non-empty surface"));
    Ok(Some(ab))
}

/// Average symmetric surface distance in millimetres; undefined when either
/// surface is empty.
pub fn assd(a: &SurfacePointSet, b: &SurfacePointSet) -> Result<Option<f64>, MetricsError> {
    Ok(pooled(a, b)?.map(|d| d.iter().sum::<f64>() / d.len() as f64))
}

/// 95th percentile of the pooled symmetric surface distances, linearly
/// interpolated between order statistics.
pub fn hd95(a: &SurfacePointSet, b: &SurfacePointSet) -> Result<Option<f64>, MetricsError> {
    Ok(pooled(a, b)?.map(|mut d| {
        d.sort_by(f64::total_cmp);
        percentile(&d, 0.95)
    }))
}

/// Linear-interpolation percentile of sorted data, `q` in `[0, 1]`.
pub fn percentile(sorted: &[f64], q: f64) -> f64 {
    assert!(!sorted.is_empty());
    let pos = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    let frac = pos - lo as f64;
    sorted[lo] + frac * (sorted[hi] - sorted[lo])
}
