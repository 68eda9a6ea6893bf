//! Exact squared Euclidean distance transform (separable lower envelope of
//! parabolas, one pass per axis).

/// Squared distance, in pixels², from every pixel to the nearest seed.
/// Returns `None` when there are no seeds.
pub fn squared_edt(width: usize, height: usize, seeds: &[bool]) -> Option<Vec<f64>> {
    assert_eq!(seeds.len(), width * height);
    if !seeds.iter().any(|&s| s) {
        return None;
    }
    // Larger than any real squared distance on this grid; all arithmetic
    // stays on integers representable exactly in f64.
    let far = ((width * width + height * height) * 4 + 1) as f64;
    let mut grid: Vec<f64> = seeds.iter().map(|&s| if s { 0.0 } else { far }).collect();

    let n = width.max(height);
    let mut f = vec![0.0; n];
    let mut out = vec![0.0; n];
    let mut v = vec![0usize; n];
    let mut z = vec![0.0; n + 1];

    for x in 0..width {
        for y in 0..height {
            f[y] = grid[y * width + x];
        }
        lower_envelope(&f[..height], &mut out[..height], &mut v, &mut z);
        for y in 0..height {
            grid[y * width + x] = out[y];
        }
    }
    for y in 0..height {
        f[..width].copy_from_slice(&grid[y * width..(y + 1) * width]);
        lower_envelope(&f[..width], &mut out[..width], &mut v, &mut z);
        grid[y * width..(y + 1) * width].copy_from_slice(&out[..width]);
    }
    Some(grid)
}

/// 1-D transform `d(p) = min_q (p - q)² + f(q)`.
fn lower_envelope(f: &[f64], d: &mut [f64], v: &mut [usize], z: &mut [f64]) {
    let n = f.len();
    let mut k = 0usize;
    v[0] = 0;
    z[0] = f64::NEG_INFINITY;
    z[1] = f64::INFINITY;
    for q in 1..n {
        let qf = q as f64;
        loop {
            let vk = v[k] as f64;
            let s = ((f[q] + qf * qf) - (f[v[k]] + vk * vk)) / (2.0 * qf - 2.0 * vk);
            if s <= z[k] && k > 0 {
                k -= 1;
                continue;
            }
            if s <= z[k] {
                // k == 0: the new parabola dominates everywhere
                v[0] = q;
                z[0] = f64::NEG_INFINITY;
                z[1] = f64::INFINITY;
                break;
            }
            k += 1;
            v[k] = q;
            z[k] = s;
            z[k + 1] = f64::INFINITY;
            break;
        }
    }
    k = 0;
    for (q, dq) in d.iter_mut().enumerate() {
        let qf = q as f64;
        while z[k + 1] < qf {
            k += 1;
        }
        let vk = v[k] as f64;
        *dq = (qf - vk) * (qf - vk) + f[v[k]];
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn brute(width: usize, height: usize, seeds: &[bool]) -> Vec<f64> {
        let pts: Vec<(i64, i64)> = (0..width * height)
            .filter(|&i| seeds[i])
            .map(|i| ((i / width) as i64, (i % width) as i64))
            .collect();
        (0..width * height)
            .map(|i| {
                let (r, c) = ((i / width) as i64, (i % width) as i64);
                pts.iter().map(|&(a, b)| ((r - a).pow(2) + (c - b).pow(2)) as f64).fold(f64::INFINITY, f64::min)
            })
            .collect()
    }

    #[test]
    fn no_seeds_is_none() {
        assert!(squared_edt(3, 2, &[false; 6]).is_none());
    }

    #[test]
    fn single_seed_distances() {
        let mut s = vec![false; 9];
        s[0] = true;
        let d = squared_edt(3, 3, &s).unwrap();
        assert_eq!(d, vec![0.0, 1.0, 4.0, 1.0, 2.0, 5.0, 4.0, 5.0, 8.0]);
    }

    proptest! {
        #[test]
        fn matches_brute_force(w in 1usize..20, h in 1usize..20, bits in proptest::collection::vec(0u8..10, 400)) {
            let seeds: Vec<bool> = bits[..w * h].iter().map(|&b| b == 0).collect();
            match squared_edt(w, h, &seeds) {
                None => prop_assert!(!seeds.iter().any(|&s| s)),
                Some(d) => prop_assert_eq!(d, brute(w, h, &seeds)),
            }
        }
    }
}
