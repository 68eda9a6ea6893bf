//! Procedural midsagittal frames: per-speaker anatomy, smooth articulator
//! trajectories, rendering of the image and its label mask.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{mix_seed, RAW_SIZE};

/// Number of latent articulator degrees of freedom.
pub const N_LATENT: usize = 5;

/// Latent articulator state, every entry in `[-1, 1]`: tongue height, tongue
/// frontness, tongue-tip raise, velum lowering, lip aperture.
pub type ArticulatorState = [f64; N_LATENT];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Anatomy {
    pub tongue_center: (f64, f64),
    pub tongue_radii: (f64, f64),
    pub palate_row: f64,
    pub palate_start: f64,
    pub velum_len: f64,
    pub velum_half_thick: f64,
    pub lip_row: f64,
    pub lip_col: f64,
    pub lip_half_len: f64,
    pub lip_half_thick: f64,
    pub tissue: f64,
    pub articulator: f64,
    pub air: f64,
    pub bias_tilt: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Motion {
    /// Cycles per frame for each latent dimension and component.
    pub freq: [[f64; 3]; N_LATENT],
    pub phase: [[f64; 3]; N_LATENT],
    pub amp: [[f64; 3]; N_LATENT],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpeakerParams {
    pub id: u32,
    pub anatomy_seed: u64,
    pub motion_seed: u64,
    pub anatomy: Anatomy,
    pub motion: Motion,
}

impl SpeakerParams {
    pub fn new(id: u32, global_seed: u64) -> Self {
        let anatomy_seed = mix_seed(&[global_seed, 0xa7a7, id as u64]);
        let motion_seed = mix_seed(&[global_seed, 0x3073, id as u64]);
        let mut r = ChaCha8Rng::seed_from_u64(anatomy_seed);
        let tissue = r.random_range(0.38..0.5);
        let anatomy = Anatomy {
            tongue_center: (r.random_range(52.0..54.0), r.random_range(39.5..41.5)),
            tongue_radii: (r.random_range(11.5..13.5), r.random_range(16.5..19.5)),
            palate_row: r.random_range(29.0..30.5),
            palate_start: r.random_range(34.0..36.0),
            velum_len: r.random_range(15.0..18.0),
            velum_half_thick: r.random_range(3.2..3.8),
            lip_row: r.random_range(44.5..45.5),
            lip_col: r.random_range(73.0..74.0),
            lip_half_len: r.random_range(6.5..8.0),
            lip_half_thick: r.random_range(2.6..3.2),
            tissue,
            articulator: tissue + r.random_range(0.14..0.26),
            air: r.random_range(0.04..0.1),
            bias_tilt: r.random_range(-0.15..0.15),
        };
        let mut r = ChaCha8Rng::seed_from_u64(motion_seed);
        let mut motion = Motion {
            freq: [[0.0; 3]; N_LATENT],
            phase: [[0.0; 3]; N_LATENT],
            amp: [[0.0; 3]; N_LATENT],
        };
        for i in 0..N_LATENT {
            for k in 0..3 {
                motion.freq[i][k] = 1.0 / r.random_range(9.0..40.0);
                motion.phase[i][k] = r.random_range(0.0..std::f64::consts::TAU);
                motion.amp[i][k] = r.random_range(0.3..1.0);
            }
        }
        Self {
            id,
            anatomy_seed,
            motion_seed,
            anatomy,
            motion,
        }
    }

    /// Articulator state at (possibly fractional) frame time `t`.
    pub fn state_at(&self, t: f64) -> ArticulatorState {
        let m = &self.motion;
        std::array::from_fn(|i| {
            let total: f64 = m.amp[i].iter().sum();
            let v: f64 = (0..3)
                .map(|k| m.amp[i][k] * (std::f64::consts::TAU * m.freq[i][k] * t + m.phase[i][k]).sin())
                .sum();
            // sharpen toward the extremes so targets are visited
            (1.6 * v / total).clamp(-1.0, 1.0)
        })
    }
}

/// Articulator shapes for one state, in 84-pixel raw coordinates.
#[derive(Clone, Debug)]
pub struct Geometry {
    pub body: Ellipse,
    pub tip: Ellipse,
    pub palate_row: f64,
    pub velum: (f64, f64, f64, f64, f64),
    pub upper_lip: Ellipse,
    pub lower_lip: Ellipse,
    pub pharynx_col: f64,
    pub lip_gap: f64,
}

#[derive(Clone, Copy, Debug)]
pub struct Ellipse {
    pub row: f64,
    pub col: f64,
    pub half_h: f64,
    pub half_w: f64,
}

impl Ellipse {
    fn contains(&self, r: f64, c: f64) -> bool {
        let dr = (r - self.row) / self.half_h;
        let dc = (c - self.col) / self.half_w;
        dr * dr + dc * dc <= 1.0
    }
}

fn segment_distance(r: f64, c: f64, (r0, c0, r1, c1): (f64, f64, f64, f64)) -> f64 {
    let (vr, vc) = (r1 - r0, c1 - c0);
    let t = (((r - r0) * vr + (c - c0) * vc) / (vr * vr + vc * vc)).clamp(0.0, 1.0);
    let (pr, pc) = (r0 + t * vr - r, c0 + t * vc - c);
    (pr * pr + pc * pc).sqrt()
}

pub fn geometry(a: &Anatomy, s: &ArticulatorState) -> Geometry {
    let (cr, cc) = a.tongue_center;
    let body = Ellipse {
        row: cr - 6.0 * s[0],
        col: cc + 6.0 * s[1],
        half_h: a.tongue_radii.0,
        half_w: a.tongue_radii.1,
    };
    let tip = Ellipse {
        row: body.row - 3.0 - 5.0 * s[2],
        col: body.col + 0.8 * body.half_w,
        half_h: 4.5,
        half_w: 7.0,
    };
    let angle = 0.75 + 0.4 * s[3];
    let (vr0, vc0) = (a.palate_row + 1.0, a.palate_start);
    let (vr1, vc1) = (vr0 + a.velum_len * angle.cos(), vc0 - a.velum_len * angle.sin());
    let gap = 2.5 * (s[4] + 1.0);
    let jaw = -1.5 * s[0];
    let upper_lip = Ellipse {
        row: a.lip_row - gap - a.lip_half_thick,
        col: a.lip_col,
        half_h: a.lip_half_thick,
        half_w: a.lip_half_len,
    };
    let lower_lip = Ellipse {
        row: a.lip_row + gap + jaw.max(0.0) + 1.1 * a.lip_half_thick,
        col: a.lip_col - 1.0,
        half_h: 1.1 * a.lip_half_thick,
        half_w: a.lip_half_len,
    };
    Geometry {
        body,
        tip,
        palate_row: a.palate_row,
        velum: (vr0, vc0, vr1, vc1, a.velum_half_thick),
        upper_lip,
        lower_lip,
        pharynx_col: cc - a.tongue_radii.1 - 3.0 + 2.0 * s[1],
        lip_gap: gap,
    }
}

/// Class at the pixel centre `(r, c)`; later articulators overwrite earlier.
pub fn label_at(g: &Geometry, r: f64, c: f64) -> u8 {
    let (vr0, vc0, vr1, vc1, vt) = g.velum;
    if g.upper_lip.contains(r, c) {
        3
    } else if g.lower_lip.contains(r, c) {
        4
    } else if segment_distance(r, c, (vr0, vc0, vr1, vc1)) <= vt {
        2
    } else if r > g.palate_row + 1.5 && (g.body.contains(r, c) || g.tip.contains(r, c)) {
        1
    } else {
        0
    }
}

/// Clean image and mask for a state, before degradation.
pub fn render_clean(a: &Anatomy, g: &Geometry) -> (Vec<f64>, Vec<u8>) {
    let n = RAW_SIZE;
    let mut img = vec![0.03; n * n];
    let mut mask = vec![0u8; n * n];
    let lips_front = a.lip_col - a.lip_half_len;
    for ri in 0..n {
        for ci in 0..n {
            let (r, c) = (ri as f64 + 0.5, ci as f64 + 0.5);
            let head = ((r - 44.0) / 44.0).powi(2) + ((c - 36.0) / 46.0).powi(2) <= 1.0;
            let mut v = if head { a.tissue } else { 0.03 };
            let oral = r > g.palate_row + 1.0 && r < a.tongue_center.0 + 2.0 && c > a.palate_start - 4.0 && c < lips_front + 2.0;
            let pharynx = (c - g.pharynx_col).abs() < 3.0 && r > g.palate_row - 6.0;
            let naso = r > g.palate_row - 8.0 && r <= g.palate_row + 2.0 && c > g.pharynx_col - 3.0 && c < a.palate_start;
            let mouth = (r - a.lip_row).abs() < g.lip_gap && c >= lips_front - 2.0;
            if head && (oral || pharynx || naso || mouth) {
                v = a.air;
            }
            if (r - (g.palate_row - 1.0)).abs() < 1.5 && c >= a.palate_start && c < lips_front {
                v = a.tissue + 0.15;
            }
            let label = label_at(g, r, c);
            if label != 0 {
                v = match label {
                    2 => a.articulator - 0.04,
                    _ => a.articulator,
                };
            }
            img[ri * n + ci] = v;
            mask[ri * n + ci] = label;
        }
    }
    (img, mask)
}

/// Partial-volume blur, coil bias field, acquisition noise and, with
/// probability `occlusion_p`, a band where the signal is lost.
pub fn degrade<R: Rng>(a: &Anatomy, clean: &[f64], noise_std: f64, occlusion_p: f64, rng: &mut R) -> Vec<f32> {
    let n = RAW_SIZE;
    let mut blurred = vec![0.0; n * n];
    for r in 0..n {
        for c in 0..n {
            let mut acc = 0.0;
            let mut w = 0.0;
            for dr in -1i64..=1 {
                for dc in -1i64..=1 {
                    let (rr, cc) = (r as i64 + dr, c as i64 + dc);
                    if rr >= 0 && cc >= 0 && (rr as usize) < n && (cc as usize) < n {
                        let k = if dr == 0 && dc == 0 { 2.0 } else { 1.0 };
                        acc += k * clean[rr as usize * n + cc as usize];
                        w += k;
                    }
                }
            }
            blurred[r * n + c] = acc / w;
        }
    }
    let noise = Normal::new(0.0, noise_std).expect("finite std");
    let band = rng.random_bool(occlusion_p).then(|| {
        let vertical = rng.random_bool(0.5);
        let start = rng.random_range(12.0..66.0);
        let width = rng.random_range(10.0..20.0);
        (vertical, start, width)
    });
    let mut out = vec![0f32; n * n];
    for r in 0..n {
        for c in 0..n {
            let bias = 1.0 + a.bias_tilt * (c as f64 - 42.0) / 42.0;
            let mut v = blurred[r * n + c] * bias + noise.sample(rng);
            if let Some((vertical, start, width)) = band {
                let x = if vertical { c as f64 } else { r as f64 };
                if x >= start && x < start + width {
                    v = a.air + noise.sample(rng) * 1.5;
                }
            }
            out[r * n + c] = v.clamp(0.0, 1.0) as f32;
        }
    }
    out
}
