//! Acoustic feature frames and phonological class vectors derived from the
//! articulator state.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::render::{ArticulatorState, SpeakerParams, N_LATENT};
use super::mix_seed;

/// Phonological classes: tongue height (3), frontness (3), tip raised (2),
/// velum lowered (2), lips open (2).
pub const PHONO_GROUPS: [usize; 5] = [3, 3, 2, 2, 2];
pub const N_PHONO: usize = 12;
pub const AUDIO_NOISE_STD: f64 = 0.05;
/// Spacing of audio frames, in video frames.
pub const AUDIO_HOP: f64 = 0.25;

/// Band-mixing matrix shared by all speakers, so the acoustic mapping
/// transfers to held-out speakers.
pub struct AcousticMap {
    weights: Vec<[f64; N_LATENT]>,
    offsets: Vec<f64>,
}

impl AcousticMap {
    pub fn new(global_seed: u64, n_features: usize) -> Self {
        let mut r = ChaCha8Rng::seed_from_u64(mix_seed(&[global_seed, 0xac0u64]));
        let w = Normal::new(0.0, 0.8).expect("finite std");
        let weights = (0..n_features).map(|_| std::array::from_fn(|_| w.sample(&mut r))).collect();
        let offsets = (0..n_features).map(|_| r.random_range(-1.0..1.0)).collect();
        Self { weights, offsets }
    }

    pub fn n_features(&self) -> usize {
        self.offsets.len()
    }

    /// Noise-free band energies for one state, scaled by a speaker gain.
    pub fn energies(&self, s: &ArticulatorState, gain: &[f64]) -> Vec<f64> {
        self.weights
            .iter()
            .zip(&self.offsets)
            .zip(gain)
            .map(|((w, b), g)| {
                let z: f64 = w.iter().zip(s).map(|(a, x)| a * x).sum::<f64>() + b;
                0.5 + 0.35 * g * z.sin()
            })
            .collect()
    }
}

/// Per-speaker band gains ("voice").
pub fn speaker_gain(sp: &SpeakerParams, n_features: usize) -> Vec<f64> {
    let mut r = ChaCha8Rng::seed_from_u64(mix_seed(&[sp.anatomy_seed, 0x9a1]));
    (0..n_features).map(|_| r.random_range(0.9..1.1)).collect()
}

/// `frames × n_features` feature window centred on video frame `t`.
pub fn audio_window<R: Rng>(map: &AcousticMap, sp: &SpeakerParams, t: f64, frames: usize, rng: &mut R) -> Vec<f32> {
    let gain = speaker_gain(sp, map.n_features());
    let noise = Normal::new(0.0, AUDIO_NOISE_STD).expect("finite std");
    let mut out = Vec::with_capacity(frames * map.n_features());
    for k in 0..frames {
        let tk = t + (k as f64 - (frames as f64 - 1.0) / 2.0) * AUDIO_HOP;
        for e in map.energies(&sp.state_at(tk), &gain) {
            out.push((e + noise.sample(rng)) as f32);
        }
    }
    out
}

/// Bin index of `x ∈ [-1, 1]` among `bins` equal-width bins.
pub fn bin_of(x: f64, bins: usize) -> usize {
    (((x + 1.0) / 2.0 * bins as f64).floor() as usize).min(bins - 1)
}

/// Multi-hot phonological vector: one active class per articulatory group.
pub fn phono_vector(s: &ArticulatorState) -> Vec<f32> {
    let mut v = vec![0f32; N_PHONO];
    let mut base = 0;
    for (i, &bins) in PHONO_GROUPS.iter().enumerate() {
        v[base + bin_of(s[i], bins)] = 1.0;
        base += bins;
    }
    v
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn phono_is_one_hot_per_group() {
        let v = phono_vector(&[-1.0, 0.0, 0.99, 1.0, -0.2]);
        assert_eq!(v.iter().sum::<f32>(), 5.0);
        assert_eq!(&v[0..3], &[1.0, 0.0, 0.0]);
        assert_eq!(&v[3..6], &[0.0, 1.0, 0.0]);
        assert_eq!(&v[6..8], &[0.0, 1.0]);
        assert_eq!(&v[8..10], &[0.0, 1.0]);
        assert_eq!(&v[10..12], &[1.0, 0.0]);
    }

    #[test]
    fn audio_window_shape() {
        let map = AcousticMap::new(1, 16);
        let sp = SpeakerParams::new(0, 1);
        let w = audio_window(&map, &sp, 10.0, 4, &mut ChaCha8Rng::seed_from_u64(0));
        assert_eq!(w.len(), 64);
        assert!(w.iter().all(|v| v.is_finite()));
    }
}
