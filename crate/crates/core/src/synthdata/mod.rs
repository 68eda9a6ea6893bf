//! Synthetic multimodal rtMRI-like data: per-speaker anatomy and motion,
//! rendered frames with label masks, acoustic feature windows and
//! phonological vectors, plus augmentation, preprocessing, dataset files and
//! leave-one-speaker-out splits.

mod augment;
mod dataset;
mod modalities;
mod preprocess;
mod probe;
mod render;

pub use augment::{augment, AugmentParams};
pub use dataset::{
    generate_dataset, read_dataset, split_loso, write_dataset, Dataset, DatasetManifest, Fold, RecordEntry, SpeakerEntry, MANIFEST_FILE,
    VALIDATION_FRACTION,
};
pub use modalities::{audio_window, bin_of, phono_vector, speaker_gain, AcousticMap, AUDIO_HOP, N_PHONO, PHONO_GROUPS};
pub use preprocess::{min_max_normalize, preprocess, resize_bilinear, resize_nearest, spacing_for, IntensityRange};
pub use probe::{audio_probe_errors, tongue_centroid, ProbeReport};
pub use render::{geometry, label_at, render_clean, Anatomy, ArticulatorState, Ellipse, Geometry, Motion, SpeakerParams, N_LATENT};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::metrics::{LabelMask, SOURCE_SPACING_MM};
use crate::numcore::Tensor;

/// Side length of generated frames, matching the source acquisition.
pub const RAW_SIZE: usize = 84;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("invalid generator config: {0}")]
    Config(String),
    #[error("unknown speaker {0}")]
    UnknownSpeaker(u32),
    #[error("leave-one-speaker-out needs at least 3 speakers, got {0}")]
    TooFewSpeakers(usize),
    #[error("dataset format: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GeneratorConfig {
    pub n_speakers: usize,
    pub frames_per_speaker: usize,
    /// Augmented copies stored per original frame.
    pub augmentations: usize,
    pub seed: u64,
    /// Audio frames per video frame.
    pub audio_frames: usize,
    pub n_audio_features: usize,
    pub noise_std: f64,
    /// Probability that a frame carries a signal-void band.
    pub occlusion_p: f64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            n_speakers: 5,
            frames_per_speaker: 100,
            augmentations: 2,
            seed: 17,
            audio_frames: 4,
            n_audio_features: 16,
            noise_std: 0.07,
            occlusion_p: 0.35,
        }
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<(), DataError> {
        let bad = |m: &str| Err(DataError::Config(m.into()));
        if self.n_speakers == 0 || self.frames_per_speaker == 0 {
            return bad("speakers and frames per speaker must be positive");
        }
        if self.audio_frames == 0 || self.n_audio_features == 0 {
            return bad("audio window must be non-empty");
        }
        if !(self.noise_std >= 0.0) || !self.noise_std.is_finite() {
            return bad("noise_std must be finite and >= 0");
        }
        if !(0.0..=1.0).contains(&self.occlusion_p) {
            return bad("occlusion_p must lie in [0, 1]");
        }
        Ok(())
    }

    pub fn total_samples(&self) -> usize {
        self.n_speakers * self.frames_per_speaker * (1 + self.augmentations)
    }
}

/// One frame with its aligned modalities.
#[derive(Clone, Debug, PartialEq)]
pub struct MultimodalSample {
    pub speaker: u32,
    pub frame: u32,
    /// 0 for the original frame, `k` for the k-th augmented copy.
    pub augmentation: u32,
    /// `[1, H, W]`.
    pub image: Tensor<f32>,
    pub mask: LabelMask,
    /// `[T, n_audio_features]`.
    pub audio: Tensor<f32>,
    /// Multi-hot, `[n_phono_classes]`.
    pub phono: Tensor<f32>,
}

impl MultimodalSample {
    pub fn size(&self) -> usize {
        self.mask.width()
    }
}

/// Deterministic 64-bit mix of several values (SplitMix64 finaliser).
pub fn mix_seed(parts: &[u64]) -> u64 {
    let mut h = 0x9e37_79b9_7f4a_7c15u64;
    for &p in parts {
        h ^= p.wrapping_add(0x9e37_79b9_7f4a_7c15).wrapping_add(h << 6).wrapping_add(h >> 2);
        let mut z = h;
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        h = z ^ (z >> 31);
    }
    h
}

/// Renders frame `t` of speaker `sp`. A pure function of its arguments.
pub fn generate_frame(sp: &SpeakerParams, t: u32, cfg: &GeneratorConfig) -> MultimodalSample {
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(&[cfg.seed, sp.id as u64, t as u64]));
    let state = sp.state_at(t as f64);
    let g = geometry(&sp.anatomy, &state);
    let (clean, mask) = render_clean(&sp.anatomy, &g);
    let image = render::degrade(&sp.anatomy, &clean, cfg.noise_std, cfg.occlusion_p, &mut rng);
    let map = AcousticMap::new(cfg.seed, cfg.n_audio_features);
    let audio = audio_window(&map, sp, t as f64, cfg.audio_frames, &mut rng);
    MultimodalSample {
        speaker: sp.id,
        frame: t,
        augmentation: 0,
        image: Tensor::new(&[1, RAW_SIZE, RAW_SIZE], image).expect("raw frame shape"),
        mask: LabelMask::new(RAW_SIZE, RAW_SIZE, mask, SOURCE_SPACING_MM).expect("raw mask shape"),
        audio: Tensor::new(&[cfg.audio_frames, cfg.n_audio_features], audio).expect("audio shape"),
        phono: Tensor::new(&[N_PHONO], phono_vector(&state)).expect("phono shape"),
    }
}
