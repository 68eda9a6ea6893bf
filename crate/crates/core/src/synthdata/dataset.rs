//! In-memory datasets, their on-disk layout (`manifest.json` plus one blob of
//! tensors per speaker) and leave-one-speaker-out splits.

use std::fs::File;
use std::io::{BufReader, BufWriter, Seek, SeekFrom, Write};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{augment, generate_frame, mix_seed, AugmentParams, DataError, GeneratorConfig, IntensityRange, MultimodalSample, SpeakerParams, N_PHONO, RAW_SIZE};
use crate::metrics::{LabelMask, CLASS_NAMES, SOURCE_SPACING_MM};
use crate::numcore::{read_tensor, read_u8_raster, write_tensor, write_u8_raster, Tensor};

pub const MANIFEST_FILE: &str = "manifest.json";
const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RecordEntry {
    pub frame: u32,
    pub augmentation: u32,
    /// Byte offset of the record within the speaker blob.
    pub offset: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpeakerEntry {
    pub id: u32,
    pub frames: usize,
    pub file: String,
    pub records: Vec<RecordEntry>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub version: u32,
    pub seed: u64,
    pub generator: GeneratorConfig,
    pub raw_size: usize,
    pub spacing_mm: f64,
    pub class_names: Vec<String>,
    pub n_phono_classes: usize,
    pub intensity_range: IntensityRange,
    pub speakers: Vec<SpeakerEntry>,
}

impl DatasetManifest {
    pub fn total_samples(&self) -> usize {
        self.speakers.iter().map(|s| s.records.len()).sum()
    }
}

/// Raw-resolution samples, ordered by speaker, frame, then augmentation.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub manifest: DatasetManifest,
    pub samples: Vec<MultimodalSample>,
}

impl Dataset {
    pub fn speakers(&self) -> Vec<u32> {
        self.manifest.speakers.iter().map(|s| s.id).collect()
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Pixel count of each class over the original (non-augmented) frames.
    pub fn class_pixel_counts(&self) -> Vec<usize> {
        let mut counts = vec![0usize; self.manifest.class_names.len()];
        for s in self.samples.iter().filter(|s| s.augmentation == 0) {
            for &v in s.mask.values() {
                counts[v as usize] += 1;
            }
        }
        counts
    }
}

/// Generates every speaker's frames and augmented copies in memory.
pub fn generate_dataset(cfg: &GeneratorConfig) -> Result<Dataset, DataError> {
    cfg.validate()?;
    let mut samples = Vec::with_capacity(cfg.total_samples());
    let mut speakers = Vec::with_capacity(cfg.n_speakers);
    for id in 0..cfg.n_speakers as u32 {
        let sp = SpeakerParams::new(id, cfg.seed);
        let mut records = Vec::new();
        for t in 0..cfg.frames_per_speaker as u32 {
            let base = generate_frame(&sp, t, cfg);
            let copies: Vec<MultimodalSample> = (1..=cfg.augmentations as u32)
                .map(|k| {
                    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(&[cfg.seed, 0xa06, id as u64, t as u64, k as u64]));
                    let mut aug = augment(&base, &AugmentParams::sample(&mut rng));
                    aug.augmentation = k;
                    aug
                })
                .collect();
            for s in std::iter::once(base).chain(copies) {
                records.push(RecordEntry {
                    frame: t,
                    augmentation: s.augmentation,
                    offset: 0,
                });
                samples.push(s);
            }
        }
        speakers.push(SpeakerEntry {
            id,
            frames: cfg.frames_per_speaker,
            file: format!("speaker_{id:02}.bin"),
            records,
        });
    }
    let intensity_range = IntensityRange::of(samples.iter().map(|s| s.image.data()));
    Ok(Dataset {
        manifest: DatasetManifest {
            version: FORMAT_VERSION,
            seed: cfg.seed,
            generator: cfg.clone(),
            raw_size: RAW_SIZE,
            spacing_mm: SOURCE_SPACING_MM,
            class_names: CLASS_NAMES.iter().map(|s| s.to_string()).collect(),
            n_phono_classes: N_PHONO,
            intensity_range,
            speakers,
        },
        samples,
    })
}

fn fmt_err(e: impl std::fmt::Display) -> DataError {
    DataError::Format(e.to_string())
}

/// Writes the blobs and manifest; offsets in the manifest are filled in.
pub fn write_dataset(dataset: &mut Dataset, dir: &Path) -> Result<(), DataError> {
    std::fs::create_dir_all(dir)?;
    let mut cursor = 0;
    for entry in &mut dataset.manifest.speakers {
        let mut w = BufWriter::new(File::create(dir.join(&entry.file))?);
        let mut offset = 0u64;
        for rec in &mut entry.records {
            let s = &dataset.samples[cursor];
            cursor += 1;
            rec.offset = offset;
            let mut buf = Vec::new();
            write_tensor(&mut buf, &s.image).map_err(fmt_err)?;
            write_u8_raster(&mut buf, &[s.mask.height(), s.mask.width()], s.mask.values()).map_err(fmt_err)?;
            write_tensor(&mut buf, &s.audio).map_err(fmt_err)?;
            write_tensor(&mut buf, &s.phono).map_err(fmt_err)?;
            w.write_all(&buf)?;
            offset += buf.len() as u64;
        }
        w.flush()?;
    }
    let json = serde_json::to_vec_pretty(&dataset.manifest).map_err(fmt_err)?;
    std::fs::write(dir.join(MANIFEST_FILE), json)?;
    Ok(())
}

pub fn read_dataset(dir: &Path) -> Result<Dataset, DataError> {
    let manifest_path = dir.join(MANIFEST_FILE);
    let bytes = std::fs::read(&manifest_path).map_err(|e| DataError::Format(format!("{}: {e}", manifest_path.display())))?;
    let manifest: DatasetManifest = serde_json::from_slice(&bytes).map_err(fmt_err)?;
    if manifest.version != FORMAT_VERSION {
        return Err(DataError::Format(format!("unsupported dataset version {}", manifest.version)));
    }
    let mut samples = Vec::with_capacity(manifest.total_samples());
    for entry in &manifest.speakers {
        let mut r = BufReader::new(File::open(dir.join(&entry.file))?);
        for rec in &entry.records {
            r.seek(SeekFrom::Start(rec.offset))?;
            let image: Tensor<f32> = read_tensor(&mut r).map_err(fmt_err)?;
            let (shape, values) = read_u8_raster(&mut r).map_err(fmt_err)?;
            let audio: Tensor<f32> = read_tensor(&mut r).map_err(fmt_err)?;
            let phono: Tensor<f32> = read_tensor(&mut r).map_err(fmt_err)?;
            let [h, w] = shape[..] else {
                return Err(DataError::Format(format!("mask shape {shape:?}")));
            };
            if image.shape() != [1, h, w] {
                return Err(DataError::Format(format!("image shape {:?} vs mask {h}x{w}", image.shape())));
            }
            let mask = LabelMask::new(w, h, values, manifest.spacing_mm).map_err(fmt_err)?;
            mask.check_classes(manifest.class_names.len()).map_err(fmt_err)?;
            samples.push(MultimodalSample {
                speaker: entry.id,
                frame: rec.frame,
                augmentation: rec.augmentation,
                image,
                mask,
                audio,
                phono,
            });
        }
    }
    Ok(Dataset { manifest, samples })
}

/// Index sets (into `Dataset::samples`) of one leave-one-speaker-out fold.
#[derive(Clone, Debug, PartialEq)]
pub struct Fold {
    pub held_out: u32,
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
    pub test: Vec<usize>,
}

/// Fraction of each training speaker's frames held back for validation.
pub const VALIDATION_FRACTION: f64 = 0.15;

/// Test: every original frame of `held_out`. Validation: the last 15% of
/// each other speaker's original frames. Train: the remaining frames of the
/// other speakers with their augmented copies.
pub fn split_loso(dataset: &Dataset, held_out: u32) -> Result<Fold, DataError> {
    let speakers = &dataset.manifest.speakers;
    if speakers.len() < 3 {
        return Err(DataError::TooFewSpeakers(speakers.len()));
    }
    if !speakers.iter().any(|s| s.id == held_out) {
        return Err(DataError::UnknownSpeaker(held_out));
    }
    let mut fold = Fold {
        held_out,
        train: Vec::new(),
        validation: Vec::new(),
        test: Vec::new(),
    };
    for (i, s) in dataset.samples.iter().enumerate() {
        let entry = speakers.iter().find(|e| e.id == s.speaker).ok_or(DataError::UnknownSpeaker(s.speaker))?;
        let n_val = ((entry.frames as f64 * VALIDATION_FRACTION).round() as usize).max(1);
        let first_val = entry.frames.saturating_sub(n_val) as u32;
        if s.speaker == held_out {
            if s.augmentation == 0 {
                fold.test.push(i);
            }
        } else if s.frame >= first_val {
            if s.augmentation == 0 {
                fold.validation.push(i);
            }
        } else {
            fold.train.push(i);
        }
    }
    Ok(fold)
}
