//! The tri-modal segmentation network.
//!
//! Data flow for one batch of `B` frames:
//!
//! ```text
//! image  [B,1,H,W] -> patchify -> embed + pos -> encoder blocks -> image tokens [B·P, d]
//! audio  [B,T,F]   -> frozen projection + block              -> audio tokens [B·T, d]
//! phono  [B,K]     -> MLP                                     -> phono tokens [B, d]
//! audio + phono    -> projection (+ null placeholders)        -> memory tokens
//! image tokens     -> decoder (self-attn, cross-attn into memory, MLP) -> head -> logits [B,C,H,W]
//! ```
//!
//! Concat modes skip the memory and instead add a projection of the pooled
//! audio/phono vectors onto every image token before decoding.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::{FusionMode, ModelConfig};
use super::layers::{DecoderLayer, DecoderTrace, EncoderBlock, Linear, MemoryView, Mlp, Norm};
use super::params::{Ctx, ParamId, ParamStore};
use super::ModelError;
use crate::numcore::{Element, NumError, Tensor, Var};

/// Parameter-name prefix of the frozen audio encoder.
pub const AUDIO_PREFIX: &str = "audio.";
/// Parameter-name prefix of the image encoder.
pub const IMAGE_PREFIX: &str = "image.";

/// Host-side inputs for one batch.
#[derive(Clone, Debug)]
pub struct ModelInput {
    /// `[B, 1, H, W]`, values in `[0, 1]`.
    pub images: Tensor<f32>,
    /// `[B, T, n_audio_features]`; `None` for video-only inference.
    pub audio: Option<Tensor<f32>>,
    /// `[B, n_phono_classes]`; `None` for video-only inference.
    pub phono: Option<Tensor<f32>>,
}

impl ModelInput {
    pub fn batch_size(&self) -> usize {
        self.images.shape()[0]
    }

    /// The same frames with audio and phonology removed.
    pub fn video_only(&self) -> Self {
        Self {
            images: self.images.clone(),
            audio: None,
            phono: None,
        }
    }
}

/// Which non-image modalities a sample contributes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ModalityMask {
    pub audio: bool,
    pub phono: bool,
}

impl ModalityMask {
    pub const ALL: Self = Self { audio: true, phono: true };
    pub const NONE: Self = Self { audio: false, phono: false };

    /// Drops each modality independently with probability `p`.
    pub fn sample<R: Rng>(rng: &mut R, p: f64) -> Self {
        let audio = rng.random::<f64>() >= p;
        let phono = rng.random::<f64>() >= p;
        Self { audio, phono }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TokenKind {
    Audio,
    Phono,
    Null,
}

/// Fused audio+phonological tokens, stacked over the batch.
#[derive(Clone, Debug)]
pub struct MemoryTokens {
    /// `[Σ counts × d]`.
    pub tokens: Var,
    pub counts: Vec<usize>,
    pub kinds: Vec<Vec<TokenKind>>,
}

impl MemoryTokens {
    pub fn offsets(&self) -> Vec<usize> {
        self.counts
            .iter()
            .scan(0, |acc, &c| {
                let o = *acc;
                *acc += c;
                Some(o)
            })
            .collect()
    }
}

#[derive(Clone, Debug)]
pub struct ForwardOutput {
    pub batch: usize,
    /// `[B, C, H, W]`.
    pub logits: Var,
    /// Encoder output `[B·P × d]`.
    pub image_tokens: Var,
    /// `[B·T × d]`, present when audio was encoded.
    pub audio_tokens: Option<Var>,
    /// `[B × d]`, present when phonology was encoded.
    pub phono_tokens: Option<Var>,
    /// Decoder output `[B·P × d]`.
    pub decoded_tokens: Var,
    pub memory: Option<MemoryTokens>,
    pub masks: Vec<ModalityMask>,
    pub encoder_weights: Vec<Var>,
    pub trace: DecoderTrace,
}

/// L2-normalised contrastive embeddings, `[B × projection_dim]` each.
#[derive(Clone, Copy, Debug)]
pub struct GlobalEmbeddings {
    pub image: Var,
    pub audio: Var,
    pub phono: Var,
}

#[derive(Clone, Debug)]
struct ImageEncoder {
    patch: Linear,
    pos: ParamId,
    blocks: Vec<EncoderBlock>,
    norm: Norm,
}

#[derive(Clone, Debug)]
struct AudioEncoder {
    proj: Linear,
    block: EncoderBlock,
    norm: Norm,
}

#[derive(Clone, Debug)]
struct Fusion {
    image: Linear,
    audio: Linear,
    phono: Linear,
    null: ParamId,
}

#[derive(Clone, Debug)]
struct ContrastHeads {
    image_global: Mlp,
    audio_global: Mlp,
    phono_global: Mlp,
    image_local: Linear,
    memory_local: Linear,
}

#[derive(Clone, Debug)]
pub struct VocSegModel<T: Element = f32> {
    config: ModelConfig,
    pub params: ParamStore<T>,
    image: ImageEncoder,
    audio: AudioEncoder,
    phono: Mlp,
    memory_proj: Linear,
    memory_null: ParamId,
    fusion: Fusion,
    decoder: Vec<DecoderLayer>,
    head_norm: Norm,
    head: Linear,
    contrast: ContrastHeads,
}

impl<T: Element> VocSegModel<T> {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self, ModelError> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut s = ParamStore::new();
        let d = config.d_model;
        let hidden = d * config.mlp_ratio;
        let eps = config.layernorm_eps;
        let p2 = config.patch_size * config.patch_size;
        let rng = &mut rng;

        let image = ImageEncoder {
            patch: Linear::new(&mut s, "image.patch", p2, d, false, rng),
            pos: s.add("image.pos", Tensor::randn(&[config.n_patches(), d], 0.02, rng), false),
            blocks: (0..config.n_encoder_layers)
                .map(|i| EncoderBlock::new(&mut s, &format!("image.block{i}"), d, config.n_heads, hidden, eps, false, rng))
                .collect(),
            norm: Norm::new(&mut s, "image.norm", d, eps, false),
        };
        let audio = AudioEncoder {
            proj: Linear::new(&mut s, "audio.proj", config.n_audio_features, d, true, rng),
            block: EncoderBlock::new(&mut s, "audio.block0", d, config.n_heads, hidden, eps, true, rng),
            norm: Norm::new(&mut s, "audio.norm", d, eps, true),
        };
        let phono = Mlp::new(&mut s, "phono.mlp", config.n_phono_classes, d, d, false, rng);
        let memory_proj = Linear::new(&mut s, "memory.proj", d, d, false, rng);
        let memory_null = s.add("memory.null", Tensor::randn(&[2, d], 0.02, rng), false);
        let fusion = Fusion {
            image: Linear::new(&mut s, "fusion.image", d, d, false, rng),
            audio: Linear::new(&mut s, "fusion.audio", d, d, false, rng),
            phono: Linear::new(&mut s, "fusion.phono", d, d, false, rng),
            null: s.add("fusion.null", Tensor::randn(&[2, d], 0.02, rng), false),
        };
        let decoder = (0..config.n_decoder_layers)
            .map(|i| DecoderLayer::new(&mut s, &format!("decoder.layer{i}"), d, config.n_heads, hidden, eps, rng))
            .collect();
        let head_norm = Norm::new(&mut s, "head.norm", d, eps, false);
        let head = Linear::new(&mut s, "head.proj", d, config.n_seg_classes * p2, false, rng);
        let k = config.projection_dim;
        let contrast = ContrastHeads {
            image_global: Mlp::new(&mut s, "contrast.image_global", d, d, k, false, rng),
            audio_global: Mlp::new(&mut s, "contrast.audio_global", d, d, k, false, rng),
            phono_global: Mlp::new(&mut s, "contrast.phono_global", d, d, k, false, rng),
            image_local: Linear::new(&mut s, "contrast.image_local", d, k, false, rng),
            memory_local: Linear::new(&mut s, "contrast.memory_local", d, k, false, rng),
        };
        Ok(Self {
            config,
            params: s,
            image,
            audio,
            phono,
            memory_proj,
            memory_null,
            fusion,
            decoder,
            head_norm,
            head,
            contrast,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn fusion_mode(&self) -> FusionMode {
        self.config.fusion_mode
    }

    pub fn set_fusion_mode(&mut self, mode: FusionMode) {
        self.config.fusion_mode = mode;
    }

    /// Same architecture and values in another precision.
    pub fn cast<U: Element>(&self) -> VocSegModel<U> {
        VocSegModel {
            config: self.config.clone(),
            params: self.params.cast(),
            image: self.image.clone(),
            audio: self.audio.clone(),
            phono: self.phono.clone(),
            memory_proj: self.memory_proj.clone(),
            memory_null: self.memory_null,
            fusion: self.fusion.clone(),
            decoder: self.decoder.clone(),
            head_norm: self.head_norm.clone(),
            head: self.head.clone(),
            contrast: self.contrast.clone(),
        }
    }

    pub fn n_image_blocks(&self) -> usize {
        self.image.blocks.len()
    }

    pub fn ctx(&self) -> Ctx<'_, T> {
        Ctx::new(&self.params)
    }

    fn input<const N: usize>(ctx: &mut Ctx<'_, T>, t: &Tensor<f32>, shape: [usize; N]) -> Result<Var, ModelError> {
        if t.shape() != shape {
            return Err(ModelError::Shape(format!("expected input shape {:?}, got {:?}", shape, t.shape())));
        }
        Ok(ctx.tape.constant(t.cast()))
    }

    /// Patch tokens for a batch of frames `[B,1,H,W] → [B·P × d]`.
    pub fn encode_image(&self, ctx: &mut Ctx<'_, T>, images: &Tensor<f32>, trace: &mut Vec<Var>) -> Result<Var, ModelError> {
        let c = &self.config;
        let b = images.shape().first().copied().unwrap_or(0);
        let (p, g) = (c.patch_size, c.grid());
        let x = Self::input(ctx, images, [b, 1, c.image_size, c.image_size])?;
        if images.data().iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(ModelError::Shape("image values must lie in [0, 1]".into()));
        }
        let t = &mut ctx.tape;
        let x = t.reshape(x, &[b, g, p, g, p])?;
        let x = t.permute(x, &[0, 1, 3, 2, 4])?;
        let x = t.reshape(x, &[b * g * g, p * p])?;
        let x = self.image.patch.forward(ctx, x)?;
        let x = ctx.tape.reshape(x, &[b, g * g, c.d_model])?;
        let pos = ctx.p(self.image.pos);
        let x = ctx.tape.add(x, pos)?;
        let mut x = ctx.tape.reshape(x, &[b * g * g, c.d_model])?;
        for block in &self.image.blocks {
            x = block.forward(ctx, x, b, trace)?;
        }
        Ok(self.image.norm.forward(ctx, x)?)
    }

    /// Frozen audio encoder `[B,T,F] → [B·T × d]`.
    pub fn encode_audio(&self, ctx: &mut Ctx<'_, T>, audio: &Tensor<f32>) -> Result<Var, ModelError> {
        let s = audio.shape();
        if s.len() != 3 || s[1] == 0 {
            return Err(ModelError::Shape(format!("audio must be [B, T>=1, F], got {s:?}")));
        }
        let (b, tlen) = (s[0], s[1]);
        let x = Self::input(ctx, audio, [b, tlen, self.config.n_audio_features])?;
        let x = ctx.tape.reshape(x, &[b * tlen, self.config.n_audio_features])?;
        let x = self.audio.proj.forward(ctx, x)?;
        let mut scratch = Vec::new();
        let x = self.audio.block.forward(ctx, x, b, &mut scratch)?;
        Ok(self.audio.norm.forward(ctx, x)?)
    }

    /// Phonological MLP `[B,K] → [B × d]`.
    pub fn encode_phono(&self, ctx: &mut Ctx<'_, T>, phono: &Tensor<f32>) -> Result<Var, ModelError> {
        let b = phono.shape().first().copied().unwrap_or(0);
        let x = Self::input(ctx, phono, [b, self.config.n_phono_classes])?;
        Ok(self.phono.forward(ctx, x)?)
    }

    /// Assembles per-sample memory: projected audio tokens, then the projected
    /// phonological token; each missing modality becomes one learned null
    /// token.
    pub fn build_memory(
        &self,
        ctx: &mut Ctx<'_, T>,
        audio_tokens: Option<Var>,
        phono_tokens: Option<Var>,
        masks: &[ModalityMask],
    ) -> Result<MemoryTokens, ModelError> {
        let b = masks.len();
        let d = self.config.d_model;
        let audio = match audio_tokens {
            Some(a) => Some(self.memory_proj.forward(ctx, a)?),
            None => None,
        };
        let phono = match phono_tokens {
            Some(p) => Some(self.memory_proj.forward(ctx, p)?),
            None => None,
        };
        let t_audio = audio.map(|a| ctx.tape.shape(a)[0] / b.max(1));
        let has_a = |m: &ModalityMask| m.audio && audio.is_some();
        let has_p = |m: &ModalityMask| m.phono && phono.is_some();

        let mut kinds = Vec::with_capacity(b);
        for m in masks {
            let mut k = Vec::new();
            match (has_a(m), t_audio) {
                (true, Some(t)) => k.extend(std::iter::repeat_n(TokenKind::Audio, t)),
                _ => k.push(TokenKind::Null),
            }
            k.push(if has_p(m) { TokenKind::Phono } else { TokenKind::Null });
            kinds.push(k);
        }
        let counts: Vec<usize> = kinds.iter().map(Vec::len).collect();

        let tokens = if let (Some(a), Some(p), true) = (audio, phono, masks.iter().all(|m| has_a(m) && has_p(m))) {
            let t = t_audio.unwrap_or(1);
            let a3 = ctx.tape.reshape(a, &[b, t, d])?;
            let p3 = ctx.tape.reshape(p, &[b, 1, d])?;
            let m = ctx.tape.concat(&[a3, p3], 1)?;
            ctx.tape.reshape(m, &[b * (t + 1), d])?
        } else {
            let table = ctx.p(self.memory_null);
            let mut pieces = Vec::with_capacity(2 * b);
            for (i, m) in masks.iter().enumerate() {
                match (audio, t_audio) {
                    (Some(a), Some(t)) if has_a(m) => pieces.push(ctx.tape.slice(a, 0, i * t, t)?),
                    _ => pieces.push(ctx.tape.embedding(table, &[0])?),
                }
                match phono {
                    Some(p) if has_p(m) => pieces.push(ctx.tape.slice(p, 0, i, 1)?),
                    _ => pieces.push(ctx.tape.embedding(table, &[1])?),
                }
            }
            ctx.tape.concat(&pieces, 0)?
        };
        Ok(MemoryTokens { tokens, counts, kinds })
    }

    /// Runs the decoder over image tokens; cross-attention is used only when
    /// `memory` is given.
    pub fn decode(
        &self,
        ctx: &mut Ctx<'_, T>,
        image_tokens: Var,
        batch: usize,
        memory: Option<&MemoryTokens>,
        trace: &mut DecoderTrace,
    ) -> Result<Var, ModelError> {
        let view = memory.map(|m| MemoryView {
            tokens: m.tokens,
            counts: &m.counts,
        });
        let mut x = image_tokens;
        for layer in &self.decoder {
            x = layer.forward(ctx, x, batch, view.as_ref(), trace)?;
        }
        Ok(x)
    }

    /// Linear patch head `[B·P × d] → [B, C, H, W]`.
    pub fn segment(&self, ctx: &mut Ctx<'_, T>, decoded: Var, batch: usize) -> Result<Var, ModelError> {
        let c = &self.config;
        let (p, g, k) = (c.patch_size, c.grid(), c.n_seg_classes);
        let x = self.head_norm.forward(ctx, decoded)?;
        let x = self.head.forward(ctx, x)?;
        let t = &mut ctx.tape;
        let x = t.reshape(x, &[batch, g, g, k, p, p])?;
        let x = t.permute(x, &[0, 3, 1, 4, 2, 5])?;
        Ok(t.reshape(x, &[batch, k, c.image_size, c.image_size])?)
    }

    /// Concat fusion: `W [x; a; p] = W_x x + W_a a + W_p p` applied to every
    /// image token, with pooled audio and the phonological token broadcast
    /// over the patches of their sample.
    fn concat_fuse(
        &self,
        ctx: &mut Ctx<'_, T>,
        image_tokens: Var,
        audio_tokens: Option<Var>,
        phono_tokens: Option<Var>,
        masks: &[ModalityMask],
    ) -> Result<Var, ModelError> {
        let mode = self.config.fusion_mode;
        let b = masks.len();
        let d = self.config.d_model;
        let np = self.config.n_patches();
        let x = self.fusion.image.forward(ctx, image_tokens)?;
        let mut extra: Option<Var> = None;
        if mode.uses_audio() {
            let pooled = match audio_tokens {
                Some(a) => {
                    let t = ctx.tape.shape(a)[0] / b;
                    let a3 = ctx.tape.reshape(a, &[b, t, d])?;
                    Some(ctx.tape.mean_axis(a3, 1)?)
                }
                None => None,
            };
            let rows = self.select_rows(ctx, pooled, masks.iter().map(|m| m.audio).collect(), 0)?;
            let y = self.fusion.audio.forward(ctx, rows)?;
            extra = Some(y);
        }
        if mode.uses_phono() {
            let rows = self.select_rows(ctx, phono_tokens, masks.iter().map(|m| m.phono).collect(), 1)?;
            let y = self.fusion.phono.forward(ctx, rows)?;
            extra = Some(match extra {
                Some(e) => ctx.tape.add(e, y)?,
                None => y,
            });
        }
        let x3 = ctx.tape.reshape(x, &[b, np, d])?;
        let fused = match extra {
            Some(e) => {
                let e3 = ctx.tape.reshape(e, &[b, 1, d])?;
                ctx.tape.add(x3, e3)?
            }
            None => x3,
        };
        Ok(ctx.tape.reshape(fused, &[b * np, d])?)
    }

    /// `[B × d]` rows taken from `source` where `present`, else the null row.
    fn select_rows(&self, ctx: &mut Ctx<'_, T>, source: Option<Var>, present: Vec<bool>, null_row: usize) -> Result<Var, ModelError> {
        if let (Some(s), true) = (source, present.iter().all(|&p| p)) {
            return Ok(s);
        }
        let table = ctx.p(self.fusion.null);
        let mut rows = Vec::with_capacity(present.len());
        for (i, &p) in present.iter().enumerate() {
            rows.push(match source {
                Some(s) if p => ctx.tape.slice(s, 0, i, 1)?,
                _ => ctx.tape.embedding(table, &[null_row])?,
            });
        }
        Ok(ctx.tape.concat(&rows, 0)?)
    }

    /// Full forward pass. `masks` (one per sample) selects which modalities
    /// each sample contributes; `None` means all available. Encoders for
    /// audio/phonology also run when `need_aux` is set (contrastive training)
    /// even if the fusion mode ignores them.
    pub fn forward(&self, ctx: &mut Ctx<'_, T>, input: &ModelInput, masks: Option<&[ModalityMask]>, need_aux: bool) -> Result<ForwardOutput, ModelError> {
        let b = input.batch_size();
        if b == 0 {
            return Err(ModelError::Shape("empty batch".into()));
        }
        let mode = self.config.fusion_mode;
        let masks: Vec<ModalityMask> = match masks {
            Some(m) if m.len() != b => return Err(ModelError::Shape(format!("{} modality masks for batch of {b}", m.len()))),
            Some(m) => m.to_vec(),
            None => vec![ModalityMask::ALL; b],
        };
        for (name, t) in [("audio", &input.audio), ("phono", &input.phono)] {
            if let Some(t) = t {
                if t.shape().first() != Some(&b) {
                    return Err(ModelError::Shape(format!("{name} batch {:?} does not match {b} frames", t.shape())));
                }
            }
        }

        let mut encoder_weights = Vec::new();
        let image_tokens = self.encode_image(ctx, &input.images, &mut encoder_weights)?;
        let audio_tokens = match &input.audio {
            Some(a) if mode.uses_audio() || need_aux => Some(self.encode_audio(ctx, a)?),
            _ => None,
        };
        let phono_tokens = match &input.phono {
            Some(p) if mode.uses_phono() || need_aux => Some(self.encode_phono(ctx, p)?),
            _ => None,
        };
        let effective: Vec<ModalityMask> = masks
            .iter()
            .map(|m| ModalityMask {
                audio: m.audio && audio_tokens.is_some() && mode.uses_audio(),
                phono: m.phono && phono_tokens.is_some() && mode.uses_phono(),
            })
            .collect();

        let memory = if mode == FusionMode::CrossAttention || need_aux {
            let mem_masks: Vec<ModalityMask> = if mode == FusionMode::CrossAttention {
                effective.clone()
            } else {
                masks
                    .iter()
                    .map(|m| ModalityMask {
                        audio: m.audio && audio_tokens.is_some(),
                        phono: m.phono && phono_tokens.is_some(),
                    })
                    .collect()
            };
            Some(self.build_memory(ctx, audio_tokens, phono_tokens, &mem_masks)?)
        } else {
            None
        };

        let decoder_in = if mode.is_concat() {
            self.concat_fuse(ctx, image_tokens, audio_tokens, phono_tokens, &effective)?
        } else {
            image_tokens
        };
        let mut trace = DecoderTrace::default();
        let cross = if mode == FusionMode::CrossAttention { memory.as_ref() } else { None };
        let decoded = self.decode(ctx, decoder_in, b, cross, &mut trace)?;
        let logits = self.segment(ctx, decoded, b)?;
        Ok(ForwardOutput {
            batch: b,
            logits,
            image_tokens,
            audio_tokens,
            phono_tokens,
            decoded_tokens: decoded,
            memory,
            masks: effective,
            encoder_weights,
            trace,
        })
    }

    /// Pooled, projected and L2-normalised embeddings for the global
    /// contrastive term. `None` when audio or phonology was not encoded.
    pub fn project_global(&self, ctx: &mut Ctx<'_, T>, out: &ForwardOutput) -> Result<Option<GlobalEmbeddings>, ModelError> {
        let (Some(a), Some(p)) = (out.audio_tokens, out.phono_tokens) else {
            return Ok(None);
        };
        let b = out.batch;
        let d = self.config.d_model;
        let img = ctx.tape.reshape(out.image_tokens, &[b, self.config.n_patches(), d])?;
        let img = ctx.tape.mean_axis(img, 1)?;
        let t = ctx.tape.shape(a)[0] / b;
        let aud = ctx.tape.reshape(a, &[b, t, d])?;
        let aud = ctx.tape.mean_axis(aud, 1)?;
        let img = self.contrast.image_global.forward(ctx, img)?;
        let aud = self.contrast.audio_global.forward(ctx, aud)?;
        let phon = self.contrast.phono_global.forward(ctx, p)?;
        Ok(Some(GlobalEmbeddings {
            image: l2_normalize(ctx, img)?,
            audio: l2_normalize(ctx, aud)?,
            phono: l2_normalize(ctx, phon)?,
        }))
    }

    /// Per-token L2-normalised projections for the local contrastive term:
    /// image tokens `[B·P × k]` and memory tokens `[Σ M × k]`.
    pub fn project_local(&self, ctx: &mut Ctx<'_, T>, out: &ForwardOutput) -> Result<Option<(Var, Var)>, ModelError> {
        let Some(mem) = &out.memory else {
            return Ok(None);
        };
        let img = self.contrast.image_local.forward(ctx, out.image_tokens)?;
        let m = self.contrast.memory_local.forward(ctx, mem.tokens)?;
        Ok(Some((l2_normalize(ctx, img)?, l2_normalize(ctx, m)?)))
    }
}

/// Row-wise L2 normalisation of a `[n × k]` matrix.
pub fn l2_normalize<T: Element>(ctx: &mut Ctx<'_, T>, x: Var) -> Result<Var, NumError> {
    let n = ctx.tape.shape(x)[0];
    let sq = ctx.tape.mul(x, x)?;
    let s = ctx.tape.sum_axis(sq, 1)?;
    let s = ctx.tape.reshape(s, &[n, 1])?;
    let s = ctx.tape.affine(s, 1.0, 1e-12)?;
    let r = ctx.tape.powf(s, -0.5)?;
    ctx.tape.mul(x, r)
}

/// Per-pixel argmax over classes of `[B, C, H, W]` logits; ties go to the
/// lower class index.
pub fn argmax_masks<T: Element>(logits: &Tensor<T>) -> Vec<Vec<u8>> {
    let s = logits.shape();
    let (b, c, hw) = (s[0], s[1], s[2] * s[3]);
    let data = logits.data();
    (0..b)
        .map(|i| {
            (0..hw)
                .map(|px| {
                    let mut best = 0usize;
                    let mut best_v = data[i * c * hw + px];
                    for k in 1..c {
                        let v = data[(i * c + k) * hw + px];
                        if v > best_v {
                            best = k;
                            best_v = v;
                        }
                    }
                    best as u8
                })
                .collect()
        })
        .collect()
}
