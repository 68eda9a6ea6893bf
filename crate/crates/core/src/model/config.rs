use serde::{Deserialize, Serialize};

use super::ModelError;

/// How the non-image modalities reach the decoder.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum FusionMode {
    /// Video only; the decoder runs self-attention alone.
    #[serde(rename = "image_only")]
    ImageOnly,
    /// Mean-pooled audio concatenated onto every image token.
    #[serde(rename = "concat_va")]
    ConcatVA,
    /// Phonological token concatenated onto every image token.
    #[serde(rename = "concat_vp")]
    ConcatVP,
    #[serde(rename = "concat_vap")]
    ConcatVAP,
    /// Image tokens query the fused memory tokens through cross-attention.
    #[serde(rename = "cross_attention")]
    CrossAttention,
}

impl FusionMode {
    pub const ALL: [FusionMode; 5] = [
        FusionMode::ImageOnly,
        FusionMode::ConcatVA,
        FusionMode::ConcatVP,
        FusionMode::ConcatVAP,
        FusionMode::CrossAttention,
    ];

    pub fn uses_audio(self) -> bool {
        matches!(self, Self::ConcatVA | Self::ConcatVAP | Self::CrossAttention)
    }

    pub fn uses_phono(self) -> bool {
        matches!(self, Self::ConcatVP | Self::ConcatVAP | Self::CrossAttention)
    }

    pub fn is_concat(self) -> bool {
        matches!(self, Self::ConcatVA | Self::ConcatVP | Self::ConcatVAP)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub image_size: usize,
    pub patch_size: usize,
    pub d_model: usize,
    pub n_heads: usize,
    pub n_encoder_layers: usize,
    pub n_decoder_layers: usize,
    /// Hidden width of every Transformer MLP as a multiple of `d_model`.
    pub mlp_ratio: usize,
    pub n_audio_features: usize,
    pub n_phono_classes: usize,
    pub n_seg_classes: usize,
    pub fusion_mode: FusionMode,
    pub modality_dropout_p: f64,
    /// Width of the contrastive projection space.
    pub projection_dim: usize,
    pub layernorm_eps: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            image_size: 64,
            patch_size: 8,
            d_model: 64,
            n_heads: 4,
            n_encoder_layers: 2,
            n_decoder_layers: 2,
            mlp_ratio: 2,
            n_audio_features: 16,
            n_phono_classes: 12,
            n_seg_classes: 5,
            fusion_mode: FusionMode::CrossAttention,
            modality_dropout_p: 0.25,
            projection_dim: 32,
            layernorm_eps: 1e-5,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        let fail = |m: String| Err(ModelError::Config(m));
        if self.patch_size == 0 || self.image_size == 0 || self.image_size % self.patch_size != 0 {
            return fail(format!(
                "image_size {} must be a positive multiple of patch_size {}",
                self.image_size, self.patch_size
            ));
        }
        if self.n_heads == 0 || self.d_model == 0 || self.d_model % self.n_heads != 0 {
            return fail(format!("d_model {} must be divisible by n_heads {}", self.d_model, self.n_heads));
        }
        if self.n_seg_classes < 2 {
            return fail("n_seg_classes must be at least 2 (class 0 is background)".into());
        }
        if self.n_seg_classes > 256 {
            return fail("n_seg_classes must fit in a u8 mask".into());
        }
        if self.n_audio_features == 0 || self.n_phono_classes == 0 || self.mlp_ratio == 0 {
            return fail("feature widths must be positive".into());
        }
        if self.projection_dim < 2 {
            return fail("projection_dim must be at least 2".into());
        }
        if !(0.0..=1.0).contains(&self.modality_dropout_p) {
            return fail(format!("modality_dropout_p {} outside [0, 1]", self.modality_dropout_p));
        }
        if !(self.layernorm_eps > 0.0) {
            return fail("layernorm_eps must be positive".into());
        }
        Ok(())
    }

    pub fn grid(&self) -> usize {
        self.image_size / self.patch_size
    }

    /// Number of image tokens.
    pub fn n_patches(&self) -> usize {
        self.grid() * self.grid()
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        let c = ModelConfig::default();
        c.validate().unwrap();
        assert_eq!(c.n_patches(), 64);
    }

    #[test]
    fn invariants_are_enforced() {
        let bad = [
            ModelConfig { image_size: 60, ..Default::default() },
            ModelConfig { d_model: 66, ..Default::default() },
            ModelConfig { n_seg_classes: 1, ..Default::default() },
            ModelConfig { projection_dim: 1, ..Default::default() },
        ];
        for c in bad {
            assert!(c.validate().is_err(), "{c:?}");
        }
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let err = serde_json::from_str::<ModelConfig>(r#"{"d_model": 32, "depth": 3}"#);
        assert!(err.is_err());
        let ok: ModelConfig = serde_json::from_str(r#"{"d_model": 32, "fusion_mode": "concat_vap"}"#).unwrap();
        assert_eq!(ok.fusion_mode, FusionMode::ConcatVAP);
        assert_eq!(ok.patch_size, 8);
    }
}
