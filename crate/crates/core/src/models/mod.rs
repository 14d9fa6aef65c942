//! The initial predictor `g` (a 10-layer residual CNN on sub-bands) and the
//! denoiser `f` (a conditional U-Net predicting the injected noise).

mod embedding;
mod params;
mod predictor;
mod unet;

pub use embedding::{noise_level_embedding, EMBED_SCALE};
pub use params::{param_specs, Bound, Init, ModelParams, ParamSpec};
pub use predictor::{apply_predictor, init_predictor_forward, predictor_forward};
pub use unet::{denoiser_forward, denoiser_forward_eval};

use crate::error::{Error, Result};

/// Architecture of both networks.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    /// Channels of the source image (3 for RGB).
    pub image_channels: usize,
    /// Operate on Haar sub-bands (`4C` channels at half size) instead of pixels.
    pub use_dwt: bool,
    /// Learn `g`; when false, `g` is the identity.
    pub use_init_predictor: bool,
    pub predictor_hidden: usize,
    pub predictor_layers: usize,
    pub base_width: usize,
    pub channel_mults: Vec<usize>,
    pub n_blocks: usize,
    pub dropout: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self::desk()
    }
}

impl ModelConfig {
    /// Small CPU-friendly setup: base width 16, three resolution levels.
    pub fn desk() -> Self {
        Self {
            image_channels: 3,
            use_dwt: true,
            use_init_predictor: true,
            predictor_hidden: 32,
            predictor_layers: 10,
            base_width: 16,
            channel_mults: vec![1, 2, 2],
            n_blocks: 2,
            dropout: 0.1,
        }
    }

    /// General-SR scale: base width 48, multipliers [1, 2, 2, 4], two blocks per level.
    pub fn large_general_sr() -> Self {
        Self {
            base_width: 48,
            channel_mults: vec![1, 2, 2, 4],
            ..Self::desk()
        }
    }

    /// Channels of the tensors the diffusion runs on.
    pub fn data_channels(&self) -> usize {
        if self.use_dwt {
            4 * self.image_channels
        } else {
            self.image_channels
        }
    }

    /// Width of the sinusoidal noise-level features and of the projected embedding.
    pub fn embed_dim(&self) -> usize {
        self.base_width
    }

    pub fn levels(&self) -> usize {
        self.channel_mults.len()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.image_channels == 0 {
            return bad("image_channels must be positive");
        }
        if self.base_width == 0 || self.base_width % 2 != 0 {
            return bad("base_width must be a positive even number");
        }
        if self.channel_mults.is_empty() || self.channel_mults.contains(&0) {
            return bad("channel_mults must be non-empty and positive");
        }
        if self.n_blocks == 0 {
            return bad("n_blocks must be positive");
        }
        if self.predictor_layers < 2 || self.predictor_hidden == 0 {
            return bad("predictor needs at least two layers and a positive width");
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad("dropout must lie in [0, 1)");
        }
        Ok(())
    }
}

/// Group count for a normalisation over `channels`: 8, or `channels` when fewer.
pub fn norm_groups(channels: usize) -> usize {
    if channels < 8 {
        channels
    } else {
        8
    }
}
