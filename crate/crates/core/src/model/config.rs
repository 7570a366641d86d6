use serde::{Deserialize, Serialize};

use super::{ModelError, Result};

/// Architecture and seeding of the toy denoiser.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    /// Latent channels. The decoder reads blobs from channels 0 and 2.
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    /// Hidden width of every block.
    pub dim: usize,
    pub heads: usize,
    pub layers: usize,
    /// Denoising steps per frame (T).
    pub timesteps: usize,
    /// Frames kept in the KV cache (L_c).
    pub cache_len: usize,
    /// Pixels per latent cell in the decoder.
    pub upscale: usize,
    /// Master weight seed.
    pub seed: u64,
    /// Blend factor of the step from t to t-1, indexed by t-1.
    pub step_sizes: Vec<f64>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            channels: 4,
            height: 16,
            width: 16,
            dim: 64,
            heads: 4,
            layers: 4,
            timesteps: 4,
            cache_len: 3,
            upscale: 8,
            seed: 7,
            step_sizes: vec![0.05, 0.07, 0.10, 0.99],
        }
    }
}

fn bad(field: &str, message: impl Into<String>) -> ModelError {
    ModelError::Config {
        field: field.to_string(),
        message: message.into(),
    }
}

impl ModelConfig {
    pub fn tokens(&self) -> usize {
        self.height * self.width
    }

    pub fn head_dim(&self) -> usize {
        self.dim / self.heads.max(1)
    }

    pub fn pixel_dims(&self) -> (usize, usize) {
        (self.height * self.upscale, self.width * self.upscale)
    }

    pub fn step_size(&self, t: usize) -> f64 {
        self.step_sizes[t - 1]
    }

    pub fn validate(&self) -> Result<()> {
        if self.channels != 4 {
            return Err(bad("channels", "the decoder and context head need exactly 4"));
        }
        if !(4..=64).contains(&self.height) || !(4..=64).contains(&self.width) {
            return Err(bad("height/width", "latent grid sides must lie in 4..=64"));
        }
        if self.layers < 2 {
            return Err(bad("layers", "at least 2 layers are required"));
        }
        if self.heads == 0 || !self.dim.is_multiple_of(self.heads) {
            return Err(bad("heads", format!("{} heads do not divide dim {}", self.heads, self.dim)));
        }
        if self.dim < 64 {
            return Err(bad("dim", "dim must be at least 64"));
        }
        if self.head_dim() < 16 {
            return Err(bad("heads", "head dim must be at least 16"));
        }
        if self.timesteps == 0 {
            return Err(bad("timesteps", "must be >= 1"));
        }
        if self.step_sizes.len() != self.timesteps {
            return Err(bad(
                "step_sizes",
                format!("expected {} entries, got {}", self.timesteps, self.step_sizes.len()),
            ));
        }
        if self.step_sizes.iter().any(|s| !(*s > 0.0 && *s <= 1.0)) {
            return Err(bad("step_sizes", "entries must lie in (0, 1]"));
        }
        if self.cache_len == 0 {
            return Err(bad("cache_len", "must be >= 1"));
        }
        if self.upscale == 0 {
            return Err(bad("upscale", "must be >= 1"));
        }
        Ok(())
    }
}
