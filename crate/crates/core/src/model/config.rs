use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// How latent rows are laid out over the tokens.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "kind")]
pub enum LatentMode {
    /// One shared seed vector, one latent per token segment.
    Segmented,
    /// `latents` independent rows, each attending to every token.
    Global { latents: usize },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Pooling {
    /// mean over the final latent rows
    Mean,
    /// last latent row only
    Last,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub depth: usize,
    pub latent_dim: usize,
    pub cross_heads: usize,
    pub cross_head_dim: usize,
    pub self_heads: usize,
    pub self_head_dim: usize,
    /// self-attention blocks after each cross-attention (R)
    pub self_blocks: usize,
    pub n_classes: usize,
    pub ffn_multiplier: usize,
    pub pooling: Pooling,
    pub mode: LatentMode,
}

/// Number of latents in the unsegmented baseline.
pub const DEFAULT_GLOBAL_LATENTS: usize = 32;
pub const NORM_EPS: f64 = 1e-5;
pub const MASK_BIAS: f64 = -1e9;

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            depth: 4,
            latent_dim: 128,
            cross_heads: 1,
            cross_head_dim: 64,
            self_heads: 8,
            self_head_dim: 64,
            self_blocks: 8,
            n_classes: 3,
            ffn_multiplier: 1,
            pooling: Pooling::Mean,
            mode: LatentMode::Segmented,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("latent_dim", self.latent_dim),
            ("cross_heads", self.cross_heads),
            ("cross_head_dim", self.cross_head_dim),
            ("self_heads", self.self_heads),
            ("self_head_dim", self.self_head_dim),
            ("n_classes", self.n_classes),
            ("ffn_multiplier", self.ffn_multiplier),
        ];
        if let Some((name, _)) = fields.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("model {name} must be positive")));
        }
        if let LatentMode::Global { latents: 0 } = self.mode {
            return Err(Error::Config("global latent count must be positive".into()));
        }
        Ok(())
    }

    pub fn cross_inner(&self) -> usize {
        self.cross_heads * self.cross_head_dim
    }

    pub fn self_inner(&self) -> usize {
        self.self_heads * self.self_head_dim
    }

    pub fn ffn_hidden(&self) -> usize {
        self.ffn_multiplier * self.latent_dim
    }

    /// Rows of the learnable latent array.
    pub fn latent_rows(&self) -> usize {
        match self.mode {
            LatentMode::Segmented => 1,
            LatentMode::Global { latents } => latents,
        }
    }
}
