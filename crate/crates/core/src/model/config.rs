use crate::config::{join_list, KeyValues};
use crate::error::{bail, Result};

/// Architecture hyperparameters.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    /// Voxels per axis of the (cubic) input.
    pub input_extent: usize,
    /// Output channels of each convolutional block. The last entry is the
    /// token count: every channel of the final feature map becomes a token.
    pub conv_channels: Vec<usize>,
    pub conv_kernel: usize,
    pub pool_window: usize,
    pub embed_dim: usize,
    pub num_layers: usize,
    pub num_heads: usize,
    pub ffn_ratio: usize,
    pub dropout: f64,
    pub num_classes: usize,
    pub positional_embedding: bool,
}

/// Shapes implied by a configuration, computed without allocating tensors.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ShapeInfo {
    /// Spatial extent of the encoder output per axis.
    pub spatial_extent: usize,
    /// Number of patch tokens (excluding CLS).
    pub num_tokens: usize,
    /// Length of a flattened patch, `spatial_extent^3`.
    pub patch_dim: usize,
    /// Tokens including CLS.
    pub seq_len: usize,
}

impl ModelConfig {
    /// 192^3 input, five conv blocks down to 512 tokens of 6^3, d = 240,
    /// eight heads, three encoder layers.
    pub fn paper() -> Self {
        Self {
            input_extent: 192,
            conv_channels: vec![32, 64, 128, 256, 512],
            conv_kernel: 3,
            pool_window: 2,
            embed_dim: 240,
            num_layers: 3,
            num_heads: 8,
            ffn_ratio: 2,
            dropout: 0.2,
            num_classes: 3,
            positional_embedding: true,
        }
    }

    /// Laptop-sized configuration: 24^3 input, 64 tokens of 3^3.
    pub fn desk() -> Self {
        Self {
            input_extent: 24,
            conv_channels: vec![4, 8, 64],
            conv_kernel: 3,
            pool_window: 2,
            embed_dim: 32,
            num_layers: 2,
            num_heads: 4,
            ffn_ratio: 2,
            dropout: 0.2,
            num_classes: 3,
            positional_embedding: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.conv_channels.is_empty() || self.conv_channels.contains(&0) {
            bail!(Parameter, "conv_channels must be non-empty and positive, got {:?}", self.conv_channels);
        }
        if self.conv_kernel == 0 || self.conv_kernel.is_multiple_of(2) {
            bail!(Parameter, "conv_kernel must be odd, got {}", self.conv_kernel);
        }
        if self.pool_window == 0 {
            bail!(Parameter, "pool_window must be >= 1");
        }
        let mut extent = self.input_extent;
        for block in 0..self.conv_channels.len() {
            if extent == 0 || !extent.is_multiple_of(self.pool_window) {
                bail!(
                    Parameter,
                    "input_extent {} is not divisible by pool_window^{} (block {block} sees extent {extent})",
                    self.input_extent,
                    self.conv_channels.len()
                );
            }
            extent /= self.pool_window;
        }
        if extent == 0 {
            bail!(Parameter, "encoder output extent is zero");
        }
        if self.embed_dim == 0 || self.num_heads == 0 || !self.embed_dim.is_multiple_of(self.num_heads) {
            bail!(
                Parameter,
                "embed_dim {} must be a positive multiple of num_heads {}",
                self.embed_dim,
                self.num_heads
            );
        }
        if self.ffn_ratio == 0 {
            bail!(Parameter, "ffn_ratio must be >= 1");
        }
        if self.num_classes < 2 {
            bail!(Parameter, "num_classes must be >= 2, got {}", self.num_classes);
        }
        if !(0.0..1.0).contains(&self.dropout) {
            bail!(Parameter, "dropout must lie in [0, 1), got {}", self.dropout);
        }
        Ok(())
    }

    pub fn shapes(&self) -> Result<ShapeInfo> {
        self.validate()?;
        let blocks = self.conv_channels.len() as u32;
        let spatial_extent = self.input_extent / self.pool_window.pow(blocks);
        let num_tokens = *self.conv_channels.last().expect("validated non-empty");
        Ok(ShapeInfo {
            spatial_extent,
            num_tokens,
            patch_dim: spatial_extent.pow(3),
            seq_len: num_tokens + 1,
        })
    }

    pub fn head_dim(&self) -> usize {
        self.embed_dim / self.num_heads
    }

    pub fn write_to(&self, kv: &mut KeyValues) -> Result<()> {
        kv.set("model.input_extent", self.input_extent)?;
        kv.set("model.conv_channels", join_list(&self.conv_channels))?;
        kv.set("model.conv_kernel", self.conv_kernel)?;
        kv.set("model.pool_window", self.pool_window)?;
        kv.set("model.embed_dim", self.embed_dim)?;
        kv.set("model.num_layers", self.num_layers)?;
        kv.set("model.num_heads", self.num_heads)?;
        kv.set("model.ffn_ratio", self.ffn_ratio)?;
        kv.set("model.dropout", self.dropout)?;
        kv.set("model.num_classes", self.num_classes)?;
        kv.set("model.positional_embedding", self.positional_embedding)?;
        Ok(())
    }

    /// Reads `model.*` keys, falling back to `base` for absent ones.
    pub fn read_from(kv: &KeyValues, base: &ModelConfig) -> Result<Self> {
        let cfg = Self {
            input_extent: kv.parsed("model.input_extent")?.unwrap_or(base.input_extent),
            conv_channels: kv
                .list("model.conv_channels")?
                .unwrap_or_else(|| base.conv_channels.clone()),
            conv_kernel: kv.parsed("model.conv_kernel")?.unwrap_or(base.conv_kernel),
            pool_window: kv.parsed("model.pool_window")?.unwrap_or(base.pool_window),
            embed_dim: kv.parsed("model.embed_dim")?.unwrap_or(base.embed_dim),
            num_layers: kv.parsed("model.num_layers")?.unwrap_or(base.num_layers),
            num_heads: kv.parsed("model.num_heads")?.unwrap_or(base.num_heads),
            ffn_ratio: kv.parsed("model.ffn_ratio")?.unwrap_or(base.ffn_ratio),
            dropout: kv.parsed("model.dropout")?.unwrap_or(base.dropout),
            num_classes: kv.parsed("model.num_classes")?.unwrap_or(base.num_classes),
            positional_embedding: kv
                .parsed("model.positional_embedding")?
                .unwrap_or(base.positional_embedding),
        };
        Ok(cfg)
    }
}
