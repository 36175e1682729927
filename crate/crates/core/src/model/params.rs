use super::config::ModelConfig;
use super::hcct::HcctModel;
use crate::error::Result;
use crate::tensor::Real;

/// Closed-form learnable-parameter count, by component.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ParameterCount {
    /// Conv weights and biases plus batch-norm affine parameters.
    pub conv: usize,
    /// Patch embedding, CLS token, positional embedding.
    pub embedding: usize,
    /// One encoder layer.
    pub per_layer: usize,
    /// `num_layers * per_layer`.
    pub transformer: usize,
    /// Final layer norm, sequence-pool scorer, classifier.
    pub head: usize,
    pub total: usize,
}

/// Parameters of one pre-norm encoder layer with width `d` and FFN ratio `r`:
/// Q/K/V/output projections `4d^2 + 4d`, FFN `2rd^2 + rd + d`, two layer
/// norms `4d`.
pub fn per_layer_parameters(d: usize, r: usize) -> usize {
    let attention = 4 * d * d + 4 * d;
    let ffn = 2 * r * d * d + r * d + d;
    let norms = 4 * d;
    attention + ffn + norms
}

pub fn count_parameters(config: &ModelConfig) -> Result<ParameterCount> {
    let shapes = config.shapes()?;
    let d = config.embed_dim;
    let k3 = config.conv_kernel.pow(3);

    let mut conv = 0;
    let mut c_in = 1;
    for &c_out in &config.conv_channels {
        conv += c_in * c_out * k3 + c_out + 2 * c_out;
        c_in = c_out;
    }
    let mut embedding = shapes.patch_dim * d + d + d;
    if config.positional_embedding {
        embedding += shapes.seq_len * d;
    }
    let per_layer = per_layer_parameters(d, config.ffn_ratio);
    let transformer = config.num_layers * per_layer;
    let head = 2 * d + (d + 1) + (2 * d * config.num_classes + config.num_classes);
    Ok(ParameterCount {
        conv,
        embedding,
        per_layer,
        transformer,
        head,
        total: conv + embedding + transformer + head,
    })
}

impl<F: Real> HcctModel<F> {
    /// Number of learnable scalars actually held by the model.
    pub fn parameter_tally(&self) -> usize {
        self.named_params().iter().map(|(_, t)| t.numel()).sum()
    }
}
