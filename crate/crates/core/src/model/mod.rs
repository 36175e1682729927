//! The hybrid compact convolutional transformer.

mod checkpoint;
mod config;
mod hcct;
mod layers;
mod params;
mod pooling;
mod transformer;

pub use checkpoint::{Checkpoint, NamedTensor, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub(crate) use checkpoint::Reader;
pub use config::{ModelConfig, ShapeInfo};
pub use hcct::{is_finetune_param, AttentionRecord, ForwardOutput, HcctModel, Mode};
pub use layers::{ConvBlock, LayerNorm, Linear};
pub use params::{count_parameters, per_layer_parameters, ParameterCount};
pub use pooling::hybrid_pool;
pub use transformer::TransformerBlock;
