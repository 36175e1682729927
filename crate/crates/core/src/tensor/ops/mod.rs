//! Differentiable kernels, implemented as methods on [`Tensor`](super::Tensor).

mod activation;
mod conv;
mod elementwise;
mod interp;
mod layout;
mod matmul;
mod norm;
mod pool;
mod reduce;

pub use conv::conv_out_extent;
pub use interp::resample_trilinear;
pub use norm::{BatchNormMode, RunningStats, BN_MOMENTUM, NORM_EPS};
pub use pool::PoolIndices;
