//! Forward and backward kernels for every layer of the network.
//!
//! All functions are pure: inputs are borrowed, outputs and gradients are
//! freshly allocated. Convolutions run in valid mode (no padding).

mod activation;
mod conv;
mod dense;
pub(crate) mod kernels;
mod pool;

pub use activation::{relu, relu_backward, softmax, softmax_ce, SoftmaxCe};
pub use conv::{
    conv_backward, conv_forward, conv_output_dim, deconv_backward, deconv_forward,
    deconv_output_dim, ConvGrads, ConvParams,
};
pub(crate) use conv::conv_backward_impl;
pub use dense::{dense_backward, dense_forward, DenseGrads, DenseParams};
pub use pool::{maxpool_backward, maxpool_forward, pool_output_dim, unpool, unpool_backward, PoolIndices};
