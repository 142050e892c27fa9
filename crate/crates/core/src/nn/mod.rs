//! Minimal neural-network kernel: tensors, hand-written forward/backward
//! passes, softmax cross-entropy, L2 regularization and SGD.

mod activation;
mod conv;
mod dense;
mod loss;
mod pool;
mod tensor;

#[cfg(test)]
pub(crate) mod testutil;

pub use activation::{relu, relu_backward};
pub use conv::{conv2d_backward, conv2d_forward, ConvGrads, ConvLayer};
pub use dense::{dense_backward, dense_forward, DenseGrads, DenseLayer};
pub use loss::{l2_penalty, sgd_step, softmax, softmax_cross_entropy};
pub use pool::{maxpool2_backward, maxpool2_forward, PoolIndices};
pub use tensor::Tensor;

pub(crate) use activation::relu_mask_inplace;
pub(crate) use conv::conv2d_backward_accumulate;
pub(crate) use dense::dense_backward_accumulate;
