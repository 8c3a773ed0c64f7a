//! Dense tensors with tape-based reverse-mode differentiation.
//!
//! Every operator records its output on a [`Tape`] together with a backward
//! closure. Operators are generic over [`Scalar`] so the same kernels run in
//! `f32` for training and `f64` for gradient checks.

mod conv;
mod norm;
mod ops;
mod optim;
mod resample;
mod tape;
mod tensor;

pub use conv::{conv2d, maxpool2d};
pub use norm::{group_count, group_norm, CHANNELS_PER_GROUP, GROUP_NORM_EPS};
pub use ops::{
    add, add_channel_bias, channel_softmax, class_activation, global_average_pool, linear,
    mean_all, mul, relu, scale, spatial_softmax, spatial_sum, sum_all,
};
pub use optim::{sgd_step, OptimizerState};
pub use resample::{bicubic_matrix, bicubic_upsample, upsample_plane, CUBIC_A};
pub use tape::{GradSink, Gradients, Tape, Var};
pub use tensor::num_like::FloatOps;
pub use tensor::{Scalar, Tensor};
