//! Forward and backward kernels for the layers of a sequential CNN.

mod conv;
mod layers;
mod loss;

pub use conv::{
    conv2d_backward, conv2d_forward, scaled_conv2d_backward, scaled_conv2d_forward, Conv2dParams,
    ConvGrads, ScaledConvGrads,
};
pub use layers::{
    batchnorm2d_backward, batchnorm2d_forward_eval, batchnorm2d_forward_train,
    channel_scale_backward, channel_scale_forward, global_avgpool_backward,
    global_avgpool_forward, linear_backward, linear_forward, maxpool2d_backward,
    maxpool2d_forward, relu_backward, relu_forward, BatchNormCache, LinearGrads, PoolParams,
    BATCHNORM_EPS, BATCHNORM_MOMENTUM,
};
pub use loss::{one_hot, one_hot_classes, softmax_cross_entropy};
