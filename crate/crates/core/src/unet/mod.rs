//! From-scratch U-net with exact backpropagation.

mod layers;
mod net;
mod tensor;

pub use layers::{
    avg_unpool2x2, avg_unpool2x2_backward, concat_channels, conv2d_backward, conv2d_forward,
    conv2d_relu, maxpool2x2, maxpool2x2_backward, relu, relu_backward, Pooled,
};
pub use net::{
    backward, forward, init_weights, unet_backward, unet_forward, ForwardCache, UNetConfig,
    UNetWeights, CONVS_PER_BLOCK, INIT_STD,
};
pub(crate) use net::to_tensor;
pub use tensor::{Kernel, Scalar, Tensor};
