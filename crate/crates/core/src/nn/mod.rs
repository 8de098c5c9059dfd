//! Minimal feed-forward network engine.
//!
//! Only the pieces needed by BoBNet are provided: 3×3 convolution, ReLU,
//! 2×2 max pooling, spatial pyramid pooling, fully-connected layers, dropout
//! and a paired softmax output trained with cross-entropy. Gradients are
//! analytic; there is no general autodiff.

mod init;
mod layers;
mod loss;
mod network;
mod optim;
mod tensor;

pub use init::{glorot_bound, glorot_uniform_init};
pub use layers::{
    conv3x3_backward, conv3x3_forward, dropout_apply, fc_forward, maxpool2x2_forward,
    spp_bins, spp_forward, SPP_CELLS, SPP_GRIDS,
};
pub use loss::{cross_entropy_paired, paired_softmax, LOG_CLAMP};
pub use network::{Gradients, LayerParams, LayerSpec, Mode, Network, ParameterSet, Tape};
pub use optim::{nesterov_step, nesterov_update, OptimizerConfig};
pub use tensor::{Precision, Scalar, Tensor};
