//! Tensors, convolution layers, nonlinearities, reverse-mode gradients and
//! the Adam optimizer.

mod adam;
pub mod conv;
mod layer;
mod tape;
mod tensor;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use conv::ConvGeom;
pub use layer::{
    conv2d, leaky, leaky_relu, norm_nonlinearity, BasisCache, ConvLayer, ExpansionBlock,
    ExpansionLayout, NormFn, Parameterization, LEAKY_SLOPE,
};
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;
