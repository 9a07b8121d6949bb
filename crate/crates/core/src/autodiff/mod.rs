//! Reverse-mode automatic differentiation over dense `f64` tensors.
//!
//! Every operation records a node linking its output to its inputs. Backward
//! rules are themselves written in terms of recorded tensor operations, so a
//! backward pass run with `higher_order = true` leaves a differentiable graph
//! behind and a second [`backward`] can differentiate through the gradient
//! (double backprop, as needed by a gradient penalty).

mod conv;
pub mod gradcheck;
mod grad;
mod io;
mod nn;
mod tensor;

pub use conv::{conv2d, conv3d, conv_transpose3d, conv_output_size, conv_transpose_output_size};
pub use grad::{backward, grad_enabled, no_grad, set_detect_anomaly};
pub use io::{read_tensor_file, write_tensor_file, Precision, TensorFile};
pub use nn::{
    activation, batchnorm, bce, dense, l2_norm, l2_norm_rows, Activation, BatchNormMode,
    BatchNormOutput, BCE_EPS,
};
pub use tensor::Tensor;
