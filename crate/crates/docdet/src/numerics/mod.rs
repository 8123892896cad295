//! Dense-tensor kernels with explicit forward and backward passes, an SGD
//! optimizer and a finite-difference verification harness.
//!
//! Everything is double precision. There is no autodiff graph: the
//! detector has a fixed topology, so each op exposes its own backward
//! function and callers compose them by hand. Tensors are value-semantic;
//! ops are internally single-threaded and callers parallelize across
//! independent inputs.

pub mod bilinear;
pub mod conv;
pub mod gradcheck;
pub mod linear;
pub mod loss;
pub mod pool;
pub mod tensor;

mod optim;

pub use bilinear::{bilinear_sample, bilinear_sample_backward};
pub use conv::{
    conv2d, conv2d_backward, conv2d_backward_params, conv2d_circular, conv2d_out_size,
};
pub use gradcheck::finite_diff_check;
pub use linear::{linear, linear_backward, relu, relu_backward};
pub use loss::{
    smooth_l1, smooth_l1_backward, softmax, softmax_cross_entropy, softmax_cross_entropy_backward,
};
pub use optim::{lr_schedule, sgd_step, Parameter, TrainHyperparams};
pub use pool::{max_pool2d, max_pool2d_backward};
pub use tensor::Tensor;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum NumericsError {
    #[error("shape mismatch in {context}: {detail}")]
    ShapeMismatch {
        context: &'static str,
        detail: String,
    },
}
