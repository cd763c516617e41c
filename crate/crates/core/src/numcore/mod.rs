//! Dense tensor math and the training substrate shared by every model.

mod adam;
mod finite_diff;
mod ops;
mod rng;
mod tensor;

pub use adam::{adam_step, Adam, AdamConfig, AdamState};
pub use finite_diff::{finite_diff_grad, max_relative_error, relative_error, DEFAULT_STEP, REL_ERR_FLOOR};
pub use ops::{activate, cross_entropy, dropout, glorot_init, sigmoid, softmax_rows, Activation, LOG_CLAMP};
pub(crate) use ops::dropout_mask;
pub use rng::{mix_seed, splitmix64, Prng};
pub use tensor::Tensor;
pub(crate) use tensor::{gemm_nn, gemm_tn};
