//! Minimal reverse-mode automatic differentiation.
//!
//! Tensors are dense f32 buffers (f64 in shadow mode for gradient checking),
//! recorded on a Wengert tape. The op set is exactly what the capture models
//! need: linear / conv2d / deconv2d, leaky ReLU, weight normalization,
//! positional encoding, min-avg-max pooling, the usual reductions and a
//! custom-op escape hatch for the differentiable renderer and the geometric
//! losses. No broadcasting beyond bias addition, no graph optimization.

pub mod adam;
pub mod checkpoint;
pub mod gradcheck;
pub mod init;
pub mod ops;
pub mod scalar;
pub mod tape;
pub mod tensor;

pub use adam::{adam_step, AdamConfig, AdamState, ParamStore};
pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use scalar::Scalar;
pub use tape::{CustomOp, NnError, Tape, TensorId};
pub use tensor::TensorData;
