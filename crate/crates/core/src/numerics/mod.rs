//! Dense-tensor engine: tensors, layers with explicit backward passes,
//! AdamW, and a finite-difference gradient oracle.

mod gradcheck;
mod layers;
mod optim;
mod tensor;

pub use gradcheck::{finite_diff_grad, max_relative_error, stack_gradient_error};
pub use layers::{glorot_uniform, sigmoid, Layer, LayerCache, LayerSpec, Param, Stack, StackCache, StackGrads};
pub use optim::AdamW;
pub use tensor::{Tensor, TENSOR_FORMAT_VERSION, TENSOR_MAGIC};

pub(crate) use tensor::{read_exact, read_u16, read_u32, read_u64};
