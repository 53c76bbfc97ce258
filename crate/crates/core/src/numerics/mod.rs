//! Dense storage, deterministic random streams, optimizers and a
//! finite-difference gradient checker shared by every model in the crate.

mod gradcheck;
mod optim;
mod rng;
mod tensor;

pub use gradcheck::{finite_diff_grad, relative_error};
pub use optim::{OptimizerKind, OptimizerState};
pub use rng::Rng;
pub use tensor::Tensor;
