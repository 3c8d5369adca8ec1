//! Dense linear algebra, reverse-mode gradients, the optimizer and the
//! random-number substrate.

mod matrix;
mod optim;
mod param;
mod rng;
mod tape;

pub use matrix::{Matrix, Scalar};
pub use optim::AdamW;
pub use param::{AdamState, Gradients, ParamGroup, ParamId, ParamStore, ParamTensor};
pub use rng::Rng;
pub use tape::{log_softmax_rows, softmax_rows, Tape, Var, LAYER_NORM_EPS};
