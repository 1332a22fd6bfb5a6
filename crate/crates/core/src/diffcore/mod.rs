//! Dense tensors, reverse-mode differentiation and the SGD optimizer.

mod gradcheck;
mod sgd;
mod tape;
mod tensor;

pub use gradcheck::grad_check;
pub use sgd::{SgdConfig, SgdState};
pub use tape::{ContrastRow, Gradients, Segments, Tape, Var};
pub use tensor::Tensor;

pub(crate) use tape::{l2, segment_log_softmax, softmax};
