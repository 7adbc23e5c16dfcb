//! Dense tensors, a reverse-mode tape, finite-difference checking and the
//! weight container.

pub mod conv;
pub mod gradcheck;
mod params;
mod real;
mod tape;
mod tensor;
pub mod weights;

pub use gradcheck::{gradcheck, GradcheckConfig, GradcheckReport};
pub use params::{he_normal, Bound, ParamId, ParamStore};
pub use real::{Precision, Real};
pub use tape::{Binary, Tape, Unary, Var};
pub use tensor::Tensor;
