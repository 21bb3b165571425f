//! Dense f64 tensors with tape-based reverse-mode differentiation.

mod params;
mod tape;
mod tensor;

pub use params::{sha256_hex, Param, ParamId, ParamStore};
pub use tape::{Gradients, Tape, Var, LAYER_NORM_EPS};
pub use tensor::Tensor;
