//! Dense `f64` tensors, reverse-mode differentiation and gradient checking.

mod dropout;
mod gradcheck;
mod params;
mod serial;
mod tape;
mod tensor;

pub use dropout::DropoutRng;
pub(crate) use dropout::mix;
pub use gradcheck::{fd_check, relative_error, FdReport, GroupCheck};
pub use params::{Init, ParamEntry, ParamGrads, ParamId, ParamStore};
pub use serial::{decode_tensor, encode_tensor, load_tensor, read_tensor, save_tensor, write_tensor, TENSOR_MAGIC};
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;
