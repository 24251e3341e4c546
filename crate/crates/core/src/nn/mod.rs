//! Tensors with reverse-mode differentiation and the layer set of the model.

mod gemm;
mod gradcheck;
mod gru;
mod layers;
mod loss;
mod ops;
mod tape;
mod tensor;

pub use gemm::gemm;
pub use gradcheck::{grad_check, relative_error, GradCheckReport, GradCoordinate};
pub use gru::{bigru, gru_sequence, GruVars};
pub use layers::{conv2d, dropout, gelu, gelu_scalar, layer_norm, linear, Conv2dGeometry};
pub use loss::{softmax_cross_entropy, softmax_rows};
pub use ops::{add, concat_last, dot_const, mean_axis0, permute, reshape};
pub use tape::{Gradients, Param, ParamId, ParamStore, Tape, Var};
pub use tensor::Tensor;
