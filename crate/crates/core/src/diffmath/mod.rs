//! Dense arrays, parameters, reverse-mode differentiation and the neural
//! primitives shared by every learned component.

mod gradcheck;
pub mod nn;
mod optim;
mod params;
mod tape;
mod tensor;

pub use gradcheck::{grad_check, relative_error, GradCheckReport};
pub use nn::{mlp_forward, softmax_stable, Activation, GruCell, Linear, Mlp, MlpSpec};
pub use optim::{clip_gradients, sgd_step, Adam, Optimizer, OptimizerKind};
pub use params::{GradBuffer, Init, ParamId, ParamStore, ParamStoreBuilder};
pub(crate) use params::TensorRecord;
pub use tape::{kl_terms, Gradients, Tape, Var};
pub use tensor::Tensor;


