pub mod arch;
pub mod decoder;
pub mod diffmath;
pub mod encoder;
mod error;
pub mod metrics;
pub mod model;
pub mod oracle;
pub mod predictors;
mod scalar;
pub mod searcher;
pub mod seeding;
pub mod trainer;

pub use error::{Error, Result};
pub use model::{ModelConfig, NasModel};
pub use scalar::{logistic, softplus, Real};

/// Double-precision model, the configuration every tool runs with.
pub type Model = NasModel<f64>;
/// Single-precision model.
pub type ModelF32 = NasModel<f32>;
pub type Tensor = diffmath::Tensor<f64>;
pub type ParamStore = diffmath::ParamStore<f64>;
pub type Posterior = encoder::Posterior<f64>;
