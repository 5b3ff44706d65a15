//! Small reverse-mode autodiff engine with the layers needed for
//! encoder–decoder generators, patch discriminators and embedding encoders.
//!
//! Everything computes in `f64`; parameter values are kept
//! `f32`-representable (see [`params::snap`]).

pub mod graph;
pub mod layers;
mod ops;
pub mod optim;
pub mod params;
pub mod tensor;

pub use graph::{sigmoid, Grads, Graph, Var};
pub use optim::{Adam, AdamConfig};
pub use params::{Init, Param, ParamId, ParamStore};
pub use tensor::Tensor;

#[derive(Debug, thiserror::Error)]
pub enum NnError {
    #[error("incompatible parameters: {0}")]
    Incompatible(String),
}
