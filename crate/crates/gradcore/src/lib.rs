//! Dense reverse-mode automatic differentiation for small MLP/LSTM models.

pub mod adam;
pub mod error;
pub mod gradcheck;
pub mod graph;
pub mod layers;
pub mod tensor;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use error::GradError;
pub use graph::{Gradients, Graph, Var, NORMALIZE_EPS};
pub use layers::{activate, lstm_step, Activation, DenseVars, LstmState, LstmVars, MlpVars};
pub use tensor::Tensor;
