//! Neural face rig: view CNN, mesh encoders, Jacobian decoder, training and
//! evaluation.

pub mod ablation;
pub mod checkpoint;
pub mod cnn;
pub mod data;
pub mod decoder;
pub mod diffusion;
pub mod error;
pub mod eval;
pub mod losses;
pub mod model;
pub mod nn;
pub mod render;
pub mod seol;
pub mod train;

pub use error::{ModelError, Result};
pub use model::{ModelConfig, NfrModel};

pub type Model = NfrModel<f32>;
pub type Model64 = NfrModel<f64>;
