//! Predictive generative network toolkit: a from-scratch tensor engine with
//! reverse-mode autodiff, CNN-LSTM-deCNN models with MSE and adversarial
//! losses, procedural video datasets with known latent variables, and the
//! representation-analysis suite built on top of them.

pub mod analysis;
pub mod data;
pub mod error;
pub mod loss;
pub mod models;
pub mod nn;
pub mod optim;
pub mod probe;
pub mod scalar;
pub mod tensor;
pub mod train;

pub use error::{PgnError, Result};
