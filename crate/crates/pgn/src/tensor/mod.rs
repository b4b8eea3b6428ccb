//! Minimal deterministic tensor engine with tape-based reverse-mode
//! automatic differentiation.
//!
//! All values live inside a [`Graph`]; a [`TensorRef`] is a handle into the
//! tape. Graphs are confined to a single thread; independent graphs may run
//! concurrently.

mod gradcheck;
mod graph;
mod ops;

pub use gradcheck::{check_gradients, GradCheckReport};
pub use graph::{Graph, TensorData, TensorRef};
pub use ops::ActivationKind;
