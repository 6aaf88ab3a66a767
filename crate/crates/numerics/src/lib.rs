//! Numerical substrate: dense `f64` tensors, a reverse-mode autodiff tape,
//! Adam-family optimizers, finite-difference gradient checks and parameter
//! snapshot files.

pub mod error;
pub mod exec;
pub mod gradcheck;
pub mod graph;
pub mod ops;
pub mod optim;
pub mod params;
pub mod snapshot;
pub mod tensor;

pub use error::{NumericsError, Result};
pub use exec::Exec;
pub use gradcheck::{check_gradients, GradCheckOptions, GradCheckReport};
pub use graph::{Graph, NodeGrads, Var};
pub use optim::{optimizer_step, OptimizerConfig, OptimizerKind};
pub use params::{Gradients, ParamId, ParameterStore};
pub use tensor::Tensor;
