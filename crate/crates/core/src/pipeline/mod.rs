//! Documents, windows, synthetic data, evaluation and orchestration.

pub mod document;
pub mod window;
pub mod eval;
pub mod prediction;
pub mod synth;
pub mod cache;
pub mod run;
pub mod workflow;
