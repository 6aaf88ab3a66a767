//! Retriever-reader entity linking, relation extraction and closed
//! information extraction.

pub mod encoder;
pub mod config;
pub mod error;
pub mod passage;
pub mod retriever;
pub mod pipeline;
pub mod reader;
pub mod vocab;

pub use error::{CoreError, Result};
