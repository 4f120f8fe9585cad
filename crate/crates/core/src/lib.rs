//! Correlation analysis between graph self-supervised tasks.

pub mod correlation;
pub mod encoder;
pub mod error;
pub mod eval;
pub mod graph;
pub mod numeric;
pub mod pipeline;
pub mod tasks;
pub mod tcm;
pub mod verify;

pub use error::{Error, Result};
