pub mod adapt;
pub mod cli;
pub mod error;
pub mod fem;
pub mod iterate;
pub mod mesh;
pub mod problem;

pub use error::{Error, ErrorCategory, Result};
