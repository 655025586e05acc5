pub mod batch;
pub mod checks;
pub mod cli;
pub mod diagnostics;
pub mod error;
pub mod harness;
pub mod kernel;
pub mod problem;
pub mod seeds;
pub mod semistoch;
pub mod sgd;

pub use error::{Error, Result};
