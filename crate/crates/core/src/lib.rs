pub mod distributions;
pub mod error;
pub mod inference;
pub mod model;
pub mod sampler;
pub mod simulation;
#[cfg(test)]
pub(crate) mod testing;

pub use error::{Result, ZidmError};
