pub mod afs;
pub mod backbone;
pub mod cmfm;
pub mod data;
pub mod metrics;
mod error;
pub mod network;
pub mod nn;
pub mod sgpea;
pub mod tensor;

pub use error::{Error, Result};

#[cfg(test)]
mod testutil;
