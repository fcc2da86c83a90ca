pub mod apm;
pub mod config;
pub mod data;
pub mod divergence;
pub mod engine;
pub mod gradsuite;
mod error;
pub mod linalg;
pub mod metrics;
pub mod nn;
pub mod rng;
pub mod sam;

pub use error::{Error, Result};
pub use linalg::Matrix;
