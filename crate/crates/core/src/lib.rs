//! COVID-19 chest X-ray CNN built from scratch, its evaluation metrics, and
//! a discrete-event model of fog versus cloud inference placement.

pub mod cli;
pub mod data;
pub mod error;
pub mod fogsim;
pub mod metrics;
pub mod nn;
pub mod rng;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::{Scalar, Tensor};
