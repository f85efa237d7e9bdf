pub mod classifier;
pub mod data;
pub mod dataset_io;
pub mod error;
pub mod metrics;
pub mod nn;
pub mod objectives;
pub mod phantom;
pub mod pipeline;
pub mod rng;
pub mod training;
pub mod vae;

pub use error::{Error, Result};
