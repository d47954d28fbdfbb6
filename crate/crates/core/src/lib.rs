pub mod audio;
pub mod classifier;
pub mod codebook;
pub mod corpus;
pub mod descriptor;
pub mod error;
pub mod fusion;
pub mod metrics;
pub mod pipeline;
pub mod video;

pub use error::{Error, Result};
