pub mod baseline;
pub mod data;
pub mod error;
pub mod manifest;
pub mod metrics;
pub mod nnet;
pub mod pipeline;
pub mod simsearch;
pub mod uqbounds;

pub use error::{Error, Result};
