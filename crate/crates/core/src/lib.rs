pub mod backends;
pub mod cli;
pub mod config;
pub mod dataset;
pub mod error;
pub mod evalkit;
pub mod fsio;
pub mod imageio;
pub mod model;
pub mod pipeline;
pub mod scenegen;
pub mod seeds;
pub mod species;
pub mod train;

pub use error::{Error, Result};
