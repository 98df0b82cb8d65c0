pub mod cli;
pub mod config;
pub mod corner;
pub mod error;
pub mod filter;
pub mod graphnet;
pub mod metrics;
pub mod pipeline;
pub mod preprocess;
pub mod sim;
pub mod store;

pub use error::{Error, Result};
