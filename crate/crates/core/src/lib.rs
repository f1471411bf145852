pub mod cli;
pub mod config;
pub mod error;
pub mod filter;
pub mod geometry;
pub mod gridmap;
pub mod matcher;
pub mod metrics;
pub mod multihyp;
pub mod rng;
pub mod runlog;
pub mod sim;

pub use error::{Error, Result};
