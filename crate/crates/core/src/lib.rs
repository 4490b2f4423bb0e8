pub mod error;
pub mod objectives;
pub mod rng;
pub mod vector;

pub use error::{Error, Result};
pub mod config;
pub mod optimizers;
pub mod schedule;
pub mod metrics;
pub mod simulator;
pub mod oracle;
pub mod advisor;
pub mod output;
pub mod verify;
