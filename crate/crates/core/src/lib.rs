pub mod agent;
pub mod envs;
pub mod error;
pub mod harness;
pub mod losses;
pub mod nn;
pub mod replay;
pub mod rng;

pub use error::{Error, Result};
