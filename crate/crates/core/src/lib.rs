pub mod attack;
pub mod data;
pub mod error;
pub mod harness;
pub mod image;
pub mod metrics;
pub mod net;
pub mod rng;
pub mod tps;
pub mod warp;

pub use error::{Error, Result};
