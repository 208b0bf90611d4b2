pub mod acds;
pub mod error;
pub mod losses;
pub mod metrics;
pub mod nn;
pub mod phantom;
pub mod registration;
pub mod volume;
pub mod rng;
pub mod trainer;

pub use error::{Error, Result};
