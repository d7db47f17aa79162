pub mod coupling;
pub mod cumulant;
pub mod distance;
pub mod error;
pub mod export;
pub mod mc;
pub mod mechanism;
pub mod numerics;
pub mod scenario;
pub mod simulate;
pub mod stats;
pub mod verify;

pub use error::{Error, Result};
