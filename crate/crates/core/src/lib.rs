//! Zero-shot voice conversion with a content-aware timbre ensemble and optimal-transport
//! conditional flow matching.

pub mod autograd;
pub mod cfm;
pub mod cte;
pub mod error;
pub mod features;
pub mod losses;
pub mod model;
pub mod params;
pub mod synth;
pub mod trainer;

pub use error::{Error, Result};
