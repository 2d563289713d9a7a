//! Two-stage character generation: silhouettes from noise, then colorization.

pub mod dataio;
pub mod error;
pub mod eval;
pub mod nn;
pub mod snapshots;
pub mod training;
pub mod zoo;

pub use error::{Error, Result};
