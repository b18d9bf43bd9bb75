pub mod acoustics;
pub mod artifacts;
pub mod config;
pub mod error;
pub mod experiments;
pub mod flow;
pub mod grid;
pub mod inverse;
pub mod io;
pub mod signal;
pub mod vadcp;
pub mod velocimetry;

pub use error::{Error, Result};
