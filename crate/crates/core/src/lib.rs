pub mod decomp;
pub mod dictionary;
pub mod error;
pub mod experiments;
pub mod forecast;
pub mod numkit;
pub mod sampling;
pub mod spectral;

pub use error::{Error, Result};
