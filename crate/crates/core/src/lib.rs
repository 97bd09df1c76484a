pub mod assembly;
pub mod error;
pub mod rates;
pub mod solver;
pub mod spectral;
pub mod study;
pub mod theory;

pub use error::{FlocError, Result};
