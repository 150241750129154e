pub mod cli;
pub mod error;
pub mod grid;
pub mod lp;
pub mod matrix;
pub mod multiplier;
pub mod norms;
pub mod reducing;
pub mod weights;

pub use error::{Error, Result};
