pub mod chaos;
pub mod config;
pub mod contractions;
pub mod error;
pub mod hazard;
pub mod kernels;
pub mod mc;
pub mod ou_levy;
pub mod piecewise;
pub mod point_process;
pub mod quadrature;
pub mod rng;
pub mod special;

pub use error::{Error, Result};
