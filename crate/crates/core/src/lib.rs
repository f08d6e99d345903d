pub mod cgan;
pub mod checkpoint;
pub mod classify;
pub mod config;
pub mod convert;
pub mod data;
pub mod error;
pub mod imaging;
pub mod label;
pub mod loss;
pub mod maskgan;
pub mod nn;
pub mod report;
pub mod rng;
pub mod synthesis;

pub use error::{Error, Result};
pub use label::ClassLabel;
