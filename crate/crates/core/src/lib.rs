pub mod audio;
pub mod augmentation;
pub mod config;
pub mod data;
pub mod error;
pub mod features;
pub mod model;
pub mod nn;
pub mod rng;
pub mod training;

pub use error::{Error, Result};
