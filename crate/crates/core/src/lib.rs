pub mod attributes;
pub mod backend;
pub mod cli;
pub mod error;
pub mod evaluation;
pub mod geometry;
pub mod image;
pub mod losses;
pub mod optimizer;
pub mod providers;
pub mod rng;
pub mod sampler;
pub mod schedule;
pub mod trajectory;

pub use error::{Error, Result};
