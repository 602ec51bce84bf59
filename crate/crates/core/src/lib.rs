pub mod checkpoint;
pub mod data;
pub mod error;
pub mod experiments;
pub mod kernel;
pub mod likelihood;
pub mod noise;
pub mod linalg;
pub mod model;
pub mod params;
pub mod svgp;
pub mod train;

pub use error::{Error, Result};
