pub mod coarse;
pub mod error;
pub mod extract;
pub mod field;
pub mod guidance;
pub mod math;
pub mod pipeline;
pub mod ply;
pub mod raster;
pub mod refine;
pub mod texproj;

pub use error::{Error, Result};
