pub mod denoiser;
pub mod diffusion;
pub mod error;
pub mod geometry;
pub mod gradcheck;
pub mod heatmap;
pub mod io;
pub mod losses;
pub mod metrics;
pub mod synthdata;
pub mod uiv;
pub mod vec3;

pub use error::{Error, ErrorKind, Result};
