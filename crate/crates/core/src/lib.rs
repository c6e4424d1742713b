//! Differentiable Gaussian splatting with camera motion blur and rolling shutter.

pub mod camera;
pub mod error;
pub mod geometry;
pub mod gradients;
pub mod image;
pub mod io;
pub mod optimizer;
pub mod parallel;
pub mod projection;
pub mod rasterizer;
pub mod scene;
pub mod seed;
pub mod simkit;

pub use error::{Error, Result};
