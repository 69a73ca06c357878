//! Panoramic capture geometry, time-varying Gaussian scenes, a differentiable
//! splat renderer, and the training and benchmarking pipeline built on them.

pub mod bench;
pub mod bridge;
pub mod camera;
pub mod error;
pub mod gaussian;
pub mod gradcheck;
pub mod image;
pub mod init;
pub mod losses;
pub mod optim;
pub mod pipeline;
pub mod render;
pub mod scene_io;

pub use error::{Error, Result};
