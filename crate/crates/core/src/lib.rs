//! Blendshape-driven talking-head machinery for mouth-region lip-sync.
//!
//! The crate covers the geometric and numerical side of the problem: a FACS
//! blendshape face model with eyeballs, expression-aware symmetric mesh
//! decimation, a z-buffered rasterizer producing the conditioning maps
//! (mean-face coordinates, sketch, 3D flow), landmark-driven parameter
//! fitting, flow warping operators, a blendshape diffusion sampler and the
//! double-reenactment lip-sync pipeline. Every learned component is a trait
//! so trained networks can be plugged in; the crate ships analytic stand-ins.

pub mod audio;
pub mod camera;
pub mod decimate;
pub mod diffusion;
pub mod error;
pub mod facemodel;
pub mod fit;
pub mod image;
pub mod io;
pub mod maps;
pub mod pipeline;
pub mod raster;
pub mod rotation;
pub mod synthetic;
pub mod warp;

pub use error::{Error, Result};
