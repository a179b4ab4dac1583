//! Differentiable half-Gaussian splatting.
//!
//! Scenes are collections of [`HalfGaussianPrimitive`]s: anisotropic Gaussians
//! cut in two by a plane through their center, each half carrying its own
//! opacity. Rendering uses the closed-form ray integral of such a pair, which
//! is a 2D Gaussian footprint scaled by an erf term along the split.

pub mod error;
pub mod fixtures;
pub mod geometry;
pub mod image;
pub mod io;
pub mod kernel;
pub mod metrics;
pub mod raster;
pub mod sh;
pub mod trainer;
pub mod verify;

pub use error::{HgsError, Result};
pub use geometry::{CameraModel, HalfGaussianPrimitive, Scene};
pub use image::Image;
pub use raster::{render, render_backward, render_with, GradientSet, Kernel, PrimitiveGrad, RenderOutput};
