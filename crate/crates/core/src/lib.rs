//! Subsurface tomographic SAR toolkit.
//!
//! End-to-end pieces for P-band nest mapping at desk scale: synthetic forest
//! scenes over a discrete soil volume, range-compressed echo simulation along
//! helical or linear trajectories, time-domain back-projection into
//! tomographic layer stacks, reflectivity/volume analysis, a labeled-patch
//! dataset builder, a small from-scratch CNN framework, and the detection /
//! size-estimation mapping with its evaluation metrics.
//!
//! Data-parallel kernels run on rayon when the default `parallel` feature is
//! enabled; building with `--no-default-features` selects the sequential
//! fallback, which produces bit-identical output.

pub mod dataset;
pub mod echo;
pub mod error;
pub mod focus;
pub mod grid;
pub mod image;
mod lut;
pub mod mapping;
pub mod nn;
pub mod raster;
pub mod rng;
pub mod scene;
pub mod tomo;

pub use error::{CoreError, ErrorClass, Result};
pub use grid::{GeoGrid, DEFAULT_SPACING_M};
pub use image::{Complex32, ComplexImage, RealImage, RealStack, TomographicStack};
pub use rng::Rng;
