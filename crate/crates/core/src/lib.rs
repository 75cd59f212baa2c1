//! Hyperspectral pansharpening toolkit.
//!
//! The crate fuses a low-resolution hyperspectral cube with a co-registered
//! high-resolution panchromatic image. Three fusion families are provided:
//!
//! * [`gsa`] — adaptive Gram-Schmidt component substitution,
//! * [`mtfglp`] — MTF-matched generalized Laplacian pyramid detail injection,
//! * [`hysure`] — subspace-regularized variational fusion solved by ADMM.
//!
//! Around the sharpeners sit the pieces needed to run and judge them: an
//! in-memory raster model with ENVI-style I/O ([`raster`], [`envi`]), sensor
//! simulation and band screening ([`preprocess`]), tiled execution for rasters
//! larger than memory-friendly ([`tiling`], [`pipeline`]), reduced- and
//! full-resolution quality protocols ([`metrics`], [`eval`]), a seeded
//! synthetic scene generator for ground-truth experiments ([`scene`]), and
//! principal-component false-color rendering ([`pca`]).

pub mod config;
pub mod envi;
pub mod error;
pub mod eval;
pub mod fft;
pub mod gsa;
pub mod hysure;
pub mod metrics;
pub mod mtfglp;
pub mod pca;
pub mod pipeline;
pub mod preprocess;
pub mod raster;
pub mod report;
pub mod scene;
pub mod sensor_estimate;
pub mod tiling;
pub mod vca;

pub use error::{Error, Result};
pub use preprocess::SensorModel;
pub use raster::{HyperCube, PanImage, RgbComposite};
