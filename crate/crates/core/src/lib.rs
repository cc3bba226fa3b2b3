//! Grid path finding as conditional image generation.
//!
//! The crate covers the whole pipeline: procedural obstacle maps with A*
//! ground truth ([`mapgen`], [`astar`]), the grayscale/class-raster codec
//! ([`codec`]), a small CPU neural-network stack with a U-Net generator and
//! a path-mask critic ([`nn`], [`model`]), adversarial training
//! ([`trainer`]), gap-filling post-processing ([`postproc`]) and the
//! MSE / gaps / success evaluation harness ([`metrics`]).

pub mod astar;
pub mod checkpoint;
pub mod codec;
pub mod error;
pub mod grid;
pub mod mapgen;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod postproc;
pub mod seed;
pub mod trainer;

pub use astar::{astar, dijkstra_reference, octile, Cost, SearchResult};
pub use codec::{ClassLogits, GrayImage};
pub use error::{Error, Result};
pub use grid::{validate_path, Cell, ClassRaster, Grid, Label, Occupancy, Path};
