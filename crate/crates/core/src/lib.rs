//! Sinkhole mapping from elevation or depth rasters.
//!
//! The pipeline fills closed depressions ([`hydro`]), turns the surviving
//! depressions into box prompts ([`labeling`]), asks a promptable segmenter
//! for one mask per box ([`segmenter`]), fuses and stitches the masks
//! ([`tiling`]) and scores the result against ground truth ([`eval`]).
//! [`synth`] generates terrains with known sinkholes for testing.

pub mod ascii_grid;
pub mod config;
pub mod error;
pub mod eval;
pub mod hydro;
pub mod labeling;
pub mod mock_server;
pub mod pipeline;
pub mod pnm;
pub mod raster;
pub mod segmenter;
pub mod synth;
pub mod tiling;

pub use error::{Error, Result};
pub use raster::{BinaryMask, GeoTransform, Raster};
