//! Road-corridor imagery pipeline: OSM motorway extraction, corridor buffering
//! and masking, 50×50 patch tiling, pluggable crack classification, the
//! Relative Highway Crack Density (RHCD) index and covariate correlation.
//!
//! Data-parallel inner loops (rasterization, tiling, classification, per-cell
//! raster reductions) run on rayon when the `parallel` feature is enabled and
//! fall back to plain iterators otherwise. Outputs are identical either way.

// `!(x > 0.0)` style guards are deliberate: they reject NaN as well.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod augment;
pub mod catalog;
pub mod classify;
pub mod corridor;
pub mod covariate;
pub mod error;
pub mod geojson;
pub mod geometry;
pub mod grid;
pub mod logging;
pub mod osm;
pub mod par;
pub mod pipeline;
pub mod raster;
pub mod rhcd;
pub mod synth;
pub mod tiler;

pub use error::{Error, Result};
pub use geometry::Point;
pub use grid::GridSpec;
