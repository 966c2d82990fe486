//! Digitization of paper ECG images into calibrated multi-lead time series.
//!
//! The pipeline runs segmentation, perspective rectification, grid-scale
//! estimation, layout identification and trace extraction in sequence; a
//! synthetic renderer supplies images with known ground truth and the
//! [`eval`] module scores reconstructions against references.

pub mod error;
pub mod eval;
pub mod geometry;
pub mod glyph;
pub mod grid_scale;
pub mod label;
pub mod layout;
pub mod perspective;
pub mod pipeline;
pub mod raster;
pub mod segmentation;
pub mod signal_csv;
pub mod synth;
pub mod trace;

pub use error::{Error, Result};
