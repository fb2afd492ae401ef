//! Point cloud classification and gradient-based attribution heatmaps.
//!
//! The crate is layered bottom-up: a tape-based autodiff engine, point
//! cloud containers and synthetic shape generators, two small point
//! classifiers, the accumulated piecewise explanation pipeline, and a
//! point-dropping evaluation harness for comparing attribution methods.

pub mod autodiff;
pub mod error;
pub mod eval;
pub mod explain;
pub mod networks;
pub mod pointcloud;

pub use error::{Error, Result};
