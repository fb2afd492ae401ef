//! Point cloud containers, dropping semantics, and heatmap values.
//!
//! Dropping a point never removes it: the coordinate is shifted to the
//! cloud's stored core so classifier inputs keep a fixed `n x 3` shape.

mod dataset;
mod io;
mod shapes;

pub use dataset::{generate_dataset, load_dataset, save_dataset, DatasetEntry, LabeledDataset, Split};
pub use io::{export_heatmap_ply, load_cloud, save_cloud, CloudFormat};
pub use shapes::{make_shape, ShapeClass};

use crate::error::{Error, Result};

/// A fixed-size set of 3-D points with drop/explain bookkeeping.
///
/// `core` is the arithmetic centroid of the cloud as constructed, computed
/// once; every later drop shifts to this same coordinate. Recomputing it
/// after shifts would drift the core toward itself.
#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    points: Vec<[f64; 3]>,
    label: Option<usize>,
    explained: Vec<bool>,
    alive: Vec<bool>,
    core: [f64; 3],
}

fn mean_of(points: &[[f64; 3]]) -> [f64; 3] {
    let n = points.len() as f64;
    let mut sum = [0.0; 3];
    for p in points {
        for (s, c) in sum.iter_mut().zip(p) {
            *s += c;
        }
    }
    [sum[0] / n, sum[1] / n, sum[2] / n]
}

impl PointCloud {
    pub fn new(points: Vec<[f64; 3]>, label: Option<usize>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::Precondition("point cloud needs at least one point".into()));
        }
        if points.iter().flatten().any(|c| !c.is_finite()) {
            return Err(Error::Precondition("point coordinates must be finite".into()));
        }
        let n = points.len();
        let core = mean_of(&points);
        Ok(PointCloud {
            points,
            label,
            explained: vec![false; n],
            alive: vec![true; n],
            core,
        })
    }

    pub fn with_label(mut self, label: usize) -> Self {
        self.label = Some(label);
        self
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        false // n >= 1 by construction
    }

    pub fn points(&self) -> &[[f64; 3]] {
        &self.points
    }

    pub fn point(&self, i: usize) -> [f64; 3] {
        self.points[i]
    }

    pub fn label(&self) -> Option<usize> {
        self.label
    }

    /// The stored spherical core: the centroid of the cloud as constructed.
    pub fn core(&self) -> [f64; 3] {
        self.core
    }

    pub fn centroid(&self) -> [f64; 3] {
        self.core
    }

    pub fn is_alive(&self, i: usize) -> bool {
        self.alive[i]
    }

    pub fn is_explained(&self, i: usize) -> bool {
        self.explained[i]
    }

    pub fn alive_mask(&self) -> &[bool] {
        &self.alive
    }

    pub fn explained_mask(&self) -> &[bool] {
        &self.explained
    }

    pub fn alive_indices(&self) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.alive[i]).collect()
    }

    pub fn alive_count(&self) -> usize {
        self.alive.iter().filter(|&&a| a).count()
    }

    /// Flattened row-major coordinates, the classifier input layout.
    pub fn flat_coords(&self) -> Vec<f64> {
        self.points.iter().flatten().copied().collect()
    }

    /// Returns a copy with the listed points shifted to the core and marked
    /// dead. Duplicates in `indices` are tolerated; `n` never changes.
    pub fn drop_points(&self, indices: &[usize]) -> Result<PointCloud> {
        let mut out = self.clone();
        for &i in indices {
            if i >= self.len() {
                return Err(Error::Index(format!(
                    "drop index {i} out of range for {} points",
                    self.len()
                )));
            }
            if !self.alive[i] {
                return Err(Error::Index(format!("point {i} is already dropped")));
            }
            out.points[i] = out.core;
            out.alive[i] = false;
        }
        Ok(out)
    }

    pub(crate) fn drop_in_place(&mut self, i: usize) {
        self.points[i] = self.core;
        self.alive[i] = false;
    }

    pub(crate) fn mark_explained(&mut self, i: usize) {
        self.explained[i] = true;
    }

    /// Centers on the centroid and scales the farthest point to norm 1.
    /// Degenerate clouds (all points coincident) cannot be normalized.
    pub fn normalize_unit_sphere(&self) -> Result<PointCloud> {
        let c = mean_of(&self.points);
        let mut centered: Vec<[f64; 3]> = self
            .points
            .iter()
            .map(|p| [p[0] - c[0], p[1] - c[1], p[2] - c[2]])
            .collect();
        let max_norm = centered
            .iter()
            .map(|p| (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt())
            .fold(0.0f64, f64::max);
        if max_norm <= f64::EPSILON {
            return Err(Error::Precondition(
                "cannot normalize a cloud of coincident points".into(),
            ));
        }
        for p in &mut centered {
            for coord in p {
                *coord /= max_norm;
            }
        }
        let mut out = self.clone();
        out.core = mean_of(&centered);
        out.points = centered;
        Ok(out)
    }
}

/// Per-point contribution values aligned to a cloud's indices.
///
/// Values live in [0,1]; unless the map is identically zero its maximum is
/// exactly 1 (min-max normalized).
#[derive(Debug, Clone, PartialEq)]
pub struct Heatmap {
    values: Vec<f64>,
}

impl Heatmap {
    /// Min-max normalizes raw values into a valid heatmap.
    pub fn from_raw(values: &[f64]) -> Heatmap {
        Heatmap {
            values: minmax_normalize(values),
        }
    }

    /// Wraps values that already satisfy the heatmap invariants.
    pub fn from_normalized(values: Vec<f64>) -> Result<Heatmap> {
        if values.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::Contract("heatmap values must lie in [0,1]".into()));
        }
        let max = values.iter().cloned().fold(0.0f64, f64::max);
        if max != 0.0 && max != 1.0 {
            return Err(Error::Contract(format!(
                "heatmap maximum must be 0 or 1, got {max}"
            )));
        }
        Ok(Heatmap { values })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Indices ordered by ascending value, ties by ascending index. The
    /// stable sort makes drop order reproducible.
    pub fn ascending_indices(&self) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..self.values.len()).collect();
        idx.sort_by(|&a, &b| {
            self.values[a]
                .partial_cmp(&self.values[b])
                .expect("heatmap values are finite")
                .then(a.cmp(&b))
        });
        idx
    }
}

/// Maps values affinely onto [0,1]; a constant vector maps to all zeros.
pub fn minmax_normalize(values: &[f64]) -> Vec<f64> {
    debug_assert!(values.iter().all(|v| v.is_finite()));
    let min = values.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !(max > min) {
        return vec![0.0; values.len()];
    }
    let span = max - min;
    values.iter().map(|v| (v - min) / span).collect()
}
