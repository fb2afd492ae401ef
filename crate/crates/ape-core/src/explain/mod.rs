//! Accumulated piecewise explanations.
//!
//! The attribution for one cloud is assembled in two nested loops. The
//! inner loop produces an initial heatmap: run the classifier, weight the
//! feature maps A by the globally averaged gradients of the target class
//! score, keep the positive part, record those values for the points behind
//! the feature rows, then shift-drop exactly those points and repeat until
//! every alive point has a value. Raw values from all inner iterations are
//! written into one buffer and min-max normalized once at the end; the
//! per-iteration values are deliberately comparable because they share one
//! normalization (normalizing per iteration first destroys that, and a
//! guard test pins the difference).
//!
//! The outer loop drops the lowest-relevance points and re-explains the
//! remainder, so early-dropped points keep the relevance they earned while
//! the survivors get re-ranked among themselves. The final heatmap is the
//! pointwise weighted maximum across the outer iterations.

mod output;

pub use output::{save_heatmap_csv, ExplainMetadata};

use crate::error::{Error, Result};
use crate::networks::Network;
use crate::pointcloud::{minmax_normalize, Heatmap, PointCloud};

/// Which class score to explain.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TargetPolicy {
    /// Explain the class the network itself predicts for the fresh cloud.
    Predicted,
    Class(usize),
}

#[derive(Debug, Clone)]
pub struct APEConfig {
    /// Outer iteration count.
    pub lambda: usize,
    /// Points dropped after each outer iteration; `None` means floor(n / lambda).
    pub n_l: Option<usize>,
    /// Per-iteration merge weights; `None` means all ones.
    pub weights: Option<Vec<f64>>,
    pub target: TargetPolicy,
}

impl Default for APEConfig {
    fn default() -> Self {
        APEConfig {
            lambda: 4,
            n_l: None,
            weights: None,
            target: TargetPolicy::Predicted,
        }
    }
}

impl APEConfig {
    /// Resolves defaults against a concrete cloud size and class count.
    fn resolve(&self, n: usize, classes: usize) -> Result<(usize, Vec<f64>)> {
        if self.lambda == 0 {
            return Err(Error::Config("lambda must be at least 1".into()));
        }
        let n_l = self.n_l.unwrap_or(n / self.lambda);
        if n_l == 0 {
            return Err(Error::Config(format!(
                "drop count resolved to 0 (n = {n}, lambda = {})",
                self.lambda
            )));
        }
        let weights = match &self.weights {
            Some(w) => {
                if w.len() != self.lambda {
                    return Err(Error::Config(format!(
                        "{} weights for {} iterations",
                        w.len(),
                        self.lambda
                    )));
                }
                if w.iter().any(|&x| !(x > 0.0)) {
                    return Err(Error::Config("merge weights must be positive".into()));
                }
                w.clone()
            }
            None => vec![1.0; self.lambda],
        };
        if let TargetPolicy::Class(c) = self.target {
            if c >= classes {
                return Err(Error::Config(format!(
                    "target class {c} out of range for {classes} classes"
                )));
            }
        }
        Ok((n_l, weights))
    }
}

/// Gradients of one class score at the feature-map layer, plus everything
/// needed to turn them into point attributions.
#[derive(Debug, Clone)]
pub struct FeatureGradients {
    /// dy_c / dA, row-major n' x K.
    pub values: Vec<f64>,
    /// A itself, row-major n' x K.
    pub activations: Vec<f64>,
    pub rows: usize,
    pub cols: usize,
    /// Input point index behind each row.
    pub association: Vec<usize>,
}

/// Raw (pre-normalization) values for the points one inner iteration
/// explained. Values are nonnegative by construction.
#[derive(Debug, Clone, PartialEq)]
pub struct PartialHeatmap {
    pub neuron_values: Vec<f64>,
    pub explained_indices: Vec<usize>,
}

/// An initial heatmap plus its inner-loop diagnostics.
#[derive(Debug)]
pub struct InnerOutcome {
    pub heatmap: Heatmap,
    /// One entry per inner iteration; indices partition the alive points.
    pub partials: Vec<PartialHeatmap>,
    pub warnings: Vec<String>,
}

impl InnerOutcome {
    pub fn iterations(&self) -> usize {
        self.partials.len()
    }
}

/// Full outer-loop result.
#[derive(Debug)]
pub struct ApeOutcome {
    pub heatmap: Heatmap,
    pub initial_heatmaps: Vec<Heatmap>,
    /// Inner iteration count m per outer iteration.
    pub inner_iterations: Vec<usize>,
    pub lambda: usize,
    pub n_l: usize,
    pub weights: Vec<f64>,
    pub target: usize,
    pub predicted: usize,
    /// Points still alive after the last outer iteration.
    pub never_dropped: Vec<usize>,
    pub warnings: Vec<String>,
}

/// Runs the classifier and differentiates the pre-softmax score of
/// `target` w.r.t. the feature maps. The logit (not the softmax output) is
/// the seed: probability gradients saturate once the network is confident.
pub fn feature_gradients(net: &Network, cloud: &PointCloud, target: usize) -> Result<FeatureGradients> {
    let mut pass = net.forward(cloud, false)?;
    let score = pass.class_score(target)?;
    let grads = pass.tape.backward(score)?;
    let shape = pass.tape.shape(pass.feature_maps).to_vec();
    let (rows, cols) = (shape[0], shape[1]);
    let values = grads
        .get(pass.feature_maps)
        .map(|g| g.to_vec())
        .unwrap_or_else(|| vec![0.0; rows * cols]);
    Ok(FeatureGradients {
        values,
        activations: pass.tape.values(pass.feature_maps).to_vec(),
        rows,
        cols,
        association: pass.association,
    })
}

/// Global average pooling of a gradient tensor: column means.
pub fn gap_weights(grads: &[f64], rows: usize, cols: usize) -> Result<Vec<f64>> {
    if grads.len() != rows * cols || rows == 0 {
        return Err(Error::Contract(format!(
            "gradient tensor of {} values is not {rows} x {cols}",
            grads.len()
        )));
    }
    let mut alpha = vec![0.0; cols];
    for row in 0..rows {
        for col in 0..cols {
            alpha[col] += grads[row * cols + col];
        }
    }
    for a in &mut alpha {
        *a /= rows as f64;
    }
    Ok(alpha)
}

/// Per-row positive part of the alpha-weighted feature maps. Values stay
/// raw; normalization happens once per initial heatmap, not here.
pub fn partial_heatmap(
    activations: &[f64],
    rows: usize,
    cols: usize,
    alpha: &[f64],
    association: &[usize],
) -> Result<PartialHeatmap> {
    if activations.len() != rows * cols {
        return Err(Error::Contract(format!(
            "feature tensor of {} values is not {rows} x {cols}",
            activations.len()
        )));
    }
    if alpha.len() != cols || association.len() != rows {
        return Err(Error::Contract(format!(
            "alpha ({}) or association ({}) does not match {rows} x {cols} features",
            alpha.len(),
            association.len()
        )));
    }
    let neuron_values = (0..rows)
        .map(|row| {
            let acc: f64 = (0..cols).map(|col| alpha[col] * activations[row * cols + col]).sum();
            acc.max(0.0)
        })
        .collect();
    Ok(PartialHeatmap {
        neuron_values,
        explained_indices: association.to_vec(),
    })
}

/// Scatters raw per-iteration values into one length-`n` buffer, then
/// min-max normalizes the whole buffer once. Points no partial covers get
/// raw value 0. Indices must be distinct across partials: every point is
/// explained at most once.
pub fn concatenate_then_normalize(n: usize, partials: &[PartialHeatmap]) -> Result<Vec<f64>> {
    let mut raw = vec![0.0; n];
    let mut seen = vec![false; n];
    for partial in partials {
        for (&idx, &value) in partial.explained_indices.iter().zip(&partial.neuron_values) {
            if idx >= n {
                return Err(Error::Contract(format!(
                    "explained index {idx} out of range for {n} points"
                )));
            }
            if seen[idx] {
                return Err(Error::Contract(format!("point {idx} explained twice")));
            }
            seen[idx] = true;
            raw[idx] = value;
        }
    }
    Ok(minmax_normalize(&raw))
}

/// Inner loop: explains every alive point of `cloud` in segments of one
/// forward pass each, then normalizes the accumulated raw values once.
/// Fixed-association networks finish in exactly one iteration; sampling
/// networks take ceil(alive / n') passes because each pass samples only
/// unexplained points.
pub fn initial_heatmap(net: &Network, cloud: &PointCloud, target: usize) -> Result<InnerOutcome> {
    let n = cloud.len();
    let mut working = cloud.clone();
    let mut warnings = Vec::new();
    let mut partials: Vec<PartialHeatmap> = Vec::new();

    let has_work = |c: &PointCloud| (0..n).any(|i| c.is_alive(i) && !c.is_explained(i));
    if !has_work(&working) {
        return Err(Error::Precondition(
            "initial heatmap needs at least one alive unexplained point".into(),
        ));
    }

    while has_work(&working) {
        let fg = feature_gradients(net, &working, target)?;
        let alpha = gap_weights(&fg.values, fg.rows, fg.cols)?;
        let full = partial_heatmap(&fg.activations, fg.rows, fg.cols, &alpha, &fg.association)?;

        // Keep only rows that explain something new; dead rows (possible
        // for identity associations over dropped points) contribute 0.
        let mut values = Vec::new();
        let mut indices = Vec::new();
        for (&idx, &value) in full.explained_indices.iter().zip(&full.neuron_values) {
            if working.is_alive(idx) && !working.is_explained(idx) {
                values.push(value);
                indices.push(idx);
            }
        }
        if indices.is_empty() {
            warnings.push(format!(
                "no progress after {} inner iterations; remaining points keep value 0",
                partials.len()
            ));
            break;
        }
        for &idx in &indices {
            working.mark_explained(idx);
            working.drop_in_place(idx);
        }
        partials.push(PartialHeatmap {
            neuron_values: values,
            explained_indices: indices,
        });
    }

    let values = concatenate_then_normalize(n, &partials)?;
    Ok(InnerOutcome {
        heatmap: Heatmap::from_normalized(values)?,
        partials,
        warnings,
    })
}

/// Outer loop: explain, drop the weakest points, explain again. The merge
/// takes the pointwise maximum of the weighted initial heatmaps, and only
/// renormalizes when some weight differs from 1 (uniform weights already
/// leave the maximum at exactly 1).
pub fn ape_explain(net: &Network, cloud: &PointCloud, cfg: &APEConfig) -> Result<ApeOutcome> {
    let n = cloud.len();
    let (n_l, weights) = cfg.resolve(n, net.classes())?;
    let (predicted, _) = net.predict(cloud)?;
    let target = match cfg.target {
        TargetPolicy::Predicted => predicted,
        TargetPolicy::Class(c) => c,
    };

    let mut working = cloud.clone();
    let mut initial_heatmaps = Vec::with_capacity(cfg.lambda);
    let mut inner_iterations = Vec::with_capacity(cfg.lambda);
    let mut warnings = Vec::new();

    for iteration in 0..cfg.lambda {
        if working.alive_count() == 0 {
            warnings.push(format!(
                "iteration {iteration}: every point already dropped, heatmap is zero"
            ));
            initial_heatmaps.push(Heatmap::from_normalized(vec![0.0; n])?);
            inner_iterations.push(0);
            continue;
        }
        let inner = initial_heatmap(net, &working, target)?;
        inner_iterations.push(inner.iterations());
        warnings.extend(inner.warnings);

        // Weakest alive points go first; ties resolve to the lower index.
        let mut alive: Vec<usize> = working.alive_indices();
        let values = inner.heatmap.values();
        alive.sort_by(|&a, &b| {
            values[a]
                .partial_cmp(&values[b])
                .expect("heatmap values are finite")
                .then(a.cmp(&b))
        });
        alive.truncate(n_l.min(alive.len()));
        working = working.drop_points(&alive)?;
        initial_heatmaps.push(inner.heatmap);
    }

    let mut merged = vec![0.0; n];
    for (lmap, &w) in initial_heatmaps.iter().zip(&weights) {
        for (slot, &v) in merged.iter_mut().zip(lmap.values()) {
            let wv = w * v;
            if wv > *slot {
                *slot = wv;
            }
        }
    }
    let final_values = if weights.iter().any(|&w| w != 1.0) {
        minmax_normalize(&merged)
    } else {
        merged
    };

    Ok(ApeOutcome {
        heatmap: Heatmap::from_normalized(final_values)?,
        initial_heatmaps,
        inner_iterations,
        lambda: cfg.lambda,
        n_l,
        weights,
        target,
        predicted,
        never_dropped: working.alive_indices(),
        warnings,
    })
}

/// Saliency baseline: per-point Euclidean norm of the loss gradient
/// w.r.t. the point's coordinates, min-max normalized.
pub fn gradients_baseline(net: &Network, cloud: &PointCloud, target: usize) -> Result<Heatmap> {
    let g = loss_point_gradients(net, cloud, target)?;
    let scores: Vec<f64> = g
        .chunks_exact(3)
        .map(|p| (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt())
        .collect();
    Ok(Heatmap::from_raw(&scores))
}

/// Shift-simulation baseline: score is the positive part of the loss
/// decrease predicted for moving a point toward the cloud median,
/// s_i = max(0, -(P_i - median) . dloss/dP_i), min-max normalized.
pub fn pcsn_baseline(net: &Network, cloud: &PointCloud, target: usize) -> Result<Heatmap> {
    let g = loss_point_gradients(net, cloud, target)?;
    let median = coordinate_median(cloud.points());
    let scores: Vec<f64> = cloud
        .points()
        .iter()
        .zip(g.chunks_exact(3))
        .map(|(p, gi)| {
            let radial = [p[0] - median[0], p[1] - median[1], p[2] - median[2]];
            (-(radial[0] * gi[0] + radial[1] * gi[1] + radial[2] * gi[2])).max(0.0)
        })
        .collect();
    Ok(Heatmap::from_raw(&scores))
}

fn loss_point_gradients(net: &Network, cloud: &PointCloud, target: usize) -> Result<Vec<f64>> {
    let mut pass = net.forward(cloud, true)?;
    let loss = pass.loss(target)?;
    let grads = pass.tape.backward(loss)?;
    Ok(grads
        .get(pass.points)
        .map(|g| g.to_vec())
        .unwrap_or_else(|| vec![0.0; cloud.len() * 3]))
}

fn coordinate_median(points: &[[f64; 3]]) -> [f64; 3] {
    let mut median = [0.0; 3];
    let n = points.len();
    for axis in 0..3 {
        let mut values: Vec<f64> = points.iter().map(|p| p[axis]).collect();
        values.sort_by(|a, b| a.partial_cmp(b).expect("finite coordinates"));
        median[axis] = if n % 2 == 1 {
            values[n / 2]
        } else {
            (values[n / 2 - 1] + values[n / 2]) / 2.0
        };
    }
    median
}
