//! Quantitative evaluation of heatmap quality via point-dropping curves.
//!
//! The protocol: compute one heatmap per test cloud, freeze it, then
//! repeatedly classify copies of each cloud with a growing fraction of
//! points shifted to the core. Dropping the most relevant points first
//! should destroy accuracy quickly; dropping the least relevant first
//! should preserve it. The area under each curve summarizes the effect,
//! so a good attribution method scores low under high-drop and high
//! under low-drop.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::networks::Network;
use crate::pointcloud::{Heatmap, PointCloud};

/// Which end of the relevance ranking gets dropped first.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DropMode {
    /// Most relevant points go first; accuracy should collapse early.
    HighDrop,
    /// Least relevant points go first; accuracy should hold out longest.
    LowDrop,
}

impl DropMode {
    /// Compact label used in report tables.
    pub fn short_label(self) -> &'static str {
        match self {
            DropMode::HighDrop => "H.D.",
            DropMode::LowDrop => "L.D.",
        }
    }
}

impl fmt::Display for DropMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DropMode::HighDrop => write!(f, "high_drop"),
            DropMode::LowDrop => write!(f, "low_drop"),
        }
    }
}

impl FromStr for DropMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<DropMode> {
        match s {
            "high_drop" | "high" => Ok(DropMode::HighDrop),
            "low_drop" | "low" => Ok(DropMode::LowDrop),
            other => Err(Error::Config(format!(
                "unknown drop mode '{other}' (expected high_drop or low_drop)"
            ))),
        }
    }
}

/// Mean test accuracy as a function of the dropped-point fraction.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DropCurve {
    pub method: String,
    pub mode: DropMode,
    /// Strictly increasing, starts at 0.
    pub fractions: Vec<f64>,
    /// Mean accuracy over the test clouds at each fraction.
    pub accuracies: Vec<f64>,
}

/// Both curves and their AUCs for one attribution method.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MethodResult {
    pub method: String,
    pub high_drop: DropCurve,
    pub low_drop: DropCurve,
    pub high_drop_auc: f64,
    pub low_drop_auc: f64,
}

/// AUC comparison across methods on one network. Lower is better under
/// high-drop, higher is better under low-drop.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ComparisonTable {
    pub network: String,
    pub results: Vec<MethodResult>,
    /// Index into `results` of the lowest high-drop AUC.
    pub best_high_drop: usize,
    /// Index into `results` of the highest low-drop AUC.
    pub best_low_drop: usize,
}

/// Orders point indices by heatmap value so that dropping a prefix drops
/// the requested end of the ranking. Ties always break toward the lower
/// index, in both modes, for reproducibility.
fn ranked_indices(heatmap: &Heatmap, mode: DropMode) -> Vec<usize> {
    let values = heatmap.values();
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_unstable_by(|&a, &b| match mode {
        DropMode::LowDrop => values[a].total_cmp(&values[b]).then(a.cmp(&b)),
        DropMode::HighDrop => values[b].total_cmp(&values[a]).then(a.cmp(&b)),
    });
    order
}

/// Classifies shifted copies of each test cloud at every fraction of the
/// step grid and averages correctness. The heatmaps are taken as given:
/// they are ranked once per cloud and never recomputed while points drop.
///
/// Fraction `f` drops `floor(f * n)` points from a fresh copy of the
/// original cloud, so the steps are independent rather than cumulative.
pub fn point_drop_curve(
    net: &Network,
    clouds: &[PointCloud],
    heatmaps: &[Heatmap],
    mode: DropMode,
    steps: usize,
) -> Result<DropCurve> {
    if clouds.is_empty() {
        return Err(Error::Precondition(
            "point_drop_curve needs at least one test cloud".into(),
        ));
    }
    if steps < 2 {
        return Err(Error::Precondition(format!(
            "point_drop_curve needs at least 2 steps, got {steps}"
        )));
    }
    if heatmaps.len() != clouds.len() {
        return Err(Error::Contract(format!(
            "{} heatmaps for {} clouds",
            heatmaps.len(),
            clouds.len()
        )));
    }
    for (i, (cloud, heatmap)) in clouds.iter().zip(heatmaps).enumerate() {
        if heatmap.len() != cloud.len() {
            return Err(Error::Contract(format!(
                "heatmap {i} covers {} points but cloud {i} has {}",
                heatmap.len(),
                cloud.len()
            )));
        }
        if cloud.label().is_none() {
            return Err(Error::Contract(format!("test cloud {i} has no label")));
        }
    }

    let fractions: Vec<f64> = (0..steps)
        .map(|i| i as f64 / (steps - 1) as f64)
        .collect();

    // One correctness row per cloud; the per-fraction reduction below is a
    // plain sum, so cloud order cannot affect the result.
    let rows: Vec<Vec<bool>> = clouds
        .par_iter()
        .zip(heatmaps.par_iter())
        .map(|(cloud, heatmap)| -> Result<Vec<bool>> {
            let label = cloud.label().expect("labels checked above");
            let order = ranked_indices(heatmap, mode);
            fractions
                .iter()
                .map(|&f| {
                    let count = ((f * cloud.len() as f64).floor() as usize).min(cloud.len());
                    let dropped = cloud.drop_points(&order[..count])?;
                    let (predicted, _) = net.predict(&dropped)?;
                    Ok(predicted == label)
                })
                .collect()
        })
        .collect::<Result<Vec<_>>>()?;

    let accuracies: Vec<f64> = (0..steps)
        .map(|s| {
            let correct = rows.iter().filter(|row| row[s]).count();
            correct as f64 / clouds.len() as f64
        })
        .collect();

    Ok(DropCurve {
        method: String::new(),
        mode,
        fractions,
        accuracies,
    })
}

/// Trapezoidal area under the curve, normalized by the fraction span so
/// the result stays in [0, 1] whenever the accuracies do.
pub fn auc(curve: &DropCurve) -> Result<f64> {
    let n = curve.fractions.len();
    if n < 2 || curve.accuracies.len() != n {
        return Err(Error::Precondition(format!(
            "auc needs at least 2 aligned samples, got {n} fractions and {} accuracies",
            curve.accuracies.len()
        )));
    }
    if curve.fractions.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::Precondition(
            "auc needs strictly increasing fractions".into(),
        ));
    }
    let mut area = 0.0;
    for i in 1..n {
        let width = curve.fractions[i] - curve.fractions[i - 1];
        area += width * (curve.accuracies[i] + curve.accuracies[i - 1]) / 2.0;
    }
    let span = curve.fractions[n - 1] - curve.fractions[0];
    Ok(area / span)
}

/// Runs both drop modes for every method and tabulates the AUCs.
/// `methods` pairs a display name with one frozen heatmap per test cloud.
pub fn compare_methods(
    net: &Network,
    clouds: &[PointCloud],
    methods: &[(String, Vec<Heatmap>)],
    steps: usize,
) -> Result<ComparisonTable> {
    if methods.is_empty() {
        return Err(Error::Precondition(
            "compare_methods needs at least one method".into(),
        ));
    }
    let mut results = Vec::with_capacity(methods.len());
    for (name, heatmaps) in methods {
        let mut high_drop = point_drop_curve(net, clouds, heatmaps, DropMode::HighDrop, steps)?;
        let mut low_drop = point_drop_curve(net, clouds, heatmaps, DropMode::LowDrop, steps)?;
        high_drop.method = name.clone();
        low_drop.method = name.clone();
        let high_drop_auc = auc(&high_drop)?;
        let low_drop_auc = auc(&low_drop)?;
        results.push(MethodResult {
            method: name.clone(),
            high_drop,
            low_drop,
            high_drop_auc,
            low_drop_auc,
        });
    }
    let best_high_drop = argbest(&results, |r| -r.high_drop_auc);
    let best_low_drop = argbest(&results, |r| r.low_drop_auc);
    Ok(ComparisonTable {
        network: net.kind_name().to_string(),
        results,
        best_high_drop,
        best_low_drop,
    })
}

/// Index of the maximal key; ties go to the earliest method.
fn argbest<F: Fn(&MethodResult) -> f64>(results: &[MethodResult], key: F) -> usize {
    let mut best = 0;
    for i in 1..results.len() {
        if key(&results[i]) > key(&results[best]) {
            best = i;
        }
    }
    best
}

impl ComparisonTable {
    /// Markdown table with one H.D. and one L.D. row per method; the best
    /// value in each mode is bold.
    pub fn to_markdown(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("| method | mode | {} |\n", self.network));
        out.push_str("| --- | --- | ---: |\n");
        for (i, r) in self.results.iter().enumerate() {
            let hd = format_cell(r.high_drop_auc, i == self.best_high_drop);
            let ld = format_cell(r.low_drop_auc, i == self.best_low_drop);
            out.push_str(&format!(
                "| {} | {} | {hd} |\n",
                r.method,
                DropMode::HighDrop.short_label()
            ));
            out.push_str(&format!(
                "| {} | {} | {ld} |\n",
                r.method,
                DropMode::LowDrop.short_label()
            ));
        }
        out
    }

    /// Full report (curves plus AUCs) as pretty-printed JSON.
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

fn format_cell(value: f64, best: bool) -> String {
    if best {
        format!("**{value:.3}**")
    } else {
        format!("{value:.3}")
    }
}
