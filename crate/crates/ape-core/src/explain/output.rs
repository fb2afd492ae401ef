//! Heatmap CSV files and the companion run metadata.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pointcloud::{Heatmap, PointCloud};

/// Writes `x,y,z,value` rows, one per point, aligned by index.
pub fn save_heatmap_csv(cloud: &PointCloud, heatmap: &Heatmap, path: &Path) -> Result<()> {
    if heatmap.len() != cloud.len() {
        return Err(Error::Contract(format!(
            "heatmap has {} values for {} points",
            heatmap.len(),
            cloud.len()
        )));
    }
    let mut out = String::from("x,y,z,value\n");
    for (p, v) in cloud.points().iter().zip(heatmap.values()) {
        out.push_str(&format!("{},{},{},{}\n", p[0], p[1], p[2], v));
    }
    fs::write(path, out)?;
    Ok(())
}

/// Everything a reader needs to interpret a heatmap file. Iteration
/// diagnostics only apply to the accumulated method; baselines leave them
/// unset.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ExplainMetadata {
    pub method: String,
    pub target: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub predicted: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_l: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weights: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub inner_iterations: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub never_dropped: Vec<usize>,
}

impl ExplainMetadata {
    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string_pretty(self)?;
        fs::write(path, json)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<ExplainMetadata> {
        let text = fs::read_to_string(path)?;
        Ok(serde_json::from_str(&text)?)
    }
}
