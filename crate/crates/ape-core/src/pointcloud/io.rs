//! Plain-text cloud formats and colored PLY export.

use std::fmt;
use std::fs;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::pointcloud::{Heatmap, PointCloud};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CloudFormat {
    /// One `x y z` triple per line, whitespace separated.
    Xyz,
    /// One `x,y,z` triple per line; an optional `x,y,z` header is skipped.
    Csv,
}

impl fmt::Display for CloudFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CloudFormat::Xyz => "xyz",
            CloudFormat::Csv => "csv",
        })
    }
}

impl FromStr for CloudFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "xyz" => Ok(CloudFormat::Xyz),
            "csv" => Ok(CloudFormat::Csv),
            other => Err(Error::Config(format!(
                "unknown cloud format {other:?}, expected xyz or csv"
            ))),
        }
    }
}

impl CloudFormat {
    /// Guesses from the file extension, defaulting to xyz.
    pub fn from_path(path: &Path) -> CloudFormat {
        match path.extension().and_then(|e| e.to_str()) {
            Some("csv") => CloudFormat::Csv,
            _ => CloudFormat::Xyz,
        }
    }
}

pub fn load_cloud(path: &Path, format: CloudFormat) -> Result<PointCloud> {
    let text = fs::read_to_string(path)?;
    parse_cloud(&text, format)
}

fn parse_cloud(text: &str, format: CloudFormat) -> Result<PointCloud> {
    let mut points = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        if format == CloudFormat::Csv && idx == 0 && line.eq_ignore_ascii_case("x,y,z") {
            continue;
        }
        let fields: Vec<&str> = match format {
            CloudFormat::Xyz => line.split_whitespace().collect(),
            CloudFormat::Csv => line.split(',').map(str::trim).collect(),
        };
        if fields.len() != 3 {
            return Err(Error::Parse {
                line: line_no,
                msg: format!("expected 3 coordinates, found {}", fields.len()),
            });
        }
        let mut p = [0.0; 3];
        for (slot, field) in p.iter_mut().zip(&fields) {
            *slot = field.parse::<f64>().map_err(|_| Error::Parse {
                line: line_no,
                msg: format!("{field:?} is not a number"),
            })?;
        }
        points.push(p);
    }
    if points.is_empty() {
        return Err(Error::Precondition("cloud file contains no points".into()));
    }
    PointCloud::new(points, None)
}

pub fn save_cloud(cloud: &PointCloud, path: &Path, format: CloudFormat) -> Result<()> {
    let mut out = String::new();
    if format == CloudFormat::Csv {
        out.push_str("x,y,z\n");
    }
    for p in cloud.points() {
        let line = match format {
            CloudFormat::Xyz => format!("{} {} {}\n", p[0], p[1], p[2]),
            CloudFormat::Csv => format!("{},{},{}\n", p[0], p[1], p[2]),
        };
        out.push_str(&line);
    }
    fs::write(path, out)?;
    Ok(())
}

/// Red channel for a heatmap value; blue is its mirror image.
fn heat_color(value: f64) -> (u8, u8, u8) {
    let r = (255.0 * value).round() as u8;
    let b = (255.0 * (1.0 - value)).round() as u8;
    (r, 0, b)
}

/// Writes an ASCII polygon file with per-vertex colors: low relevance is
/// blue, high relevance red, blending through (128,0,128) at the midpoint.
pub fn export_heatmap_ply(cloud: &PointCloud, heatmap: &Heatmap, path: &Path) -> Result<()> {
    if heatmap.len() != cloud.len() {
        return Err(Error::Contract(format!(
            "heatmap has {} values for {} points",
            heatmap.len(),
            cloud.len()
        )));
    }
    let mut file = fs::File::create(path)?;
    writeln!(file, "ply")?;
    writeln!(file, "format ascii 1.0")?;
    writeln!(file, "element vertex {}", cloud.len())?;
    writeln!(file, "property float x")?;
    writeln!(file, "property float y")?;
    writeln!(file, "property float z")?;
    writeln!(file, "property uchar red")?;
    writeln!(file, "property uchar green")?;
    writeln!(file, "property uchar blue")?;
    writeln!(file, "end_header")?;
    for (p, &v) in cloud.points().iter().zip(heatmap.values()) {
        let (r, g, b) = heat_color(v);
        writeln!(file, "{} {} {} {} {} {}", p[0], p[1], p[2], r, g, b)?;
    }
    Ok(())
}
