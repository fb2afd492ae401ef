use std::path::PathBuf;
use std::str::FromStr;

use clap::Args;
use serde::{Deserialize, Serialize};

use ape_core::pointcloud::{generate_dataset, save_dataset, ShapeClass};

use crate::common::{load_file_config, pick, require, write_run_config, CliError, VERSION};

#[derive(Args)]
pub struct GenerateArgs {
    /// Comma-separated shape classes (sphere, box, cylinder, flange4, flange8).
    #[arg(long, value_delimiter = ',')]
    classes: Option<Vec<String>>,
    /// Clouds per class [default: 100].
    #[arg(long)]
    per_class: Option<usize>,
    /// Points per cloud [default: 256].
    #[arg(long)]
    points: Option<usize>,
    /// Fraction of each class held out as the test split [default: 0.2].
    #[arg(long)]
    test_fraction: Option<f64>,
    /// Seed for shape sampling and the split assignment [default: 0].
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory for clouds, manifest.json and run_config.json.
    #[arg(long)]
    out: Option<PathBuf>,
    /// JSON file supplying any of the other flags; explicit flags win.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct GenerateFile {
    classes: Option<Vec<String>>,
    per_class: Option<usize>,
    points: Option<usize>,
    test_fraction: Option<f64>,
    seed: Option<u64>,
    out: Option<PathBuf>,
}

#[derive(Serialize)]
struct GenerateConfig {
    command: &'static str,
    version: &'static str,
    classes: Vec<String>,
    per_class: usize,
    points: usize,
    test_fraction: f64,
    seed: u64,
    out: PathBuf,
}

pub fn run(args: GenerateArgs) -> Result<(), CliError> {
    let file: GenerateFile = load_file_config(args.config.as_deref())?;
    let class_names = require(args.classes, file.classes, "--classes")?;
    let classes = class_names
        .iter()
        .map(|name| ShapeClass::from_str(name))
        .collect::<ape_core::Result<Vec<_>>>()?;
    let per_class = pick(args.per_class, file.per_class, 100);
    let points = pick(args.points, file.points, 256);
    let test_fraction = pick(args.test_fraction, file.test_fraction, 0.2);
    let seed = pick(args.seed, file.seed, 0);
    let out = require(args.out, file.out, "--out")?;

    let dataset = generate_dataset(&classes, per_class, points, test_fraction, seed)?;
    save_dataset(&dataset, &out)?;
    write_run_config(
        &out,
        &GenerateConfig {
            command: "generate",
            version: VERSION,
            classes: classes.iter().map(|c| c.name().to_string()).collect(),
            per_class,
            points,
            test_fraction,
            seed,
            out: out.clone(),
        },
    )?;
    println!(
        "wrote {} clouds and manifest.json to {}",
        dataset.len(),
        out.display()
    );
    Ok(())
}
