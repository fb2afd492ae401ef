use std::fs;
use std::path::PathBuf;
use std::str::FromStr;

use clap::Args;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use ape_core::eval::compare_methods;
use ape_core::explain::{APEConfig, TargetPolicy};
use ape_core::networks::Network;
use ape_core::pointcloud::{load_dataset, Heatmap, PointCloud, Split};

use crate::common::{
    load_file_config, pick, require, require_file, write_run_config, CliError, Method, VERSION,
};
use crate::explain::explain_one;

#[derive(Args)]
pub struct EvaluateArgs {
    /// Trained checkpoint (checkpoint.bin from `train`).
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Dataset manifest; curves run over its test split.
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// Comma-separated methods to compare [default: ape,gradients].
    #[arg(long, value_delimiter = ',')]
    methods: Option<Vec<String>>,
    /// Fractions in the drop grid, endpoints included [default: 11].
    #[arg(long)]
    steps: Option<usize>,
    /// Outer iterations for the ape method [default: 4].
    #[arg(long)]
    lambda: Option<usize>,
    /// Points dropped per outer iteration [default: n / lambda].
    #[arg(long)]
    drop_count: Option<usize>,
    /// Comma-separated per-iteration merge weights [default: all 1].
    #[arg(long, value_delimiter = ',')]
    weights: Option<Vec<f64>>,
    /// Recorded in run_config.json; evaluation itself is deterministic.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory for report.json, report.md, run_config.json.
    #[arg(long)]
    out: Option<PathBuf>,
    /// JSON file supplying any of the other flags; explicit flags win.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct EvaluateFile {
    checkpoint: Option<PathBuf>,
    manifest: Option<PathBuf>,
    methods: Option<Vec<String>>,
    steps: Option<usize>,
    lambda: Option<usize>,
    drop_count: Option<usize>,
    weights: Option<Vec<f64>>,
    seed: Option<u64>,
    out: Option<PathBuf>,
}

#[derive(Serialize)]
struct EvaluateRunConfig {
    command: &'static str,
    version: &'static str,
    checkpoint: PathBuf,
    manifest: PathBuf,
    methods: Vec<Method>,
    steps: usize,
    lambda: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    drop_count: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    weights: Option<Vec<f64>>,
    seed: u64,
    out: PathBuf,
}

pub fn run(args: EvaluateArgs) -> Result<(), CliError> {
    let file: EvaluateFile = load_file_config(args.config.as_deref())?;
    let checkpoint = require(args.checkpoint, file.checkpoint, "--checkpoint")?;
    require_file(&checkpoint, "checkpoint")?;
    let manifest = require(args.manifest, file.manifest, "--manifest")?;
    require_file(&manifest, "manifest")?;
    let method_names = pick(
        args.methods,
        file.methods,
        vec!["ape".to_string(), "gradients".to_string()],
    );
    let methods = method_names
        .iter()
        .map(|name| Method::from_str(name))
        .collect::<Result<Vec<_>, _>>()?;
    if methods.is_empty() {
        return Err(CliError::Usage("--methods must name at least one method".into()));
    }
    let steps = pick(args.steps, file.steps, 11);
    let lambda = pick(args.lambda, file.lambda, 4);
    let drop_count = args.drop_count.or(file.drop_count);
    let weights = args.weights.or(file.weights);
    let seed = pick(args.seed, file.seed, 0);
    let out = require(args.out, file.out, "--out")?;

    let net = Network::load(&checkpoint)?;
    let dataset = load_dataset(&manifest)?;
    let clouds: Vec<PointCloud> = dataset
        .clouds
        .iter()
        .zip(&dataset.splits)
        .filter(|(_, &split)| split == Split::Test)
        .map(|(cloud, _)| cloud.clone())
        .collect();
    if clouds.is_empty() {
        return Err(CliError::Usage("manifest has no test split to evaluate on".into()));
    }

    let ape_cfg = APEConfig {
        lambda,
        n_l: drop_count,
        weights: weights.clone(),
        target: TargetPolicy::Predicted,
    };
    // Heatmaps are computed once per method here and handed to the curves
    // as frozen rankings; dropping never triggers re-explanation.
    let mut method_heatmaps = Vec::with_capacity(methods.len());
    for &method in &methods {
        let heatmaps: Vec<Heatmap> = clouds
            .par_iter()
            .map(|cloud| {
                explain_one(&net, cloud, method, &ape_cfg, None).map(|(heatmap, _)| heatmap)
            })
            .collect::<Result<Vec<_>, _>>()?;
        method_heatmaps.push((method.name().to_string(), heatmaps));
    }

    let table = compare_methods(&net, &clouds, &method_heatmaps, steps)?;
    fs::create_dir_all(&out)?;
    fs::write(out.join("report.json"), table.to_json()? + "\n")?;
    fs::write(out.join("report.md"), table.to_markdown())?;
    write_run_config(
        &out,
        &EvaluateRunConfig {
            command: "evaluate",
            version: VERSION,
            checkpoint,
            manifest,
            methods,
            steps,
            lambda,
            drop_count,
            weights,
            seed,
            out: out.clone(),
        },
    )?;
    for result in &table.results {
        println!(
            "{}: high-drop AUC {:.3}, low-drop AUC {:.3}",
            result.method, result.high_drop_auc, result.low_drop_auc
        );
    }
    println!("report written to {}", out.display());
    Ok(())
}
