use std::fs;
use std::path::PathBuf;
use std::str::FromStr;

use clap::Args;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use ape_core::explain::{
    ape_explain, gradients_baseline, pcsn_baseline, save_heatmap_csv, APEConfig, ExplainMetadata,
    TargetPolicy,
};
use ape_core::networks::Network;
use ape_core::pointcloud::{
    export_heatmap_ply, load_cloud, load_dataset, CloudFormat, Heatmap, PointCloud, Split,
};

use crate::common::{
    load_file_config, pick, require, require_file, write_run_config, CliError, Method, VERSION,
};

#[derive(Args)]
pub struct ExplainArgs {
    /// Trained checkpoint (checkpoint.bin from `train`).
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Single cloud file (.xyz or .csv). Mutually exclusive with --manifest.
    #[arg(long)]
    cloud: Option<PathBuf>,
    /// Dataset manifest; explains every cloud in --split.
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// Which manifest split to explain: train or test [default: test].
    #[arg(long)]
    split: Option<String>,
    /// Attribution method: ape, gradients, or pcsn [default: ape].
    #[arg(long)]
    method: Option<String>,
    /// Outer iterations of the drop-and-reexplain loop [default: 4].
    #[arg(long)]
    lambda: Option<usize>,
    /// Points dropped after each outer iteration [default: n / lambda].
    #[arg(long)]
    drop_count: Option<usize>,
    /// Comma-separated per-iteration merge weights [default: all 1].
    #[arg(long, value_delimiter = ',')]
    weights: Option<Vec<f64>>,
    /// Class index to explain [default: the predicted class].
    #[arg(long)]
    target: Option<usize>,
    /// Also write a red-blue colored PLY next to each heatmap CSV.
    #[arg(long)]
    export_ply: bool,
    /// Recorded in run_config.json; explanation itself is deterministic.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// JSON file supplying any of the other flags; explicit flags win.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct ExplainFile {
    checkpoint: Option<PathBuf>,
    cloud: Option<PathBuf>,
    manifest: Option<PathBuf>,
    split: Option<String>,
    method: Option<String>,
    lambda: Option<usize>,
    drop_count: Option<usize>,
    weights: Option<Vec<f64>>,
    target: Option<usize>,
    export_ply: Option<bool>,
    seed: Option<u64>,
    out: Option<PathBuf>,
}

#[derive(Serialize)]
struct ExplainRunConfig {
    command: &'static str,
    version: &'static str,
    checkpoint: PathBuf,
    #[serde(skip_serializing_if = "Option::is_none")]
    cloud: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    manifest: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    split: Option<String>,
    method: Method,
    #[serde(skip_serializing_if = "Option::is_none")]
    lambda: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    drop_count: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    weights: Option<Vec<f64>>,
    target: String,
    export_ply: bool,
    seed: u64,
    out: PathBuf,
}

/// One heatmap plus the sidecar metadata for a single cloud.
pub fn explain_one(
    net: &Network,
    cloud: &PointCloud,
    method: Method,
    ape_cfg: &APEConfig,
    target: Option<usize>,
) -> Result<(Heatmap, ExplainMetadata), CliError> {
    match method {
        Method::Ape => {
            let outcome = ape_explain(net, cloud, ape_cfg)?;
            let metadata = ExplainMetadata {
                method: "ape".into(),
                target: outcome.target,
                predicted: Some(outcome.predicted),
                lambda: Some(outcome.lambda),
                n_l: Some(outcome.n_l),
                weights: Some(outcome.weights),
                inner_iterations: Some(outcome.inner_iterations),
                warnings: outcome.warnings,
                never_dropped: outcome.never_dropped,
            };
            Ok((outcome.heatmap, metadata))
        }
        Method::Gradients | Method::Pcsn => {
            let (predicted, _) = net.predict(cloud)?;
            let resolved = target.unwrap_or(predicted);
            let heatmap = match method {
                Method::Gradients => gradients_baseline(net, cloud, resolved)?,
                _ => pcsn_baseline(net, cloud, resolved)?,
            };
            let metadata = ExplainMetadata {
                method: method.name().into(),
                target: resolved,
                predicted: Some(predicted),
                lambda: None,
                n_l: None,
                weights: None,
                inner_iterations: None,
                warnings: Vec::new(),
                never_dropped: Vec::new(),
            };
            Ok((heatmap, metadata))
        }
    }
}

/// Clouds to explain, each with the stem its output files are named by.
/// Manifest stems mirror the file names `generate` wrote.
fn gather_clouds(
    cloud: Option<&PathBuf>,
    manifest: Option<&PathBuf>,
    split: Split,
) -> Result<Vec<(String, PointCloud)>, CliError> {
    match (cloud, manifest) {
        (Some(path), None) => {
            require_file(path, "cloud file")?;
            let stem = path
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| "cloud".into());
            let loaded = load_cloud(path, CloudFormat::from_path(path))?;
            Ok(vec![(stem, loaded)])
        }
        (None, Some(path)) => {
            require_file(path, "manifest")?;
            let dataset = load_dataset(path)?;
            let mut counters = vec![0usize; dataset.class_names.len()];
            let mut selected = Vec::new();
            for (cloud, &entry_split) in dataset.clouds.iter().zip(&dataset.splits) {
                let label = cloud.label().expect("datasets are fully labeled");
                let stem = format!("{}_{:04}", dataset.class_names[label], counters[label]);
                counters[label] += 1;
                if entry_split == split {
                    selected.push((stem, cloud.clone()));
                }
            }
            if selected.is_empty() {
                return Err(CliError::Usage(format!(
                    "manifest has no clouds in the {split:?} split"
                )));
            }
            Ok(selected)
        }
        _ => Err(CliError::Usage(
            "provide exactly one of --cloud or --manifest".into(),
        )),
    }
}

pub fn run(args: ExplainArgs) -> Result<(), CliError> {
    let file: ExplainFile = load_file_config(args.config.as_deref())?;
    let checkpoint = require(args.checkpoint, file.checkpoint, "--checkpoint")?;
    require_file(&checkpoint, "checkpoint")?;
    let method = Method::from_str(&pick(args.method, file.method, "ape".to_string()))?;
    let lambda = pick(args.lambda, file.lambda, 4);
    let drop_count = args.drop_count.or(file.drop_count);
    let weights = args.weights.or(file.weights);
    let target = args.target.or(file.target);
    let export_ply = args.export_ply || file.export_ply.unwrap_or(false);
    let seed = pick(args.seed, file.seed, 0);
    let out = require(args.out, file.out, "--out")?;
    let cloud_path = args.cloud.or(file.cloud);
    let manifest_path = args.manifest.or(file.manifest);
    let split_name = pick(
        args.split,
        file.split,
        "test".to_string(),
    );
    let split = match split_name.as_str() {
        "train" => Split::Train,
        "test" => Split::Test,
        other => {
            return Err(CliError::Usage(format!(
                "unknown split '{other}' (expected train or test)"
            )))
        }
    };

    let net = Network::load(&checkpoint)?;
    if let Some(t) = target {
        if t >= net.classes() {
            return Err(CliError::Usage(format!(
                "target class {t} out of range for {} classes",
                net.classes()
            )));
        }
    }
    let ape_cfg = APEConfig {
        lambda,
        n_l: drop_count,
        weights: weights.clone(),
        target: target.map(TargetPolicy::Class).unwrap_or(TargetPolicy::Predicted),
    };

    let clouds = gather_clouds(cloud_path.as_ref(), manifest_path.as_ref(), split)?;
    fs::create_dir_all(&out)?;
    clouds
        .par_iter()
        .map(|(stem, cloud)| -> Result<(), CliError> {
            let (heatmap, metadata) = explain_one(&net, cloud, method, &ape_cfg, target)?;
            save_heatmap_csv(cloud, &heatmap, &out.join(format!("{stem}_heatmap.csv")))?;
            metadata.save(&out.join(format!("{stem}_metadata.json")))?;
            if export_ply {
                export_heatmap_ply(cloud, &heatmap, &out.join(format!("{stem}_heatmap.ply")))?;
            }
            Ok(())
        })
        .collect::<Result<Vec<_>, _>>()?;

    write_run_config(
        &out,
        &ExplainRunConfig {
            command: "explain",
            version: VERSION,
            checkpoint,
            cloud: cloud_path,
            manifest: manifest_path.clone(),
            split: manifest_path.map(|_| split_name),
            method,
            lambda: (method == Method::Ape).then_some(lambda),
            drop_count,
            weights,
            target: target.map_or("predicted".to_string(), |t| t.to_string()),
            export_ply,
            seed,
            out: out.clone(),
        },
    )?;
    println!(
        "explained {} cloud(s) with {method} into {}",
        clouds.len(),
        out.display()
    );
    Ok(())
}
