use std::fs;
use std::path::PathBuf;
use std::str::FromStr;

use clap::Args;
use serde::{Deserialize, Serialize};

use ape_core::networks::{
    train, EpochMetrics, FixedNet, Network, Optimizer, TrainConfig, VariableNet,
};
use ape_core::pointcloud::load_dataset;

use crate::common::{
    load_file_config, pick, require, require_file, write_run_config, CliError, VERSION,
};

#[derive(Args)]
pub struct TrainArgs {
    /// Dataset manifest (manifest.json from `generate`).
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// Network kind: fixed or variable [default: fixed].
    #[arg(long)]
    net: Option<String>,
    /// Width of the final feature layer [default: 64].
    #[arg(long)]
    feature_maps: Option<usize>,
    /// Variable net only: input-to-sample point ratio [default: 4].
    #[arg(long)]
    reduction: Option<usize>,
    /// Variable net only: neighbors grouped per sampled point [default: 16].
    #[arg(long)]
    neighbors: Option<usize>,
    /// Training epochs [default: 30].
    #[arg(long)]
    epochs: Option<usize>,
    /// Clouds per gradient step [default: 8].
    #[arg(long)]
    batch_size: Option<usize>,
    /// Step size [default: 0.001].
    #[arg(long)]
    learning_rate: Option<f64>,
    /// sgd or adam [default: adam].
    #[arg(long)]
    optimizer: Option<String>,
    /// Seed for weight init and epoch shuffling [default: 0].
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory for checkpoint.bin, metrics.json, run_config.json.
    #[arg(long)]
    out: Option<PathBuf>,
    /// JSON file supplying any of the other flags; explicit flags win.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct TrainFile {
    manifest: Option<PathBuf>,
    net: Option<String>,
    feature_maps: Option<usize>,
    reduction: Option<usize>,
    neighbors: Option<usize>,
    epochs: Option<usize>,
    batch_size: Option<usize>,
    learning_rate: Option<f64>,
    optimizer: Option<String>,
    seed: Option<u64>,
    out: Option<PathBuf>,
}

#[derive(Serialize)]
struct TrainRunConfig {
    command: &'static str,
    version: &'static str,
    manifest: PathBuf,
    net: String,
    feature_maps: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    reduction: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    neighbors: Option<usize>,
    epochs: usize,
    batch_size: usize,
    learning_rate: f64,
    optimizer: Optimizer,
    seed: u64,
    out: PathBuf,
}

#[derive(Serialize)]
struct MetricsFile {
    epochs: Vec<EpochMetrics>,
    final_train_accuracy: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    final_test_accuracy: Option<f64>,
}

pub fn run(args: TrainArgs) -> Result<(), CliError> {
    let file: TrainFile = load_file_config(args.config.as_deref())?;
    let manifest = require(args.manifest, file.manifest, "--manifest")?;
    require_file(&manifest, "manifest")?;
    let kind = pick(args.net, file.net, "fixed".to_string());
    let feature_maps = pick(args.feature_maps, file.feature_maps, 64);
    let epochs = pick(args.epochs, file.epochs, 30);
    let batch_size = pick(args.batch_size, file.batch_size, 8);
    let learning_rate = pick(args.learning_rate, file.learning_rate, 1e-3);
    let optimizer_name = pick(args.optimizer, file.optimizer, "adam".to_string());
    let optimizer = Optimizer::from_str(&optimizer_name)?;
    let seed = pick(args.seed, file.seed, 0);
    let out = require(args.out, file.out, "--out")?;

    let dataset = load_dataset(&manifest)?;
    let classes = dataset.class_names.len();

    // The reduction and neighbor settings are resolved (and recorded) only
    // for the variable net; the fixed net has no sampling stage.
    let (mut net, reduction, neighbors) = match kind.as_str() {
        "fixed" => (Network::Fixed(FixedNet::new(feature_maps, classes, seed)?), None, None),
        "variable" => {
            let reduction = pick(args.reduction, file.reduction, 4);
            let neighbors = pick(args.neighbors, file.neighbors, 16);
            let net = VariableNet::new(feature_maps, classes, reduction, neighbors, seed)?;
            (Network::Variable(net), Some(reduction), Some(neighbors))
        }
        other => {
            return Err(CliError::Usage(format!(
                "unknown network kind '{other}' (expected fixed or variable)"
            )))
        }
    };

    let cfg = TrainConfig {
        epochs,
        batch_size,
        learning_rate,
        seed,
        optimizer,
    };
    let metrics = train(&mut net, &dataset, &cfg)?;

    fs::create_dir_all(&out)?;
    net.save(&out.join("checkpoint.bin"))?;
    let last = metrics.last().expect("training always runs >= 1 epoch");
    let (final_train_accuracy, final_test_accuracy) = (last.train_accuracy, last.test_accuracy);
    let summary = MetricsFile {
        final_train_accuracy,
        final_test_accuracy,
        epochs: metrics,
    };
    let json = serde_json::to_string_pretty(&summary)
        .map_err(|e| CliError::Runtime(format!("cannot serialize metrics: {e}")))?;
    fs::write(out.join("metrics.json"), json + "\n")?;
    write_run_config(
        &out,
        &TrainRunConfig {
            command: "train",
            version: VERSION,
            manifest,
            net: kind,
            feature_maps,
            reduction,
            neighbors,
            epochs,
            batch_size,
            learning_rate,
            optimizer,
            seed,
            out: out.clone(),
        },
    )?;
    match summary.final_test_accuracy {
        Some(acc) => println!(
            "checkpoint written to {} (final test accuracy {acc:.3})",
            out.display()
        ),
        None => println!(
            "checkpoint written to {} (no test split; train accuracy {:.3})",
            out.display(),
            summary.final_train_accuracy
        ),
    }
    Ok(())
}
