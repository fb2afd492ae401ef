//! End-to-end tests of the `ape` binary: artifact layout, exit codes,
//! config-file merging, and byte-level determinism of repeated runs.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::OnceLock;

use tempfile::TempDir;

fn ape(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ape"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stderr_of(output: &Output) -> String {
    String::from_utf8_lossy(&output.stderr).into_owned()
}

fn assert_exit(output: &Output, code: i32) {
    assert_eq!(
        output.status.code(),
        Some(code),
        "stdout: {}\nstderr: {}",
        String::from_utf8_lossy(&output.stdout),
        stderr_of(output)
    );
}

/// Dataset plus checkpoint shared by the read-only explain and evaluate
/// tests. Generated and trained through the binary exactly once.
struct Fixture {
    _dir: TempDir,
    manifest: PathBuf,
    checkpoint: PathBuf,
}

fn fixture() -> &'static Fixture {
    static CELL: OnceLock<Fixture> = OnceLock::new();
    CELL.get_or_init(|| {
        let dir = TempDir::new().unwrap();
        let data = dir.path().join("data");
        let model = dir.path().join("model");
        let out = ape(&[
            "generate",
            "--classes",
            "sphere,box",
            "--per-class",
            "6",
            "--points",
            "32",
            "--test-fraction",
            "0.5",
            "--seed",
            "81",
            "--out",
            data.to_str().unwrap(),
        ]);
        assert_exit(&out, 0);
        let manifest = data.join("manifest.json");
        let out = ape(&[
            "train",
            "--manifest",
            manifest.to_str().unwrap(),
            "--net",
            "fixed",
            "--feature-maps",
            "16",
            "--epochs",
            "40",
            "--batch-size",
            "4",
            "--learning-rate",
            "0.05",
            "--optimizer",
            "sgd",
            "--seed",
            "82",
            "--out",
            model.to_str().unwrap(),
        ]);
        assert_exit(&out, 0);
        let checkpoint = model.join("checkpoint.bin");
        assert!(checkpoint.is_file());
        Fixture {
            _dir: dir,
            manifest,
            checkpoint,
        }
    })
}

fn count_files(dir: &Path, extension: &str) -> usize {
    fs::read_dir(dir)
        .unwrap()
        .filter(|entry| {
            entry
                .as_ref()
                .unwrap()
                .path()
                .extension()
                .is_some_and(|e| e == extension)
        })
        .count()
}

#[test]
fn generate_writes_one_file_per_cloud_plus_manifest_and_config() {
    let dir = TempDir::new().unwrap();
    let out_dir = dir.path().join("flanges");
    let out = ape(&[
        "generate",
        "--classes",
        "flange4,flange8",
        "--per-class",
        "100",
        "--points",
        "256",
        "--seed",
        "7",
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert_exit(&out, 0);
    assert_eq!(count_files(&out_dir, "xyz"), 200);
    assert!(out_dir.join("manifest.json").is_file());
    assert!(out_dir.join("run_config.json").is_file());
    let config: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out_dir.join("run_config.json")).unwrap())
            .unwrap();
    assert_eq!(config["command"], "generate");
    assert_eq!(config["per_class"], 100);
}

#[test]
fn generate_twice_yields_identical_manifests_and_clouds() {
    let dir = TempDir::new().unwrap();
    let args = |out: &Path| {
        vec![
            "generate".to_string(),
            "--classes".into(),
            "cylinder,box".into(),
            "--per-class".into(),
            "4".into(),
            "--points".into(),
            "48".into(),
            "--seed".into(),
            "12".into(),
            "--out".into(),
            out.to_string_lossy().into_owned(),
        ]
    };
    for name in ["a", "b"] {
        let argv = args(&dir.path().join(name));
        let refs: Vec<&str> = argv.iter().map(String::as_str).collect();
        assert_exit(&ape(&refs), 0);
    }
    let read = |name: &str, file: &str| fs::read(dir.path().join(name).join(file)).unwrap();
    assert_eq!(read("a", "manifest.json"), read("b", "manifest.json"));
    assert_eq!(read("a", "cylinder_0000.xyz"), read("b", "cylinder_0000.xyz"));
}

#[test]
fn generate_usage_errors_exit_2() {
    let dir = TempDir::new().unwrap();
    let out_path = dir.path().join("x");
    let out_str = out_path.to_str().unwrap();
    let zero = ape(&["generate", "--classes", "sphere", "--per-class", "0", "--out", out_str]);
    assert_exit(&zero, 2);

    let unknown = ape(&["generate", "--classes", "pyramid", "--out", out_str]);
    assert_exit(&unknown, 2);
    assert!(
        stderr_of(&unknown).contains("sphere"),
        "message should list valid classes: {}",
        stderr_of(&unknown)
    );

    let no_out = ape(&["generate", "--classes", "sphere"]);
    assert_exit(&no_out, 2);
}

#[test]
fn train_writes_metrics_and_repeats_bit_exactly_under_one_seed() {
    let fx = fixture();
    let dir = TempDir::new().unwrap();
    let mut checkpoints = Vec::new();
    for name in ["first", "second"] {
        let out_dir = dir.path().join(name);
        let out = ape(&[
            "train",
            "--manifest",
            fx.manifest.to_str().unwrap(),
            "--feature-maps",
            "16",
            "--epochs",
            "5",
            "--seed",
            "9",
            "--out",
            out_dir.to_str().unwrap(),
        ]);
        assert_exit(&out, 0);
        checkpoints.push(fs::read(out_dir.join("checkpoint.bin")).unwrap());
        let metrics: serde_json::Value =
            serde_json::from_str(&fs::read_to_string(out_dir.join("metrics.json")).unwrap())
                .unwrap();
        assert_eq!(metrics["epochs"].as_array().unwrap().len(), 5);
        assert!(metrics["final_test_accuracy"].is_number());
    }
    assert_eq!(checkpoints[0], checkpoints[1]);
}

#[test]
fn train_missing_manifest_exits_2_and_names_the_path() {
    let out = ape(&["train", "--manifest", "/no/such/manifest.json", "--out", "/tmp/unused"]);
    assert_exit(&out, 2);
    assert!(
        stderr_of(&out).contains("/no/such/manifest.json"),
        "stderr: {}",
        stderr_of(&out)
    );
}

#[test]
fn train_rejects_unknown_network_kind() {
    let fx = fixture();
    let out = ape(&[
        "train",
        "--manifest",
        fx.manifest.to_str().unwrap(),
        "--net",
        "transformer",
        "--out",
        "/tmp/unused",
    ]);
    assert_exit(&out, 2);
}

#[test]
fn explain_on_fixed_net_reports_one_inner_iteration_per_pass() {
    let fx = fixture();
    let dir = TempDir::new().unwrap();
    let out = ape(&[
        "explain",
        "--checkpoint",
        fx.checkpoint.to_str().unwrap(),
        "--manifest",
        fx.manifest.to_str().unwrap(),
        "--method",
        "ape",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_exit(&out, 0);
    assert_eq!(count_files(dir.path(), "csv"), 6, "one heatmap per test cloud");
    let metadata: serde_json::Value = serde_json::from_str(
        &fs::read_to_string(dir.path().join("sphere_0003_metadata.json")).unwrap(),
    )
    .unwrap();
    assert_eq!(metadata["method"], "ape");
    let inner: Vec<u64> = metadata["inner_iterations"]
        .as_array()
        .unwrap()
        .iter()
        .map(|v| v.as_u64().unwrap())
        .collect();
    assert!(!inner.is_empty());
    assert!(inner.iter().all(|&m| m == 1), "fixed net explains all points in one pass");
}

#[test]
fn explain_export_ply_writes_a_ply_next_to_each_csv() {
    let fx = fixture();
    let dir = TempDir::new().unwrap();
    let out = ape(&[
        "explain",
        "--checkpoint",
        fx.checkpoint.to_str().unwrap(),
        "--manifest",
        fx.manifest.to_str().unwrap(),
        "--export-ply",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_exit(&out, 0);
    assert_eq!(count_files(dir.path(), "ply"), 6);
    let ply = fs::read_to_string(dir.path().join("box_0003_heatmap.ply")).unwrap();
    assert!(ply.starts_with("ply\n"));
    assert!(ply.contains("element vertex 32"));
}

#[test]
fn explain_usage_errors_exit_2() {
    let fx = fixture();
    let unknown = ape(&[
        "explain",
        "--checkpoint",
        fx.checkpoint.to_str().unwrap(),
        "--manifest",
        fx.manifest.to_str().unwrap(),
        "--method",
        "lime",
        "--out",
        "/tmp/unused",
    ]);
    assert_exit(&unknown, 2);
    assert!(stderr_of(&unknown).contains("ape, gradients, pcsn"));

    let bad_target = ape(&[
        "explain",
        "--checkpoint",
        fx.checkpoint.to_str().unwrap(),
        "--manifest",
        fx.manifest.to_str().unwrap(),
        "--target",
        "5",
        "--out",
        "/tmp/unused",
    ]);
    assert_exit(&bad_target, 2);

    let both_inputs = ape(&[
        "explain",
        "--checkpoint",
        fx.checkpoint.to_str().unwrap(),
        "--out",
        "/tmp/unused",
    ]);
    assert_exit(&both_inputs, 2);
}

#[test]
fn evaluate_tabulates_each_requested_method_in_both_modes() {
    let fx = fixture();
    let dir = TempDir::new().unwrap();
    let out = ape(&[
        "evaluate",
        "--checkpoint",
        fx.checkpoint.to_str().unwrap(),
        "--manifest",
        fx.manifest.to_str().unwrap(),
        "--methods",
        "ape,gradients",
        "--steps",
        "5",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_exit(&out, 0);
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("report.json")).unwrap())
            .unwrap();
    let results = report["results"].as_array().unwrap();
    assert_eq!(results.len(), 2);
    for result in results {
        for key in ["high_drop_auc", "low_drop_auc"] {
            let auc = result[key].as_f64().unwrap();
            assert!((0.0..=1.0).contains(&auc));
        }
    }
    let markdown = fs::read_to_string(dir.path().join("report.md")).unwrap();
    assert!(markdown.contains("| ape | H.D. |"));
    assert!(markdown.contains("| gradients | L.D. |"));
}

#[test]
fn evaluate_rejects_single_step_grid() {
    let fx = fixture();
    let out = ape(&[
        "evaluate",
        "--checkpoint",
        fx.checkpoint.to_str().unwrap(),
        "--manifest",
        fx.manifest.to_str().unwrap(),
        "--steps",
        "1",
        "--out",
        "/tmp/unused",
    ]);
    assert_exit(&out, 2);
}

#[test]
fn config_file_supplies_flags_and_explicit_flags_win() {
    let dir = TempDir::new().unwrap();
    let config_path = dir.path().join("gen.json");
    let out_dir = dir.path().join("from_config");
    fs::write(
        &config_path,
        serde_json::json!({
            "classes": ["sphere", "box"],
            "per_class": 3,
            "points": 32,
            "seed": 4,
            "out": out_dir,
        })
        .to_string(),
    )
    .unwrap();

    // per_class comes from the flag, everything else from the file.
    let out = ape(&[
        "generate",
        "--config",
        config_path.to_str().unwrap(),
        "--per-class",
        "2",
    ]);
    assert_exit(&out, 0);
    assert_eq!(count_files(&out_dir, "xyz"), 4);
    let run_config: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out_dir.join("run_config.json")).unwrap())
            .unwrap();
    assert_eq!(run_config["per_class"], 2);
    assert_eq!(run_config["seed"], 4);

    let typo = dir.path().join("typo.json");
    fs::write(&typo, r#"{"per_clas": 3}"#).unwrap();
    let out = ape(&["generate", "--classes", "sphere", "--config", typo.to_str().unwrap()]);
    assert_exit(&out, 2);
}

#[test]
fn repeated_pipeline_produces_byte_identical_artifacts() {
    let dir = TempDir::new().unwrap();
    let run = |root: &Path| {
        let data = root.join("data");
        let model = root.join("model");
        let heat = root.join("heat");
        let eval = root.join("eval");
        assert_exit(
            &ape(&[
                "generate",
                "--classes",
                "sphere,box",
                "--per-class",
                "4",
                "--points",
                "32",
                "--test-fraction",
                "0.5",
                "--seed",
                "3",
                "--out",
                data.to_str().unwrap(),
            ]),
            0,
        );
        let manifest = data.join("manifest.json");
        assert_exit(
            &ape(&[
                "train",
                "--manifest",
                manifest.to_str().unwrap(),
                "--feature-maps",
                "16",
                "--epochs",
                "10",
                "--seed",
                "3",
                "--out",
                model.to_str().unwrap(),
            ]),
            0,
        );
        assert_exit(
            &ape(&[
                "explain",
                "--checkpoint",
                model.join("checkpoint.bin").to_str().unwrap(),
                "--manifest",
                manifest.to_str().unwrap(),
                "--out",
                heat.to_str().unwrap(),
            ]),
            0,
        );
        assert_exit(
            &ape(&[
                "evaluate",
                "--checkpoint",
                model.join("checkpoint.bin").to_str().unwrap(),
                "--manifest",
                manifest.to_str().unwrap(),
                "--steps",
                "5",
                "--out",
                eval.to_str().unwrap(),
            ]),
            0,
        );
    };
    run(&dir.path().join("a"));
    run(&dir.path().join("b"));
    for file in [
        "data/manifest.json",
        "model/checkpoint.bin",
        "heat/sphere_0002_heatmap.csv",
        "heat/box_0003_heatmap.csv",
        "eval/report.json",
        "eval/report.md",
    ] {
        let a = fs::read(dir.path().join("a").join(file)).unwrap();
        let b = fs::read(dir.path().join("b").join(file)).unwrap();
        assert_eq!(a, b, "{file} differs between identical runs");
    }
}
