//! Labeled synthetic datasets with deterministic splits and a JSON manifest.

use std::fs;
use std::path::Path;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pointcloud::{load_cloud, make_shape, save_cloud, CloudFormat, PointCloud, ShapeClass};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

#[derive(Debug, Clone)]
pub struct LabeledDataset {
    pub clouds: Vec<PointCloud>,
    pub splits: Vec<Split>,
    pub class_names: Vec<String>,
    pub seed: u64,
}

impl LabeledDataset {
    pub fn len(&self) -> usize {
        self.clouds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clouds.is_empty()
    }

    fn subset(&self, want: Split) -> Vec<&PointCloud> {
        self.clouds
            .iter()
            .zip(&self.splits)
            .filter(|(_, &s)| s == want)
            .map(|(c, _)| c)
            .collect()
    }

    pub fn train_clouds(&self) -> Vec<&PointCloud> {
        self.subset(Split::Train)
    }

    pub fn test_clouds(&self) -> Vec<&PointCloud> {
        self.subset(Split::Test)
    }

    fn validate(&self) -> Result<()> {
        if self.clouds.len() != self.splits.len() {
            return Err(Error::Contract("split list does not match cloud list".into()));
        }
        for cloud in &self.clouds {
            match cloud.label() {
                Some(l) if l < self.class_names.len() => {}
                Some(l) => {
                    return Err(Error::Contract(format!(
                        "label {l} exceeds {} classes",
                        self.class_names.len()
                    )))
                }
                None => return Err(Error::Contract("dataset cloud is missing a label".into())),
            }
        }
        Ok(())
    }
}

/// Generates `per_class` clouds for every class. Per-cloud seeds are drawn
/// from one master stream, and the last `round(test_fraction * per_class)`
/// samples of each class form the test split, so splits are disjoint,
/// exhaustive, and class-balanced.
pub fn generate_dataset(
    classes: &[ShapeClass],
    per_class: usize,
    n_points: usize,
    test_fraction: f64,
    seed: u64,
) -> Result<LabeledDataset> {
    if classes.is_empty() || per_class == 0 {
        return Err(Error::Precondition(
            "dataset needs at least one class and one sample per class".into(),
        ));
    }
    if !(0.0..=1.0).contains(&test_fraction) {
        return Err(Error::Precondition(format!(
            "test fraction must lie in [0,1], got {test_fraction}"
        )));
    }
    let mut master = ChaCha8Rng::seed_from_u64(seed);
    let test_count = (test_fraction * per_class as f64).round() as usize;
    let mut clouds = Vec::with_capacity(classes.len() * per_class);
    let mut splits = Vec::with_capacity(classes.len() * per_class);
    for (label, &class) in classes.iter().enumerate() {
        for sample in 0..per_class {
            let cloud_seed: u64 = master.gen();
            let cloud = make_shape(class, n_points, cloud_seed)?.with_label(label);
            clouds.push(cloud);
            splits.push(if sample >= per_class - test_count {
                Split::Test
            } else {
                Split::Train
            });
        }
    }
    let dataset = LabeledDataset {
        clouds,
        splits,
        class_names: classes.iter().map(|c| c.name().to_string()).collect(),
        seed,
    };
    dataset.validate()?;
    Ok(dataset)
}

#[derive(Debug, Serialize, Deserialize)]
pub struct DatasetEntry {
    pub path: String,
    pub class: usize,
    pub split: Split,
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    version: u32,
    seed: u64,
    class_names: Vec<String>,
    entries: Vec<DatasetEntry>,
}

const MANIFEST_VERSION: u32 = 1;

/// Writes one xyz file per cloud plus `manifest.json` into `dir`.
pub fn save_dataset(dataset: &LabeledDataset, dir: &Path) -> Result<()> {
    dataset.validate()?;
    fs::create_dir_all(dir)?;
    let mut entries = Vec::with_capacity(dataset.len());
    let mut per_class_counter = vec![0usize; dataset.class_names.len()];
    for (cloud, &split) in dataset.clouds.iter().zip(&dataset.splits) {
        let label = cloud.label().expect("validated above");
        let name = format!(
            "{}_{:04}.xyz",
            dataset.class_names[label], per_class_counter[label]
        );
        per_class_counter[label] += 1;
        save_cloud(cloud, &dir.join(&name), CloudFormat::Xyz)?;
        entries.push(DatasetEntry {
            path: name,
            class: label,
            split,
        });
    }
    let manifest = Manifest {
        version: MANIFEST_VERSION,
        seed: dataset.seed,
        class_names: dataset.class_names.clone(),
        entries,
    };
    let json = serde_json::to_string_pretty(&manifest)?;
    fs::write(dir.join("manifest.json"), json)?;
    Ok(())
}

/// Loads a dataset written by [`save_dataset`]. Entry paths are resolved
/// relative to the manifest's directory.
pub fn load_dataset(manifest_path: &Path) -> Result<LabeledDataset> {
    let text = fs::read_to_string(manifest_path)?;
    let manifest: Manifest = serde_json::from_str(&text)?;
    if manifest.version != MANIFEST_VERSION {
        return Err(Error::Config(format!(
            "manifest version {} unsupported, expected {MANIFEST_VERSION}",
            manifest.version
        )));
    }
    let base = manifest_path.parent().unwrap_or_else(|| Path::new("."));
    let mut clouds = Vec::with_capacity(manifest.entries.len());
    let mut splits = Vec::with_capacity(manifest.entries.len());
    for entry in &manifest.entries {
        if entry.class >= manifest.class_names.len() {
            return Err(Error::Config(format!(
                "entry {} has class {} but manifest lists {} classes",
                entry.path,
                entry.class,
                manifest.class_names.len()
            )));
        }
        let cloud = load_cloud(&base.join(&entry.path), CloudFormat::Xyz)?;
        clouds.push(cloud.with_label(entry.class));
        splits.push(entry.split);
    }
    let dataset = LabeledDataset {
        clouds,
        splits,
        class_names: manifest.class_names,
        seed: manifest.seed,
    };
    dataset.validate()?;
    Ok(dataset)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn split_is_disjoint_and_exhaustive() {
        let ds = generate_dataset(&[ShapeClass::Sphere, ShapeClass::Box], 10, 32, 0.3, 1).unwrap();
        assert_eq!(ds.len(), 20);
        assert_eq!(ds.train_clouds().len(), 14);
        assert_eq!(ds.test_clouds().len(), 6);
        // Class balance holds inside each split.
        let train_labels: Vec<usize> =
            ds.train_clouds().iter().map(|c| c.label().unwrap()).collect();
        assert_eq!(train_labels.iter().filter(|&&l| l == 0).count(), 7);
    }

    #[test]
    fn generation_is_reproducible() {
        let a = generate_dataset(&[ShapeClass::Sphere], 3, 32, 0.0, 5).unwrap();
        let b = generate_dataset(&[ShapeClass::Sphere], 3, 32, 0.0, 5).unwrap();
        for (x, y) in a.clouds.iter().zip(&b.clouds) {
            assert_eq!(x, y);
        }
        // Different samples of the same class use different per-cloud seeds.
        assert_ne!(a.clouds[0], a.clouds[1]);
    }

    #[test]
    fn manifest_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let ds = generate_dataset(&[ShapeClass::Sphere, ShapeClass::Box], 4, 32, 0.25, 9).unwrap();
        save_dataset(&ds, dir.path()).unwrap();
        let loaded = load_dataset(&dir.path().join("manifest.json")).unwrap();
        assert_eq!(loaded.len(), ds.len());
        assert_eq!(loaded.class_names, ds.class_names);
        assert_eq!(loaded.splits, ds.splits);
        assert_eq!(loaded.seed, ds.seed);
        for (a, b) in loaded.clouds.iter().zip(&ds.clouds) {
            assert_eq!(a.label(), b.label());
            for (pa, pb) in a.points().iter().zip(b.points()) {
                for (x, y) in pa.iter().zip(pb) {
                    assert!((x - y).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn bad_fraction_rejected() {
        assert!(generate_dataset(&[ShapeClass::Sphere], 2, 32, 1.5, 0).is_err());
        assert!(generate_dataset(&[], 2, 32, 0.5, 0).is_err());
    }
}
