//! Named parameter tensors with deterministic init and checkpoint IO.

use std::fs;
use std::io::Write;
use std::path::Path;

use byteorder::{ReadBytesExt, WriteBytesExt, LE};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct ParamTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}

impl ParamTensor {
    pub fn numel(&self) -> usize {
        self.shape.iter().product()
    }
}

/// Ordered parameter list; the order is the checkpoint blob order and the
/// gradient accumulation order.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamSet {
    tensors: Vec<ParamTensor>,
}

impl ParamSet {
    /// Glorot-uniform weights for rank-2 shapes; biases draw from
    /// U(-1/sqrt(fan_in), 1/sqrt(fan_in)) of the weight they follow. Zero
    /// biases would leave every ReLU feature positively homogeneous (all
    /// kink planes through the origin), which pins per-feature maxima to
    /// the cloud hull and starves training on shapes that differ only in
    /// their interior.
    pub fn init(layout: &[(&str, Vec<usize>)], rng: &mut ChaCha8Rng) -> ParamSet {
        let mut last_fan_in = 1usize;
        let tensors = layout
            .iter()
            .map(|(name, shape)| {
                let numel: usize = shape.iter().product();
                let values = match shape.as_slice() {
                    [fan_in, fan_out] => {
                        last_fan_in = *fan_in;
                        let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
                        (0..numel).map(|_| rng.gen_range(-limit..limit)).collect()
                    }
                    _ => {
                        let limit = 1.0 / (last_fan_in as f64).sqrt();
                        (0..numel).map(|_| rng.gen_range(-limit..limit)).collect()
                    }
                };
                ParamTensor {
                    name: name.to_string(),
                    shape: shape.clone(),
                    values,
                }
            })
            .collect();
        ParamSet { tensors }
    }

    pub fn tensors(&self) -> &[ParamTensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [ParamTensor] {
        &mut self.tensors
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn flat_len(&self) -> usize {
        self.tensors.iter().map(ParamTensor::numel).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.tensors
            .iter()
            .all(|t| t.values.iter().all(|v| v.is_finite()))
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct TensorMeta {
    name: String,
    shape: Vec<usize>,
}

/// First line of a checkpoint file; the parameter blob follows the newline.
#[derive(Debug, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub version: u32,
    pub kind: String,
    pub classes: usize,
    pub feature_maps: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reduction: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub neighbors: Option<usize>,
    tensors: Vec<TensorMeta>,
}

pub const CHECKPOINT_VERSION: u32 = 1;

impl CheckpointHeader {
    pub fn new(
        kind: &str,
        classes: usize,
        feature_maps: usize,
        reduction: Option<usize>,
        neighbors: Option<usize>,
    ) -> CheckpointHeader {
        CheckpointHeader {
            version: CHECKPOINT_VERSION,
            kind: kind.to_string(),
            classes,
            feature_maps,
            reduction,
            neighbors,
            tensors: Vec::new(),
        }
    }
}

pub fn write_checkpoint(path: &Path, mut header: CheckpointHeader, params: &ParamSet) -> Result<()> {
    header.tensors = params
        .tensors()
        .iter()
        .map(|t| TensorMeta {
            name: t.name.clone(),
            shape: t.shape.clone(),
        })
        .collect();
    let mut file = fs::File::create(path)?;
    let json = serde_json::to_string(&header)?;
    file.write_all(json.as_bytes())?;
    file.write_all(b"\n")?;
    for tensor in params.tensors() {
        for &v in &tensor.values {
            file.write_f64::<LE>(v)?;
        }
    }
    Ok(())
}

pub fn read_checkpoint(path: &Path) -> Result<(CheckpointHeader, ParamSet)> {
    let bytes = fs::read(path)?;
    let newline = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| Error::Checkpoint("missing header line".into()))?;
    let header: CheckpointHeader = serde_json::from_slice(&bytes[..newline])
        .map_err(|e| Error::Checkpoint(format!("bad header: {e}")))?;
    if header.version != CHECKPOINT_VERSION {
        return Err(Error::Checkpoint(format!(
            "checkpoint version {} unsupported, expected {CHECKPOINT_VERSION}",
            header.version
        )));
    }
    let mut blob = &bytes[newline + 1..];
    let expected: usize = header
        .tensors
        .iter()
        .map(|t| t.shape.iter().product::<usize>())
        .sum();
    if blob.len() != expected * 8 {
        return Err(Error::Checkpoint(format!(
            "parameter blob holds {} bytes, header expects {}",
            blob.len(),
            expected * 8
        )));
    }
    let mut tensors = Vec::with_capacity(header.tensors.len());
    for meta in &header.tensors {
        let numel: usize = meta.shape.iter().product();
        let mut values = vec![0.0; numel];
        blob.read_f64_into::<LE>(&mut values)
            .map_err(|e| Error::Checkpoint(format!("truncated blob: {e}")))?;
        tensors.push(ParamTensor {
            name: meta.name.clone(),
            shape: meta.shape.clone(),
            values,
        });
    }
    Ok((header, ParamSet { tensors }))
}
