//! Minibatch training with plain gradient descent or adaptive moments.

use rand::seq::SliceRandom;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::networks::Network;
use crate::pointcloud::{LabeledDataset, PointCloud};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Optimizer {
    /// Plain gradient descent; exact update, easiest to reason about.
    Sgd,
    /// Adaptive moment estimation with the standard decay constants.
    Adam,
}

impl std::str::FromStr for Optimizer {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sgd" => Ok(Optimizer::Sgd),
            "adam" => Ok(Optimizer::Adam),
            other => Err(Error::Config(format!(
                "unknown optimizer {other:?}, expected sgd or adam"
            ))),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
    pub optimizer: Optimizer,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 30,
            batch_size: 8,
            learning_rate: 1e-3,
            seed: 0,
            optimizer: Optimizer::Adam,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 || !(self.learning_rate > 0.0) {
            return Err(Error::Precondition(format!(
                "epochs, batch size and step size must be positive, got {} / {} / {}",
                self.epochs, self.batch_size, self.learning_rate
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_accuracy: f64,
    /// Absent when the dataset has no test split.
    pub test_accuracy: Option<f64>,
}

struct AdamState {
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

/// Fraction of `clouds` the network labels correctly.
pub fn accuracy(net: &Network, clouds: &[&PointCloud]) -> Result<f64> {
    if clouds.is_empty() {
        return Err(Error::Precondition("accuracy needs at least one cloud".into()));
    }
    let mut correct = 0usize;
    for cloud in clouds {
        let label = cloud
            .label()
            .ok_or_else(|| Error::Contract("accuracy needs labeled clouds".into()))?;
        let (predicted, _) = net.predict(cloud)?;
        if predicted == label {
            correct += 1;
        }
    }
    Ok(correct as f64 / clouds.len() as f64)
}

/// Minimizes softmax cross-entropy over the train split. Deterministic for
/// a given config seed: shuffling is the only randomness. Batch gradients
/// are averaged over the batch. Returns per-epoch metrics; a non-finite
/// batch loss aborts with the offending epoch.
pub fn train(
    net: &mut Network,
    dataset: &LabeledDataset,
    cfg: &TrainConfig,
) -> Result<Vec<EpochMetrics>> {
    cfg.validate()?;
    if dataset.class_names.len() < 2 {
        return Err(Error::Precondition("training needs at least two classes".into()));
    }
    if dataset.class_names.len() != net.classes() {
        return Err(Error::Contract(format!(
            "network has {} classes but dataset has {}",
            net.classes(),
            dataset.class_names.len()
        )));
    }
    let train_clouds = dataset.train_clouds();
    if train_clouds.is_empty() {
        return Err(Error::Precondition("train split is empty".into()));
    }
    let test_clouds = dataset.test_clouds();

    let flat_len = net.params().flat_len();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut adam = AdamState {
        m: vec![0.0; flat_len],
        v: vec![0.0; flat_len],
        t: 0,
    };
    let mut order: Vec<usize> = (0..train_clouds.len()).collect();
    let mut metrics = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        let mut correct = 0usize;

        for batch in order.chunks(cfg.batch_size) {
            let mut grad_sum = vec![0.0; flat_len];
            let mut batch_loss = 0.0;
            for &idx in batch {
                let cloud = train_clouds[idx];
                let label = cloud.label().expect("dataset clouds are labeled");
                let mut pass = net.forward(cloud, false)?;
                let loss_id = pass.loss(label)?;
                let loss = pass.tape.values(loss_id)[0];
                batch_loss += loss;

                let logits = pass.logit_values();
                let mut best = 0;
                for (c, &v) in logits.iter().enumerate() {
                    if v > logits[best] {
                        best = c;
                    }
                }
                if best == label {
                    correct += 1;
                }

                let grads = pass.tape.backward(loss_id)?;
                let mut offset = 0;
                for (tensor, &id) in net.params().tensors().iter().zip(&pass.param_ids) {
                    let numel = tensor.numel();
                    if let Some(g) = grads.get(id) {
                        for (slot, gv) in grad_sum[offset..offset + numel].iter_mut().zip(g) {
                            *slot += gv;
                        }
                    }
                    offset += numel;
                }
            }

            if !batch_loss.is_finite() {
                return Err(Error::Training {
                    epoch,
                    msg: format!("batch loss became {batch_loss}"),
                });
            }
            epoch_loss += batch_loss;

            let scale = 1.0 / batch.len() as f64;
            grad_sum.iter_mut().for_each(|g| *g *= scale);
            apply_update(net, &grad_sum, cfg, &mut adam);
        }

        let test_accuracy = if test_clouds.is_empty() {
            None
        } else {
            Some(accuracy(net, &test_clouds)?)
        };
        metrics.push(EpochMetrics {
            epoch,
            train_loss: epoch_loss / train_clouds.len() as f64,
            train_accuracy: correct as f64 / train_clouds.len() as f64,
            test_accuracy,
        });
    }
    Ok(metrics)
}

fn apply_update(net: &mut Network, grad: &[f64], cfg: &TrainConfig, adam: &mut AdamState) {
    let lr = cfg.learning_rate;
    match cfg.optimizer {
        Optimizer::Sgd => {
            let mut offset = 0;
            for tensor in net.params_mut().tensors_mut() {
                for (w, g) in tensor.values.iter_mut().zip(&grad[offset..]) {
                    *w -= lr * g;
                }
                offset += tensor.shape.iter().product::<usize>();
            }
        }
        Optimizer::Adam => {
            adam.t += 1;
            let bc1 = 1.0 - ADAM_BETA1.powi(adam.t as i32);
            let bc2 = 1.0 - ADAM_BETA2.powi(adam.t as i32);
            let mut offset = 0;
            for tensor in net.params_mut().tensors_mut() {
                for (i, w) in tensor.values.iter_mut().enumerate() {
                    let g = grad[offset + i];
                    let m = &mut adam.m[offset + i];
                    let v = &mut adam.v[offset + i];
                    *m = ADAM_BETA1 * *m + (1.0 - ADAM_BETA1) * g;
                    *v = ADAM_BETA2 * *v + (1.0 - ADAM_BETA2) * g * g;
                    let m_hat = *m / bc1;
                    let v_hat = *v / bc2;
                    *w -= lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
                }
                offset += tensor.shape.iter().product::<usize>();
            }
        }
    }
}
