//! Two desk-scale point-cloud classifiers.
//!
//! Both end in K feature maps A (one row per retained neuron) followed by a
//! global max pool and a small fully connected head. The fixed architecture
//! keeps one feature row per input point (n' = n, identity association);
//! the variable architecture samples n' < n centroids and pools local
//! neighborhoods into one row each, so explanations must track which input
//! point every row belongs to.

mod params;
mod sampling;
mod train;

pub use params::{read_checkpoint, write_checkpoint, CheckpointHeader, ParamSet, ParamTensor, CHECKPOINT_VERSION};
pub use sampling::{farthest_point_sampling, k_nearest};
pub use train::{accuracy, train, EpochMetrics, Optimizer, TrainConfig};

use std::path::Path;

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{stable_softmax, Tape, TensorId};
use crate::error::{Error, Result};
use crate::pointcloud::PointCloud;

/// Per-point MLP (3 -> 32 -> 64 -> K, all ReLU) with a classifier head.
/// The post-activation output of the last per-point layer is the feature
/// map tensor A.
#[derive(Debug, Clone, PartialEq)]
pub struct FixedNet {
    pub feature_maps: usize,
    pub classes: usize,
    params: ParamSet,
}

/// Sampling-and-grouping classifier: farthest point sampling picks the
/// centroids, each group is the centroid's k nearest alive neighbors, and a
/// shared MLP (3 -> 32 -> K) over the member coordinates is max-pooled per
/// group into one feature row. A has one row per centroid.
#[derive(Debug, Clone, PartialEq)]
pub struct VariableNet {
    pub feature_maps: usize,
    pub classes: usize,
    /// Centroid budget: n' targets n / reduction.
    pub reduction: usize,
    /// Group size before clamping to the alive count.
    pub neighbors: usize,
    params: ParamSet,
}

const HEAD_HIDDEN: usize = 32;

fn head_layout(feature_maps: usize, classes: usize) -> Vec<(&'static str, Vec<usize>)> {
    vec![
        ("head.w0", vec![feature_maps, HEAD_HIDDEN]),
        ("head.b0", vec![HEAD_HIDDEN]),
        ("head.w1", vec![HEAD_HIDDEN, classes]),
        ("head.b1", vec![classes]),
    ]
}

impl FixedNet {
    pub fn new(feature_maps: usize, classes: usize, seed: u64) -> Result<FixedNet> {
        if classes < 2 || feature_maps < classes {
            return Err(Error::Precondition(format!(
                "need feature_maps >= classes >= 2, got {feature_maps} and {classes}"
            )));
        }
        let mut layout = vec![
            ("point_mlp.w0", vec![3, 32]),
            ("point_mlp.b0", vec![32]),
            ("point_mlp.w1", vec![32, 64]),
            ("point_mlp.b1", vec![64]),
            ("point_mlp.w2", vec![64, feature_maps]),
            ("point_mlp.b2", vec![feature_maps]),
        ];
        layout.extend(head_layout(feature_maps, classes));
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Ok(FixedNet {
            feature_maps,
            classes,
            params: ParamSet::init(&layout, &mut rng),
        })
    }
}

impl VariableNet {
    pub fn new(
        feature_maps: usize,
        classes: usize,
        reduction: usize,
        neighbors: usize,
        seed: u64,
    ) -> Result<VariableNet> {
        if classes < 2 || feature_maps < classes {
            return Err(Error::Precondition(format!(
                "need feature_maps >= classes >= 2, got {feature_maps} and {classes}"
            )));
        }
        if reduction < 2 || neighbors == 0 {
            return Err(Error::Precondition(format!(
                "need reduction >= 2 and neighbors >= 1, got {reduction} and {neighbors}"
            )));
        }
        let mut layout = vec![
            ("group_mlp.w0", vec![3, 32]),
            ("group_mlp.b0", vec![32]),
            ("group_mlp.w1", vec![32, feature_maps]),
            ("group_mlp.b1", vec![feature_maps]),
        ];
        layout.extend(head_layout(feature_maps, classes));
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Ok(VariableNet {
            feature_maps,
            classes,
            reduction,
            neighbors,
            params: ParamSet::init(&layout, &mut rng),
        })
    }
}

/// Either classifier behind one handle.
#[derive(Debug, Clone, PartialEq)]
pub enum Network {
    Fixed(FixedNet),
    Variable(VariableNet),
}

/// One recorded forward pass. Keeping the tape alive is what lets callers
/// pull gradients at the feature maps or input points afterwards.
pub struct ForwardPass {
    pub tape: Tape,
    pub logits: TensorId,
    /// A: n' x K, the last feature layer before the classifier head.
    pub feature_maps: TensorId,
    /// Input point index behind each feature-map row.
    pub association: Vec<usize>,
    pub points: TensorId,
    pub param_ids: Vec<TensorId>,
}

impl ForwardPass {
    pub fn logit_values(&self) -> &[f64] {
        self.tape.values(self.logits)
    }

    /// Appends the training loss for `label` to this pass's tape.
    pub fn loss(&mut self, label: usize) -> Result<TensorId> {
        self.tape.softmax_cross_entropy(self.logits, label)
    }

    /// Scalar class score y_c, the backward seed for explanations.
    pub fn class_score(&mut self, class: usize) -> Result<TensorId> {
        self.tape.index(self.logits, class)
    }
}

/// Loads every parameter tensor onto the tape, in ParamSet order.
fn param_leaves(tape: &mut Tape, params: &ParamSet) -> Vec<TensorId> {
    params
        .tensors()
        .iter()
        .map(|t| tape.leaf(&t.shape, t.values.clone(), true))
        .collect()
}

/// head(pooled) for both architectures: ReLU hidden layer, linear output.
fn head_logits(tape: &mut Tape, pooled: TensorId, head_ids: &[TensorId]) -> Result<TensorId> {
    let h = tape.matmul(pooled, head_ids[0])?;
    let h = tape.add_bias(h, head_ids[1])?;
    let h = tape.relu(h);
    let logits = tape.matmul(h, head_ids[2])?;
    tape.add_bias(logits, head_ids[3])
}

impl Network {
    pub fn classes(&self) -> usize {
        match self {
            Network::Fixed(n) => n.classes,
            Network::Variable(n) => n.classes,
        }
    }

    pub fn feature_maps(&self) -> usize {
        match self {
            Network::Fixed(n) => n.feature_maps,
            Network::Variable(n) => n.feature_maps,
        }
    }

    pub fn kind_name(&self) -> &'static str {
        match self {
            Network::Fixed(_) => "fixed",
            Network::Variable(_) => "variable",
        }
    }

    pub fn params(&self) -> &ParamSet {
        match self {
            Network::Fixed(n) => &n.params,
            Network::Variable(n) => &n.params,
        }
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        match self {
            Network::Fixed(n) => &mut n.params,
            Network::Variable(n) => &mut n.params,
        }
    }

    /// Runs the classifier, recording the pass on a fresh tape.
    /// `track_points` additionally enables gradients w.r.t. the input
    /// coordinates, which the saliency baselines need.
    pub fn forward(&self, cloud: &PointCloud, track_points: bool) -> Result<ForwardPass> {
        match self {
            Network::Fixed(net) => fixed_forward(net, cloud, track_points),
            Network::Variable(net) => variable_forward(net, cloud, track_points),
        }
    }

    /// Predicted class (ties to the lowest index) and class probabilities.
    pub fn predict(&self, cloud: &PointCloud) -> Result<(usize, Vec<f64>)> {
        let pass = self.forward(cloud, false)?;
        let probs = stable_softmax(pass.logit_values());
        let mut best = 0;
        for (i, &p) in probs.iter().enumerate() {
            if p > probs[best] {
                best = i;
            }
        }
        Ok((best, probs))
    }

    /// Replays only the part of the network downstream of the feature
    /// maps: global max pool plus the classifier head. Lets verification
    /// code treat A as a free input.
    #[doc(hidden)]
    pub fn head_logits_from(&self, tape: &mut Tape, features: TensorId) -> Result<TensorId> {
        let ids = param_leaves(tape, self.params());
        let head_ids = match self {
            Network::Fixed(_) => &ids[6..],
            Network::Variable(_) => &ids[4..],
        };
        let (pooled, _) = tape.max_pool_points(features)?;
        head_logits(tape, pooled, head_ids)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let (reduction, neighbors) = match self {
            Network::Fixed(_) => (None, None),
            Network::Variable(n) => (Some(n.reduction), Some(n.neighbors)),
        };
        let header = CheckpointHeader::new(
            self.kind_name(),
            self.classes(),
            self.feature_maps(),
            reduction,
            neighbors,
        );
        write_checkpoint(path, header, self.params())
    }

    pub fn load(path: &Path) -> Result<Network> {
        let (header, params) = read_checkpoint(path)?;
        match header.kind.as_str() {
            "fixed" => {
                let mut net = FixedNet::new(header.feature_maps, header.classes, 0)?;
                net.params = params;
                Ok(Network::Fixed(net))
            }
            "variable" => {
                let reduction = header
                    .reduction
                    .ok_or_else(|| Error::Checkpoint("variable checkpoint lacks reduction".into()))?;
                let neighbors = header
                    .neighbors
                    .ok_or_else(|| Error::Checkpoint("variable checkpoint lacks neighbors".into()))?;
                let mut net =
                    VariableNet::new(header.feature_maps, header.classes, reduction, neighbors, 0)?;
                net.params = params;
                Ok(Network::Variable(net))
            }
            other => Err(Error::Checkpoint(format!("unknown architecture {other:?}"))),
        }
    }
}

fn fixed_forward(net: &FixedNet, cloud: &PointCloud, track_points: bool) -> Result<ForwardPass> {
    let n = cloud.len();
    let mut tape = Tape::new();
    let points = tape.leaf(&[n, 3], cloud.flat_coords(), track_points);
    let ids = param_leaves(&mut tape, &net.params);

    let mut h = points;
    for layer in 0..3 {
        let lin = tape.matmul(h, ids[layer * 2])?;
        let lin = tape.add_bias(lin, ids[layer * 2 + 1])?;
        h = tape.relu(lin);
    }
    let feature_maps = h; // [n, K]
    let (pooled, _) = tape.max_pool_points(feature_maps)?;
    let logits = head_logits(&mut tape, pooled, &ids[6..])?;

    Ok(ForwardPass {
        tape,
        logits,
        feature_maps,
        association: (0..n).collect(),
        points,
        param_ids: ids,
    })
}

fn variable_forward(net: &VariableNet, cloud: &PointCloud, track_points: bool) -> Result<ForwardPass> {
    let n = cloud.len();
    if n < net.neighbors {
        return Err(Error::Precondition(format!(
            "cloud has {n} points but groups need {}",
            net.neighbors
        )));
    }

    // Centroids come from points still awaiting explanation so every inner
    // iteration reaches a fresh segment; once nothing (or nothing alive)
    // remains the pools widen so the classifier itself keeps running.
    let all: Vec<usize> = (0..n).collect();
    let alive = cloud.alive_indices();
    let unexplained: Vec<usize> = alive
        .iter()
        .copied()
        .filter(|&i| !cloud.is_explained(i))
        .collect();
    let fps_pool: &[usize] = if !unexplained.is_empty() {
        &unexplained
    } else if !alive.is_empty() {
        &alive
    } else {
        &all
    };
    let neighbor_pool: &[usize] = if !alive.is_empty() { &alive } else { &all };

    let n_prime = (n / net.reduction).clamp(1, fps_pool.len());
    let pool_points: Vec<[f64; 3]> = fps_pool.iter().map(|&i| cloud.point(i)).collect();
    let picked = farthest_point_sampling(&pool_points, n_prime, 0)?;
    let association: Vec<usize> = picked.into_iter().map(|i| fps_pool[i]).collect();

    let k_eff = net.neighbors.min(neighbor_pool.len());
    let groups: Vec<Vec<usize>> = association
        .iter()
        .map(|&c| k_nearest(cloud.points(), neighbor_pool, cloud.point(c), k_eff))
        .collect();

    let mut tape = Tape::new();
    let points = tape.leaf(&[n, 3], cloud.flat_coords(), track_points);
    let ids = param_leaves(&mut tape, &net.params);

    // One shared MLP over raw coordinates, then each group keeps its
    // members' strongest response per channel. Features stay tied to
    // absolute position, so detectors for "material present here" survive
    // both pooling stages; that is the only signal separating shapes whose
    // difference is where material is missing.
    let mut h = points;
    for layer in 0..2 {
        let lin = tape.matmul(h, ids[layer * 2])?;
        let lin = tape.add_bias(lin, ids[layer * 2 + 1])?;
        h = tape.relu(lin);
    }
    let mut rows = Vec::with_capacity(groups.len());
    for group in &groups {
        let members = tape.gather_rows(h, group)?;
        let (pooled, _) = tape.max_pool_points(members)?;
        rows.push(pooled);
    }
    let feature_maps = tape.concat_rows(&rows)?; // [n', K]
    let (pooled, _) = tape.max_pool_points(feature_maps)?;
    let logits = head_logits(&mut tape, pooled, &ids[4..])?;

    Ok(ForwardPass {
        tape,
        logits,
        feature_maps,
        association,
        points,
        param_ids: ids,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pointcloud::{make_shape, ShapeClass};

    fn demo_cloud(n: usize, seed: u64) -> PointCloud {
        make_shape(ShapeClass::Sphere, n, seed).unwrap()
    }

    fn zeroed(mut net: Network) -> Network {
        for t in net.params_mut().tensors_mut() {
            t.values.iter_mut().for_each(|v| *v = 0.0);
        }
        net
    }

    #[test]
    fn fixed_logits_are_permutation_invariant() {
        let net = Network::Fixed(FixedNet::new(16, 2, 1).unwrap());
        let cloud = demo_cloud(32, 4);
        let pass = net.forward(&cloud, false).unwrap();

        let mut permuted: Vec<[f64; 3]> = cloud.points().to_vec();
        permuted.reverse();
        let reversed = PointCloud::new(permuted, None).unwrap();
        let pass_rev = net.forward(&reversed, false).unwrap();

        assert_eq!(pass.logit_values(), pass_rev.logit_values());

        // Feature rows follow their points exactly.
        let k = net.feature_maps();
        let a = pass.tape.values(pass.feature_maps);
        let b = pass_rev.tape.values(pass_rev.feature_maps);
        let n = cloud.len();
        for row in 0..n {
            assert_eq!(a[row * k..(row + 1) * k], b[(n - 1 - row) * k..(n - row) * k]);
        }
        assert_eq!(pass.association, (0..n).collect::<Vec<_>>());
    }

    #[test]
    fn zero_weights_mean_constant_logits() {
        let net = zeroed(Network::Fixed(FixedNet::new(8, 3, 0).unwrap()));
        let a = net.forward(&demo_cloud(32, 1), false).unwrap();
        let b = net.forward(&demo_cloud(32, 2), false).unwrap();
        assert_eq!(a.logit_values(), b.logit_values());
        assert_eq!(a.logit_values(), &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn class_score_gradient_lands_on_pool_winners() {
        let net = Network::Fixed(FixedNet::new(8, 2, 7).unwrap());
        let cloud = demo_cloud(32, 9);
        let mut pass = net.forward(&cloud, false).unwrap();
        let (_, argmax) = {
            // Recompute winners from the recorded feature maps.
            let a = pass.tape.values(pass.feature_maps).to_vec();
            let k = 8;
            let n = cloud.len();
            let mut arg = vec![0usize; k];
            let mut best = vec![f64::NEG_INFINITY; k];
            for row in 0..n {
                for col in 0..k {
                    if a[row * k + col] > best[col] {
                        best[col] = a[row * k + col];
                        arg[col] = row;
                    }
                }
            }
            (best, arg)
        };
        let score = pass.class_score(1).unwrap();
        let grads = pass.tape.backward(score).unwrap();
        let ga = grads.get(pass.feature_maps).unwrap();
        let winners: std::collections::HashSet<usize> = argmax.into_iter().collect();
        for (i, &g) in ga.iter().enumerate() {
            if g != 0.0 {
                assert!(winners.contains(&(i / 8)), "grad at non-winning row {}", i / 8);
            }
        }
        assert!(ga.iter().any(|&g| g != 0.0));
    }

    #[test]
    fn variable_forward_shapes_and_association() {
        let net = Network::Variable(VariableNet::new(16, 2, 4, 8, 3).unwrap());
        let cloud = demo_cloud(64, 5);
        let pass = net.forward(&cloud, false).unwrap();
        assert_eq!(pass.tape.shape(pass.feature_maps), &[16, 16]);
        assert_eq!(pass.association.len(), 16);
        let mut distinct = pass.association.clone();
        distinct.sort_unstable();
        distinct.dedup();
        assert_eq!(distinct.len(), 16, "association must be pairwise distinct");
    }

    #[test]
    fn variable_feature_gradient_has_full_shape() {
        let net = Network::Variable(VariableNet::new(16, 2, 4, 8, 3).unwrap());
        let cloud = demo_cloud(64, 6);
        let mut pass = net.forward(&cloud, false).unwrap();
        let score = pass.class_score(0).unwrap();
        let grads = pass.tape.backward(score).unwrap();
        let ga = grads.get(pass.feature_maps).unwrap();
        assert_eq!(ga.len(), 16 * 16);
        assert!(ga.iter().all(|g| g.is_finite()));
    }

    #[test]
    fn variable_run_is_deterministic_with_duplicate_points() {
        let mut pts = demo_cloud(32, 8).points().to_vec();
        for i in 0..8 {
            pts[i + 8] = pts[i]; // inject exact duplicates
        }
        let cloud = PointCloud::new(pts, None).unwrap();
        let net = Network::Variable(VariableNet::new(8, 2, 4, 4, 2).unwrap());
        let a = net.forward(&cloud, false).unwrap();
        let b = net.forward(&cloud, false).unwrap();
        assert_eq!(a.logit_values(), b.logit_values());
        assert_eq!(a.association, b.association);
    }

    #[test]
    fn variable_respects_sampling_pools() {
        let cloud = demo_cloud(64, 11);
        let net = Network::Variable(VariableNet::new(8, 2, 4, 8, 1).unwrap());

        // All centroids must avoid explained points while alternatives exist.
        let mut partly = cloud.clone();
        for i in 0..48 {
            partly.mark_explained(i);
        }
        let pass = net.forward(&partly, false).unwrap();
        assert!(pass.association.iter().all(|&i| i >= 48));

        // With everything explained, sampling falls back to alive points.
        let mut all_explained = cloud.clone();
        for i in 0..64 {
            all_explained.mark_explained(i);
        }
        let pass = net.forward(&all_explained, false).unwrap();
        assert_eq!(pass.association.len(), 16);
    }

    #[test]
    fn predict_reports_softmax_and_lowest_tie() {
        // Zero net with head output bias [2, 1]: logits are exactly [2, 1].
        let mut net = zeroed(Network::Fixed(FixedNet::new(8, 2, 0).unwrap()));
        for t in net.params_mut().tensors_mut() {
            if t.name == "head.b1" {
                t.values = vec![2.0, 1.0];
            }
        }
        let (class, probs) = net.predict(&demo_cloud(32, 3)).unwrap();
        assert_eq!(class, 0);
        assert!((probs[0] - 0.731).abs() < 1e-3);
        assert!((probs[1] - 0.269).abs() < 1e-3);
        assert!((probs.iter().sum::<f64>() - 1.0).abs() < 1e-12);

        // Exact tie goes to the lowest class index.
        let tied = zeroed(Network::Fixed(FixedNet::new(8, 3, 0).unwrap()));
        let (class, _) = tied.predict(&demo_cloud(32, 3)).unwrap();
        assert_eq!(class, 0);
    }

    #[test]
    fn checkpoint_round_trip_preserves_predictions() {
        let dir = tempfile::tempdir().unwrap();
        let cloud = demo_cloud(64, 13);
        for net in [
            Network::Fixed(FixedNet::new(16, 2, 21).unwrap()),
            Network::Variable(VariableNet::new(16, 2, 4, 8, 22).unwrap()),
        ] {
            let path = dir.path().join(format!("{}.ckpt", net.kind_name()));
            net.save(&path).unwrap();
            let loaded = Network::load(&path).unwrap();
            assert_eq!(loaded, net);
            let before = net.forward(&cloud, false).unwrap();
            let after = loaded.forward(&cloud, false).unwrap();
            assert_eq!(before.logit_values(), after.logit_values());
        }
    }
}
