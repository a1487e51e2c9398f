//! Isolation forest built from scratch.
//!
//! Each tree partitions a random subsample by repeatedly choosing a uniform
//! random feature and a uniform random split value strictly between that
//! feature's min and max at the node, stopping at the height limit
//! `ceil(log2(subsample))`, at a single point, or when the chosen feature is
//! constant. Anomalies need fewer splits to isolate, so they end up with
//! short root-to-leaf paths.
//!
//! The anomaly score follows `s(x) = 2^(-E[h(x)] / c(m))` where `h` counts
//! edges plus an adjustment `c(leaf_size)` at truncated leaves, and
//! `c(n) = 2 H(n-1) - 2 (n-1)/n` (with `H(i) = ln(i) + Euler gamma`) is the
//! expected path length of an unsuccessful binary search over `n` points.
//! Scores lie strictly inside (0, 1); higher means more anomalous.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::latent::LatentSequence;

pub const FOREST_FORMAT_VERSION: u32 = 1;
const FOREST_KIND: &str = "isolation-forest";

const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;

#[derive(Debug, Error)]
pub enum IforestError {
    #[error("need at least 2 points to fit, got {0}")]
    TooFewPoints(usize),
    #[error("point dimension {got} does not match forest dimension {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("malformed forest file: {0}")]
    Json(#[from] serde_json::Error),
    #[error("unsupported format version {found} (expected {expected})")]
    FormatVersion { found: u32, expected: u32 },
    #[error("forest file kind `{found}` is not `{expected}`")]
    WrongKind { found: String, expected: String },
}

/// Expected path length `c(n)` of an unsuccessful binary-search-tree lookup
/// over `n` points; `c(0) = c(1) = 0`.
pub fn expected_path_length(n: usize) -> f64 {
    if n <= 1 {
        return 0.0;
    }
    let nf = n as f64;
    2.0 * ((nf - 1.0).ln() + EULER_GAMMA) - 2.0 * (nf - 1.0) / nf
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum TreeNode {
    Split {
        feature: usize,
        value: f64,
        left: Box<TreeNode>,
        right: Box<TreeNode>,
    },
    Leaf {
        size: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IsolationTree {
    pub root: TreeNode,
}

impl IsolationTree {
    /// Edge count to the leaf containing `x`, plus `c(size)` at the leaf.
    pub fn path_length(&self, x: &[f64]) -> f64 {
        let mut node = &self.root;
        let mut depth = 0usize;
        loop {
            match node {
                TreeNode::Leaf { size } => {
                    return depth as f64 + expected_path_length(*size);
                }
                TreeNode::Split {
                    feature,
                    value,
                    left,
                    right,
                } => {
                    node = if x[*feature] < *value { left } else { right };
                    depth += 1;
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ForestConfig {
    pub n_trees: usize,
    /// Per-tree subsample size; clamped to the dataset size.
    pub subsample: usize,
    /// Anomaly threshold on the score; 1 is flagged when score > threshold.
    pub threshold: f64,
}

impl Default for ForestConfig {
    fn default() -> Self {
        Self {
            n_trees: 100,
            subsample: 256,
            threshold: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IsolationForestModel {
    pub trees: Vec<IsolationTree>,
    /// Actual per-tree subsample size used (min(config, n)).
    pub subsample: usize,
    pub threshold: f64,
    pub n_features: usize,
}

/// Fit an isolation forest on `n >= 2` points of equal dimension.
///
/// Per-tree seeds are drawn from `rng` up front, so the forest is identical
/// for a given seed regardless of tree build order.
pub fn fit(
    points: &[Vec<f64>],
    cfg: &ForestConfig,
    rng: &mut impl Rng,
) -> Result<IsolationForestModel, IforestError> {
    if points.len() < 2 {
        return Err(IforestError::TooFewPoints(points.len()));
    }
    let n_features = points[0].len();
    assert!(
        points.iter().all(|p| p.len() == n_features),
        "ragged point dimensions"
    );
    let m = cfg.subsample.max(2).min(points.len());
    let height_limit = (m as f64).log2().ceil() as usize;
    let tree_seeds: Vec<u64> = (0..cfg.n_trees).map(|_| rng.gen()).collect();
    let trees = tree_seeds
        .into_iter()
        .map(|seed| {
            let mut tree_rng = ChaCha8Rng::seed_from_u64(seed);
            let sample = rand::seq::index::sample(&mut tree_rng, points.len(), m).into_vec();
            IsolationTree {
                root: build_node(points, &sample, 0, height_limit, &mut tree_rng),
            }
        })
        .collect();
    Ok(IsolationForestModel {
        trees,
        subsample: m,
        threshold: cfg.threshold,
        n_features,
    })
}

fn build_node(
    points: &[Vec<f64>],
    idxs: &[usize],
    depth: usize,
    height_limit: usize,
    rng: &mut impl Rng,
) -> TreeNode {
    if idxs.len() <= 1 || depth >= height_limit {
        return TreeNode::Leaf { size: idxs.len() };
    }
    let feature = rng.gen_range(0..points[idxs[0]].len());
    let mut min = f64::INFINITY;
    let mut max = f64::NEG_INFINITY;
    for &i in idxs {
        let v = points[i][feature];
        min = min.min(v);
        max = max.max(v);
    }
    if min == max {
        // chosen feature is constant here; terminate
        return TreeNode::Leaf { size: idxs.len() };
    }
    let value = min + rng.gen::<f64>() * (max - min);
    if value <= min || value >= max {
        // adjacent floats can collapse the open interval
        return TreeNode::Leaf { size: idxs.len() };
    }
    let (left_idx, right_idx): (Vec<usize>, Vec<usize>) =
        idxs.iter().partition(|&&i| points[i][feature] < value);
    TreeNode::Split {
        feature,
        value,
        left: Box::new(build_node(points, &left_idx, depth + 1, height_limit, rng)),
        right: Box::new(build_node(points, &right_idx, depth + 1, height_limit, rng)),
    }
}

impl IsolationForestModel {
    /// Mean normalized path length mapped to (0, 1); higher is more
    /// anomalous.
    pub fn anomaly_score(&self, x: &[f64]) -> f64 {
        assert_eq!(x.len(), self.n_features, "point dimension mismatch");
        let mean_path = self
            .trees
            .iter()
            .map(|t| t.path_length(x))
            .sum::<f64>()
            / self.trees.len() as f64;
        score_from_mean_path(mean_path, self.subsample)
    }

    /// Label each row of an embedding matrix: 1 where the anomaly score
    /// strictly exceeds the threshold.
    pub fn detect(&self, latent: &LatentSequence) -> Result<Vec<u8>, IforestError> {
        if latent.latent_dim() != self.n_features {
            return Err(IforestError::DimensionMismatch {
                expected: self.n_features,
                got: latent.latent_dim(),
            });
        }
        Ok((0..latent.len())
            .map(|t| u8::from(self.anomaly_score(latent.row(t)) > self.threshold))
            .collect())
    }

    /// As [`Self::detect`], on raw feature rows.
    pub fn detect_rows(&self, rows: &[Vec<f64>]) -> Result<Vec<u8>, IforestError> {
        for row in rows {
            if row.len() != self.n_features {
                return Err(IforestError::DimensionMismatch {
                    expected: self.n_features,
                    got: row.len(),
                });
            }
        }
        Ok(rows
            .iter()
            .map(|r| u8::from(self.anomaly_score(r) > self.threshold))
            .collect())
    }

    pub fn save(&self, path: &std::path::Path) -> Result<(), IforestError> {
        let file = ForestFile {
            format_version: FOREST_FORMAT_VERSION,
            kind: FOREST_KIND.to_string(),
            forest: self.clone(),
        };
        std::fs::write(path, serde_json::to_string_pretty(&file)?)?;
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> Result<Self, IforestError> {
        let file: ForestFile = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        if file.format_version != FOREST_FORMAT_VERSION {
            return Err(IforestError::FormatVersion {
                found: file.format_version,
                expected: FOREST_FORMAT_VERSION,
            });
        }
        if file.kind != FOREST_KIND {
            return Err(IforestError::WrongKind {
                found: file.kind,
                expected: FOREST_KIND.to_string(),
            });
        }
        Ok(file.forest)
    }
}

/// `s = 2^(-mean_path / c(m))` for subsample size `m`.
pub fn score_from_mean_path(mean_path: f64, subsample: usize) -> f64 {
    (-mean_path / expected_path_length(subsample)).exp2()
}

#[derive(Serialize, Deserialize)]
struct ForestFile {
    format_version: u32,
    kind: String,
    forest: IsolationForestModel,
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand_distr::Distribution;

    fn seeded(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    #[test]
    fn expected_path_length_matches_hand_evaluated_values() {
        assert_eq!(expected_path_length(0), 0.0);
        assert_eq!(expected_path_length(1), 0.0);
        assert_relative_eq!(expected_path_length(2), 0.15443132980306573, epsilon = 1e-12);
        assert_relative_eq!(expected_path_length(10), 3.748880484475505, epsilon = 1e-12);
        assert_relative_eq!(
            expected_path_length(256),
            10.244770920119917,
            epsilon = 1e-12
        );
    }

    #[test]
    fn mean_path_equal_to_c_psi_scores_one_half() {
        assert_relative_eq!(score_from_mean_path(expected_path_length(64), 64), 0.5);
    }

    #[test]
    fn two_distinct_points_force_single_split_trees() {
        let points = vec![vec![0.0], vec![1.0]];
        let cfg = ForestConfig {
            n_trees: 25,
            subsample: 2,
            threshold: 0.5,
        };
        let model = fit(&points, &cfg, &mut seeded(3)).unwrap();
        for tree in &model.trees {
            match &tree.root {
                TreeNode::Split { left, right, .. } => {
                    assert_eq!(**left, TreeNode::Leaf { size: 1 });
                    assert_eq!(**right, TreeNode::Leaf { size: 1 });
                }
                TreeNode::Leaf { .. } => panic!("expected a split at the root"),
            }
        }
    }

    #[test]
    fn identical_points_give_single_leaf_and_equal_scores() {
        let points = vec![vec![3.0, 3.0]; 40];
        let model = fit(&points, &ForestConfig::default(), &mut seeded(4)).unwrap();
        for tree in &model.trees {
            assert!(matches!(tree.root, TreeNode::Leaf { .. }));
        }
        let s: Vec<f64> = points.iter().map(|p| model.anomaly_score(p)).collect();
        assert!(s.iter().all(|&v| (v - s[0]).abs() < 1e-15));
        assert_relative_eq!(s[0], 0.5);
    }

    #[test]
    fn fixed_seed_reproduces_identical_forest() {
        let mut rng = seeded(5);
        let points: Vec<Vec<f64>> = (0..200)
            .map(|_| vec![rng.gen::<f64>(), rng.gen::<f64>()])
            .collect();
        let a = fit(&points, &ForestConfig::default(), &mut seeded(9)).unwrap();
        let b = fit(&points, &ForestConfig::default(), &mut seeded(9)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn fit_rejects_fewer_than_two_points() {
        let err = fit(&[vec![1.0]], &ForestConfig::default(), &mut seeded(0)).unwrap_err();
        assert!(matches!(err, IforestError::TooFewPoints(1)));
    }

    fn cluster_plus_outlier(seed: u64) -> Vec<Vec<f64>> {
        let mut rng = seeded(seed);
        let normal = rand_distr::Normal::new(0.0, 1.0).unwrap();
        let mut points: Vec<Vec<f64>> = (0..99)
            .map(|_| vec![normal.sample(&mut rng), normal.sample(&mut rng)])
            .collect();
        points.push(vec![10.0, 10.0]);
        points
    }

    #[test]
    fn far_outlier_attains_maximum_score() {
        for seed in 0..10u64 {
            let points = cluster_plus_outlier(seed);
            let cfg = ForestConfig {
                n_trees: 100,
                subsample: 64,
                threshold: 0.5,
            };
            let model = fit(&points, &cfg, &mut seeded(100 + seed)).unwrap();
            let scores: Vec<f64> = points.iter().map(|p| model.anomaly_score(p)).collect();
            let outlier = scores[99];
            let max_other = scores[..99].iter().cloned().fold(f64::MIN, f64::max);
            assert!(outlier > max_other, "seed {seed}: {outlier} <= {max_other}");
            assert!(outlier > 0.6, "seed {seed}: outlier score {outlier}");
        }
    }

    #[test]
    fn scores_lie_strictly_inside_unit_interval() {
        let points = cluster_plus_outlier(42);
        let model = fit(&points, &ForestConfig::default(), &mut seeded(7)).unwrap();
        for p in &points {
            let s = model.anomaly_score(p);
            assert!(s > 0.0 && s < 1.0, "score {s} out of (0,1)");
        }
    }

    #[test]
    fn threshold_extremes_label_all_or_nothing() {
        let points = cluster_plus_outlier(1);
        let mut cfg = ForestConfig::default();
        cfg.threshold = 1.0;
        let all_clear = fit(&points, &cfg, &mut seeded(2)).unwrap();
        assert!(all_clear
            .detect_rows(&points)
            .unwrap()
            .iter()
            .all(|&l| l == 0));
        cfg.threshold = 0.0;
        let all_flagged = fit(&points, &cfg, &mut seeded(2)).unwrap();
        assert!(all_flagged
            .detect_rows(&points)
            .unwrap()
            .iter()
            .all(|&l| l == 1));
    }

    #[test]
    fn duplicating_points_keeps_scores_stable_under_fixed_subsampling() {
        let points = cluster_plus_outlier(8);
        let mut doubled = points.clone();
        doubled.extend(points.iter().cloned());
        let cfg = ForestConfig {
            n_trees: 200,
            subsample: 64,
            threshold: 0.5,
        };
        let a = fit(&points, &cfg, &mut seeded(21)).unwrap();
        let b = fit(&doubled, &cfg, &mut seeded(22)).unwrap();
        let mean_abs_diff = points
            .iter()
            .map(|p| (a.anomaly_score(p) - b.anomaly_score(p)).abs())
            .sum::<f64>()
            / points.len() as f64;
        assert!(mean_abs_diff < 0.05, "mean |delta| = {mean_abs_diff}");
    }

    #[test]
    fn isolated_point_scores_at_least_as_high_when_included_in_training() {
        let far = vec![12.0, -9.0];
        for seed in 0..5u64 {
            let mut points = cluster_plus_outlier(seed)[..99].to_vec();
            let cfg = ForestConfig {
                n_trees: 200,
                subsample: 64,
                threshold: 0.5,
            };
            let without = fit(&points, &cfg, &mut seeded(300 + seed)).unwrap();
            points.push(far.clone());
            let with = fit(&points, &cfg, &mut seeded(300 + seed)).unwrap();
            let s_without = without.anomaly_score(&far);
            let s_with = with.anomaly_score(&far);
            assert!(
                s_with >= s_without - 0.02,
                "seed {seed}: {s_with} < {s_without}"
            );
        }
    }

    #[test]
    fn save_load_roundtrip() {
        let points = cluster_plus_outlier(3);
        let model = fit(&points, &ForestConfig::default(), &mut seeded(14)).unwrap();
        let dir = std::env::temp_dir().join("vitalsift-iforest-roundtrip");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("forest.json");
        model.save(&path).unwrap();
        let loaded = IsolationForestModel::load(&path).unwrap();
        assert_eq!(model, loaded);
    }

    #[test]
    fn detect_rejects_dimension_mismatch() {
        let points = cluster_plus_outlier(6);
        let model = fit(&points, &ForestConfig::default(), &mut seeded(15)).unwrap();
        let err = model.detect_rows(&[vec![1.0, 2.0, 3.0]]).unwrap_err();
        assert!(matches!(err, IforestError::DimensionMismatch { .. }));
    }
}
