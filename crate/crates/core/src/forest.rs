//! Random-forest regressor used as the second stage of the hybrid estimator.
//!
//! Trees greedily minimize the sum of squared errors, splitting at midpoints
//! between distinct feature values. Each tree trains on its own bootstrap
//! resample drawn from a generator seeded by (forest seed, tree index), so a
//! forest is a pure function of its inputs and seed no matter how many
//! threads build it.

use crate::{Error, Matrix, Result, Scalar};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

/// Forest shape and sampling knobs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct ForestConfig {
    pub n_trees: usize,
    /// Number of split levels below the root; zero forces a single leaf.
    pub max_depth: usize,
    pub min_samples_leaf: usize,
    /// Draw a same-size bootstrap resample per tree. Turning this off makes
    /// every tree fit the full dataset (useful for exact-fit checks).
    pub bootstrap: bool,
    pub seed: u64,
}

impl Default for ForestConfig {
    fn default() -> Self {
        Self {
            n_trees: 64,
            max_depth: 10,
            min_samples_leaf: 1,
            bootstrap: true,
            seed: 0,
        }
    }
}

impl ForestConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_trees == 0 {
            return Err(Error::invalid("a forest needs at least one tree"));
        }
        if self.min_samples_leaf == 0 {
            return Err(Error::invalid("leaves need at least one sample"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
enum Node<T> {
    Leaf {
        value: T,
    },
    Split {
        feature: usize,
        threshold: T,
        left: usize,
        right: usize,
    },
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
struct Tree<T> {
    nodes: Vec<Node<T>>,
}

impl<T: Scalar> Tree<T> {
    fn predict(&self, row: &[T]) -> T {
        let mut at = 0usize;
        loop {
            match &self.nodes[at] {
                Node::Leaf { value } => return *value,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    at = if row[*feature] <= *threshold {
                        *left
                    } else {
                        *right
                    };
                }
            }
        }
    }
}

/// Trained forest.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct RandomForest<T> {
    config: ForestConfig,
    n_features: usize,
    trees: Vec<Tree<T>>,
}

/// Same-size sampling with replacement; the building block of bagging,
/// exposed so its coverage statistics can be tested directly.
pub fn bootstrap_indices<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<usize> {
    (0..n).map(|_| rng.random_range(0..n)).collect()
}

/// Best split of `indices` on one feature, by SSE reduction.
struct SplitCandidate<T> {
    feature: usize,
    threshold: T,
    gain: T,
}

fn best_split<T: Scalar>(
    features: &Matrix<T>,
    targets: &[T],
    indices: &[usize],
    min_leaf: usize,
    scratch: &mut Vec<(T, T)>,
) -> Option<SplitCandidate<T>> {
    let n = indices.len();
    if n < 2 * min_leaf {
        return None;
    }
    let total: T = indices.iter().map(|&i| targets[i]).sum();
    let n_t = T::from_f64(n as f64);
    let base_score = total * total / n_t;

    let mut best: Option<SplitCandidate<T>> = None;
    for feature in 0..features.cols() {
        scratch.clear();
        scratch.extend(indices.iter().map(|&i| (features.get(i, feature), targets[i])));
        scratch.sort_by(|a, b| a.0.partial_cmp(&b.0).expect("finite feature values"));
        // Walk split positions left to right, keeping the left-side target
        // sum; score = sum_L^2/n_L + sum_R^2/n_R, maximized exactly where
        // the SSE drop is largest.
        let mut left_sum = T::zero();
        for pos in 0..n - 1 {
            left_sum += scratch[pos].1;
            let n_left = pos + 1;
            let n_right = n - n_left;
            if n_left < min_leaf || n_right < min_leaf {
                continue;
            }
            let (v_here, v_next) = (scratch[pos].0, scratch[pos + 1].0);
            if v_here == v_next {
                continue;
            }
            let right_sum = total - left_sum;
            let score = left_sum * left_sum / T::from_f64(n_left as f64)
                + right_sum * right_sum / T::from_f64(n_right as f64);
            let gain = score - base_score;
            // Strict improvement keeps ties on the earliest feature and the
            // lowest threshold, independent of evaluation order.
            if gain > T::zero() && best.as_ref().map_or(true, |b| gain > b.gain) {
                best = Some(SplitCandidate {
                    feature,
                    threshold: (v_here + v_next) / T::from_f64(2.0),
                    gain,
                });
            }
        }
    }
    best
}

fn build_node<T: Scalar>(
    features: &Matrix<T>,
    targets: &[T],
    indices: &mut Vec<usize>,
    depth_left: usize,
    min_leaf: usize,
    nodes: &mut Vec<Node<T>>,
    scratch: &mut Vec<(T, T)>,
) -> usize {
    let mean =
        indices.iter().map(|&i| targets[i]).sum::<T>() / T::from_f64(indices.len() as f64);
    if depth_left == 0 {
        nodes.push(Node::Leaf { value: mean });
        return nodes.len() - 1;
    }
    let Some(split) = best_split(features, targets, indices, min_leaf, scratch) else {
        nodes.push(Node::Leaf { value: mean });
        return nodes.len() - 1;
    };
    let (mut left_idx, mut right_idx): (Vec<usize>, Vec<usize>) = indices
        .iter()
        .partition(|&&i| features.get(i, split.feature) <= split.threshold);
    let here = nodes.len();
    nodes.push(Node::Leaf { value: mean }); // placeholder, patched below
    let left = build_node(
        features,
        targets,
        &mut left_idx,
        depth_left - 1,
        min_leaf,
        nodes,
        scratch,
    );
    let right = build_node(
        features,
        targets,
        &mut right_idx,
        depth_left - 1,
        min_leaf,
        nodes,
        scratch,
    );
    nodes[here] = Node::Split {
        feature: split.feature,
        threshold: split.threshold,
        left,
        right,
    };
    here
}

fn build_tree<T: Scalar>(
    features: &Matrix<T>,
    targets: &[T],
    config: &ForestConfig,
    tree_index: usize,
) -> Tree<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(tree_index as u64);
    let mut indices = if config.bootstrap {
        bootstrap_indices(targets.len(), &mut rng)
    } else {
        (0..targets.len()).collect()
    };
    let mut nodes = Vec::new();
    let mut scratch = Vec::with_capacity(indices.len());
    build_node(
        features,
        targets,
        &mut indices,
        config.max_depth,
        config.min_samples_leaf,
        &mut nodes,
        &mut scratch,
    );
    Tree { nodes }
}

/// Fits a forest of SSE-greedy regression trees.
pub fn fit<T: Scalar>(
    features: &Matrix<T>,
    targets: &[T],
    config: &ForestConfig,
) -> Result<RandomForest<T>> {
    config.validate()?;
    if features.rows() != targets.len() {
        return Err(Error::LengthMismatch {
            left: features.rows(),
            right: targets.len(),
        });
    }
    if targets.is_empty() {
        return Err(Error::EmptyDataset("no samples to fit a forest on".into()));
    }
    if features.cols() == 0 {
        return Err(Error::invalid("feature table has no columns"));
    }
    for (i, t) in targets.iter().enumerate() {
        if !t.is_finite() {
            return Err(Error::OutOfRange(format!("non-finite target at row {i}")));
        }
    }
    if let Some(k) = features.as_slice().iter().position(|v| !v.is_finite()) {
        return Err(Error::OutOfRange(format!(
            "non-finite feature at entry {k}"
        )));
    }

    // Trees are independent given their (seed, index) pair, so building them
    // in parallel and collecting by index gives the sequential result.
    let trees: Vec<Tree<T>> = (0..config.n_trees)
        .into_par_iter()
        .map(|t| build_tree(features, targets, config, t))
        .collect();
    Ok(RandomForest {
        config: *config,
        n_features: features.cols(),
        trees,
    })
}

impl<T: Scalar> RandomForest<T> {
    #[must_use]
    pub fn config(&self) -> &ForestConfig {
        &self.config
    }

    #[must_use]
    pub fn n_features(&self) -> usize {
        self.n_features
    }

    #[must_use]
    pub fn n_trees(&self) -> usize {
        self.trees.len()
    }

    /// Mean prediction over all trees for one feature row.
    pub fn predict_row(&self, row: &[T]) -> Result<T> {
        if row.len() != self.n_features {
            return Err(Error::LengthMismatch {
                left: row.len(),
                right: self.n_features,
            });
        }
        let sum: T = self.trees.iter().map(|t| t.predict(row)).sum();
        Ok(sum / T::from_f64(self.trees.len() as f64))
    }

    /// Predictions for every row of `features`, in order.
    pub fn predict(&self, features: &Matrix<T>) -> Result<Vec<T>> {
        (0..features.rows())
            .map(|r| self.predict_row(features.row(r)))
            .collect()
    }

    /// Consistency check used when loading a forest from a file.
    pub fn check(&self) -> Result<()> {
        self.config.validate()?;
        if self.trees.is_empty() || self.n_features == 0 {
            return Err(Error::invalid("forest has no trees or no features"));
        }
        for tree in &self.trees {
            if tree.nodes.is_empty() {
                return Err(Error::invalid("empty tree"));
            }
            for node in &tree.nodes {
                if let Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } = node
                {
                    if *feature >= self.n_features
                        || !threshold.is_finite()
                        || *left >= tree.nodes.len()
                        || *right >= tree.nodes.len()
                    {
                        return Err(Error::invalid("malformed split node"));
                    }
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn table(rows: &[&[f64]]) -> Matrix<f64> {
        let mut m = Matrix::zeros(0, rows[0].len());
        for r in rows {
            m.push_row(r).unwrap();
        }
        m
    }

    fn single_tree() -> ForestConfig {
        ForestConfig {
            n_trees: 1,
            bootstrap: false,
            ..ForestConfig::default()
        }
    }

    #[test]
    fn stump_splits_at_the_midpoint_with_leaf_means() {
        // One feature, clean two-cluster targets: the only sensible split is
        // between 2.0 and 5.0, and the leaves are cluster means.
        let x = table(&[&[1.0], &[2.0], &[5.0], &[6.0]]);
        let y = [10.0, 12.0, 30.0, 34.0];
        let cfg = ForestConfig {
            max_depth: 1,
            ..single_tree()
        };
        let forest = fit(&x, &y, &cfg).unwrap();
        assert_relative_eq!(forest.predict_row(&[3.4]).unwrap(), 11.0);
        assert_relative_eq!(forest.predict_row(&[3.6]).unwrap(), 32.0);
        // The split must sit exactly halfway between the clusters.
        assert_relative_eq!(forest.predict_row(&[3.4999]).unwrap(), 11.0);
        assert_relative_eq!(forest.predict_row(&[3.5001]).unwrap(), 32.0);
    }

    #[test]
    fn deep_tree_memorizes_distinct_rows() {
        let x = table(&[&[0.0], &[1.0], &[2.0], &[3.0], &[4.0], &[5.0], &[6.0], &[7.0]]);
        let y = [3.0, -1.0, 4.0, 1.0, -5.0, 9.0, 2.0, 6.0];
        let forest = fit(&x, &y, &single_tree()).unwrap();
        let pred = forest.predict(&x).unwrap();
        for (p, t) in pred.iter().zip(&y) {
            assert_relative_eq!(p, t);
        }
    }

    #[test]
    fn min_samples_leaf_collapses_to_the_mean() {
        let x = table(&[&[0.0], &[1.0], &[2.0], &[3.0]]);
        let y = [1.0, 2.0, 3.0, 4.0];
        let cfg = ForestConfig {
            min_samples_leaf: 4,
            ..single_tree()
        };
        let forest = fit(&x, &y, &cfg).unwrap();
        for v in [-10.0, 0.0, 1.5, 99.0] {
            assert_relative_eq!(forest.predict_row(&[v]).unwrap(), 2.5);
        }
    }

    #[test]
    fn zero_depth_is_a_single_leaf() {
        let x = table(&[&[0.0], &[10.0]]);
        let y = [2.0, 4.0];
        let cfg = ForestConfig {
            max_depth: 0,
            ..single_tree()
        };
        let forest = fit(&x, &y, &cfg).unwrap();
        assert_relative_eq!(forest.predict_row(&[0.0]).unwrap(), 3.0);
        assert_relative_eq!(forest.predict_row(&[10.0]).unwrap(), 3.0);
    }

    #[test]
    fn equal_gains_pick_the_lowest_feature_index() {
        // Feature 1 duplicates feature 0, so every split gain ties; the tree
        // must route through feature 0.
        let x = table(&[&[0.0, 0.0], &[1.0, 1.0], &[2.0, 2.0], &[3.0, 3.0]]);
        let y = [0.0, 0.0, 8.0, 8.0];
        let forest = fit(&x, &y, &single_tree()).unwrap();
        // Disagreeing columns expose which feature the root used: feature 0
        // low, feature 1 high must land in the low leaf.
        assert_relative_eq!(forest.predict_row(&[0.5, 3.0]).unwrap(), 0.0);
        assert_relative_eq!(forest.predict_row(&[2.5, 0.0]).unwrap(), 8.0);
    }

    #[test]
    fn constant_targets_make_a_leaf() {
        let x = table(&[&[0.0], &[1.0], &[2.0]]);
        let y = [7.0, 7.0, 7.0];
        let forest = fit(&x, &y, &single_tree()).unwrap();
        assert_eq!(forest.trees[0].nodes.len(), 1);
        assert_relative_eq!(forest.predict_row(&[1.0]).unwrap(), 7.0);
    }

    #[test]
    fn bootstrap_covers_the_expected_fraction() {
        use rand::SeedableRng;
        let mut rng = ChaCha8Rng::seed_from_u64(1234);
        let n = 2000;
        let mut fractions = Vec::new();
        for _ in 0..20 {
            let draw = bootstrap_indices(n, &mut rng);
            assert_eq!(draw.len(), n);
            let mut seen = vec![false; n];
            for &i in &draw {
                seen[i] = true;
            }
            let unique = seen.iter().filter(|&&s| s).count();
            fractions.push(unique as f64 / n as f64);
        }
        let mean = fractions.iter().sum::<f64>() / fractions.len() as f64;
        // Sampling with replacement keeps about 1 - 1/e of the rows.
        assert!(
            (mean - 0.632).abs() < 0.02,
            "unique fraction {mean} is far from 0.632"
        );
    }

    #[test]
    fn same_seed_reproduces_the_forest() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut x = Matrix::zeros(0, 3);
        let mut y = Vec::new();
        for _ in 0..150 {
            let row: Vec<f64> = (0..3).map(|_| rng.random::<f64>()).collect();
            y.push(row[0] * 2.0 - row[2]);
            x.push_row(&row).unwrap();
        }
        let cfg = ForestConfig {
            n_trees: 16,
            seed: 99,
            ..ForestConfig::default()
        };
        let a = fit(&x, &y, &cfg).unwrap();
        let b = fit(&x, &y, &cfg).unwrap();
        assert_eq!(a, b);
        // A different seed gives different trees.
        let c = fit(
            &x,
            &y,
            &ForestConfig {
                seed: 100,
                ..cfg
            },
        )
        .unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn forest_beats_the_mean_predictor_on_a_smooth_target() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut x = Matrix::zeros(0, 2);
        let mut y = Vec::new();
        for _ in 0..400 {
            let a: f64 = rng.random::<f64>() * 4.0 - 2.0;
            let b: f64 = rng.random::<f64>() * 4.0 - 2.0;
            x.push_row(&[a, b]).unwrap();
            y.push((a * 1.3 - 0.4 * b).sin() + 0.5 * a);
        }
        let forest = fit(&x, &y, &ForestConfig::default()).unwrap();
        let pred = forest.predict(&x).unwrap();
        let mean = y.iter().sum::<f64>() / y.len() as f64;
        let forest_mae: f64 =
            pred.iter().zip(&y).map(|(p, t)| (p - t).abs()).sum::<f64>() / y.len() as f64;
        let mean_mae: f64 = y.iter().map(|t| (t - mean).abs()).sum::<f64>() / y.len() as f64;
        assert!(
            forest_mae < 0.2 * mean_mae,
            "forest MAE {forest_mae} vs mean-predictor MAE {mean_mae}"
        );
    }

    #[test]
    fn rejects_bad_inputs() {
        let x = table(&[&[0.0], &[1.0]]);
        assert!(matches!(
            fit(&x, &[1.0], &ForestConfig::default()),
            Err(Error::LengthMismatch { .. })
        ));
        assert!(matches!(
            fit(&x, &[1.0, f64::NAN], &ForestConfig::default()),
            Err(Error::OutOfRange(_))
        ));
        let cfg = ForestConfig {
            n_trees: 0,
            ..ForestConfig::default()
        };
        assert!(fit(&x, &[1.0, 2.0], &cfg).is_err());
        let forest = fit(&x, &[1.0, 2.0], &ForestConfig::default()).unwrap();
        assert!(matches!(
            forest.predict_row(&[1.0, 2.0]),
            Err(Error::LengthMismatch { .. })
        ));
    }

    #[test]
    fn check_flags_malformed_trees() {
        let x = table(&[&[0.0], &[1.0], &[2.0], &[3.0]]);
        let y = [1.0, 2.0, 5.0, 6.0];
        let mut forest = fit(&x, &y, &single_tree()).unwrap();
        assert!(forest.check().is_ok());
        forest.n_features = 0;
        assert!(forest.check().is_err());
    }
}
