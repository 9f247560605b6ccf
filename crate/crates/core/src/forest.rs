//! Random forest of CART classification trees (Gini criterion) with
//! mean-decrease-in-impurity feature importances.

use rand::seq::SliceRandom;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::dataset::LabeledTable;
use crate::error::{Error, Result};
use crate::par;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum MaxFeatures {
    Sqrt,
    All,
}

impl MaxFeatures {
    fn count(self, n_features: usize) -> usize {
        match self {
            MaxFeatures::Sqrt => ((n_features as f64).sqrt() as usize).max(1),
            MaxFeatures::All => n_features,
        }
    }
}

impl std::str::FromStr for MaxFeatures {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "sqrt" => Ok(MaxFeatures::Sqrt),
            "all" => Ok(MaxFeatures::All),
            _ => Err(format!("unknown max_features {s:?} (sqrt | all)")),
        }
    }
}

impl std::fmt::Display for MaxFeatures {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            MaxFeatures::Sqrt => "sqrt",
            MaxFeatures::All => "all",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ForestConfig {
    pub n_trees: usize,
    pub max_features: MaxFeatures,
    pub bootstrap: bool,
    pub seed: u64,
    pub min_samples_split: usize,
}

impl Default for ForestConfig {
    fn default() -> Self {
        Self {
            n_trees: 100,
            max_features: MaxFeatures::Sqrt,
            bootstrap: true,
            seed: 0,
            min_samples_split: 2,
        }
    }
}

impl ForestConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_trees == 0 {
            return Err(Error::Config("n_trees must be at least 1".into()));
        }
        if self.min_samples_split < 2 {
            return Err(Error::Config("min_samples_split must be at least 2".into()));
        }
        Ok(())
    }
}

/// Gini impurity `1 - Σ p_c²`.
pub fn gini(counts: &[usize]) -> Result<f64> {
    let total: usize = counts.iter().sum();
    if total == 0 {
        return Err(Error::Data("gini of an empty node".into()));
    }
    Ok(gini_unchecked(counts, total))
}

fn gini_unchecked(counts: &[usize], total: usize) -> f64 {
    let t = total as f64;
    1.0 - counts.iter().map(|&c| (c as f64 / t).powi(2)).sum::<f64>()
}

#[derive(Debug, Clone, PartialEq)]
pub enum TreeNode {
    Internal {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
        /// `n·G(node) − n_l·G(left) − n_r·G(right)` in sample counts.
        impurity_decrease: f64,
    },
    Leaf {
        class_counts: Vec<usize>,
    },
}

/// A binary CART tree; node 0 is the root. Samples with
/// `x[feature] <= threshold` go left.
#[derive(Debug, Clone, PartialEq)]
pub struct Tree {
    pub nodes: Vec<TreeNode>,
    pub n_features: usize,
    pub n_classes: usize,
}

impl Tree {
    pub fn predict(&self, x: &[f64]) -> usize {
        let mut at = 0;
        loop {
            match &self.nodes[at] {
                TreeNode::Internal {
                    feature,
                    threshold,
                    left,
                    right,
                    ..
                } => {
                    at = if x[*feature] <= *threshold {
                        *left
                    } else {
                        *right
                    }
                }
                TreeNode::Leaf { class_counts } => return majority(class_counts),
            }
        }
    }

    pub fn is_single_leaf(&self) -> bool {
        self.nodes.len() == 1
    }

    /// Per-feature impurity decrease normalized to sum 1, or `None` when the
    /// tree never split.
    pub fn feature_importances(&self) -> Option<Vec<f64>> {
        let mut imp = vec![0.0; self.n_features];
        for n in &self.nodes {
            if let TreeNode::Internal {
                feature,
                impurity_decrease,
                ..
            } = n
            {
                imp[*feature] += impurity_decrease;
            }
        }
        let total: f64 = imp.iter().sum();
        if total > 0.0 {
            Some(imp.into_iter().map(|v| v / total).collect())
        } else {
            None
        }
    }
}

fn majority(counts: &[usize]) -> usize {
    let mut best = 0;
    for (i, &c) in counts.iter().enumerate() {
        if c > counts[best] {
            best = i;
        }
    }
    best
}

struct Split {
    feature: usize,
    threshold: f64,
    decrease: f64,
}

impl Split {
    /// Larger decrease wins; equal decreases prefer the lower feature index,
    /// then the lower threshold.
    fn beats(&self, other: &Split) -> bool {
        if self.decrease != other.decrease {
            return self.decrease > other.decrease;
        }
        (self.feature, self.threshold) < (other.feature, other.threshold)
    }
}

struct Builder<'a> {
    data: &'a LabeledTable,
    cfg: &'a ForestConfig,
    n_try: usize,
    rng: ChaCha8Rng,
    nodes: Vec<TreeNode>,
}

impl Builder<'_> {
    fn counts(&self, rows: &[usize]) -> Vec<usize> {
        let mut c = vec![0; self.data.n_classes()];
        for &r in rows {
            c[self.data.labels[r]] += 1;
        }
        c
    }

    fn best_split_on(&self, rows: &[usize], feature: usize, parent: &[usize]) -> Option<Split> {
        let x = |r: usize| self.data.features[r][feature];
        let mut sorted = rows.to_vec();
        sorted.sort_by(|&a, &b| x(a).partial_cmp(&x(b)).unwrap());
        let n = sorted.len();
        let parent_weighted = n as f64 * gini_unchecked(parent, n);
        let mut left = vec![0usize; parent.len()];
        let mut best: Option<Split> = None;
        for i in 0..n - 1 {
            left[self.data.labels[sorted[i]]] += 1;
            let (a, b) = (x(sorted[i]), x(sorted[i + 1]));
            if a == b {
                continue;
            }
            let right: Vec<usize> = parent.iter().zip(&left).map(|(p, l)| p - l).collect();
            let (nl, nr) = (i + 1, n - i - 1);
            let decrease = (parent_weighted
                - nl as f64 * gini_unchecked(&left, nl)
                - nr as f64 * gini_unchecked(&right, nr))
            .max(0.0);
            let mut threshold = a + (b - a) / 2.0;
            if threshold >= b {
                threshold = a;
            }
            let cand = Split {
                feature,
                threshold,
                decrease,
            };
            if best.as_ref().is_none_or(|b| cand.beats(b)) {
                best = Some(cand);
            }
        }
        best
    }

    fn grow(&mut self, rows: Vec<usize>) -> usize {
        let counts = self.counts(&rows);
        let id = self.nodes.len();
        self.nodes.push(TreeNode::Leaf {
            class_counts: counts.clone(),
        });
        let pure = counts.iter().filter(|&&c| c > 0).count() <= 1;
        if pure || rows.len() < self.cfg.min_samples_split {
            return id;
        }

        let mut order: Vec<usize> = (0..self.data.n_features()).collect();
        order.shuffle(&mut self.rng);
        let mut best: Option<Split> = None;
        let mut visited = 0;
        for f in order {
            if visited == self.n_try {
                break;
            }
            let first = self.data.features[rows[0]][f];
            if rows.iter().all(|&r| self.data.features[r][f] == first) {
                continue;
            }
            visited += 1;
            if let Some(s) = self.best_split_on(&rows, f, &counts) {
                if best.as_ref().is_none_or(|b| s.beats(b)) {
                    best = Some(s);
                }
            }
        }
        let Some(split) = best else { return id };

        let (l_rows, r_rows): (Vec<usize>, Vec<usize>) = rows
            .iter()
            .partition(|&&r| self.data.features[r][split.feature] <= split.threshold);
        let left = self.grow(l_rows);
        let right = self.grow(r_rows);
        self.nodes[id] = TreeNode::Internal {
            feature: split.feature,
            threshold: split.threshold,
            left,
            right,
            impurity_decrease: split.decrease,
        };
        id
    }
}

/// Fits one CART tree on the given rows (duplicates allowed).
pub fn fit_tree(data: &LabeledTable, rows: Vec<usize>, cfg: &ForestConfig, seed: u64) -> Tree {
    let mut b = Builder {
        data,
        cfg,
        n_try: cfg.max_features.count(data.n_features()),
        rng: ChaCha8Rng::seed_from_u64(seed),
        nodes: Vec::new(),
    };
    b.grow(rows);
    Tree {
        nodes: b.nodes,
        n_features: data.n_features(),
        n_classes: data.n_classes(),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Forest {
    pub trees: Vec<Tree>,
    pub n_features: usize,
    pub n_classes: usize,
}

/// Fits `n_trees` trees, each from its own seed drawn from the master seed,
/// so the result does not depend on scheduling.
pub fn fit_forest(data: &LabeledTable, cfg: &ForestConfig) -> Result<Forest> {
    cfg.validate()?;
    let mut master = ChaCha8Rng::seed_from_u64(cfg.seed);
    let seeds: Vec<u64> = (0..cfg.n_trees).map(|_| master.next_u64()).collect();
    let n = data.n_samples();
    let trees = par::map(&seeds, |&s| {
        let mut rng = ChaCha8Rng::seed_from_u64(s);
        let rows: Vec<usize> = if cfg.bootstrap {
            (0..n).map(|_| rng.gen_range(0..n)).collect()
        } else {
            (0..n).collect()
        };
        fit_tree(data, rows, cfg, rng.next_u64())
    });
    Ok(Forest {
        trees,
        n_features: data.n_features(),
        n_classes: data.n_classes(),
    })
}

impl Forest {
    /// Majority vote over trees; ties go to the lowest class id.
    pub fn predict(&self, x: &[f64]) -> usize {
        let mut votes = vec![0usize; self.n_classes];
        for t in &self.trees {
            votes[t.predict(x)] += 1;
        }
        majority(&votes)
    }

    pub fn accuracy(&self, data: &LabeledTable) -> f64 {
        let correct = data
            .features
            .iter()
            .zip(&data.labels)
            .filter(|(x, &y)| self.predict(x) == y)
            .count();
        correct as f64 / data.n_samples() as f64
    }

    /// Mean over split-bearing trees of each tree's normalized impurity
    /// decrease. `None` when no tree split at all.
    pub fn feature_importances(&self) -> Option<Vec<f64>> {
        let per_tree: Vec<Vec<f64>> = self
            .trees
            .iter()
            .filter_map(Tree::feature_importances)
            .collect();
        if per_tree.is_empty() {
            return None;
        }
        let mut mean = vec![0.0; self.n_features];
        for imp in &per_tree {
            for (m, v) in mean.iter_mut().zip(imp) {
                *m += v / per_tree.len() as f64;
            }
        }
        let total: f64 = mean.iter().sum();
        Some(mean.into_iter().map(|v| v / total).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table(features: Vec<Vec<f64>>, labels: Vec<usize>, n_classes: usize) -> LabeledTable {
        let nf = features[0].len();
        LabeledTable::new(
            features,
            (0..nf).map(|i| format!("f{i}")).collect(),
            labels,
            (0..n_classes).map(|c| format!("c{c}")).collect(),
        )
        .unwrap()
    }

    #[test]
    fn gini_examples() {
        assert_eq!(gini(&[10, 0, 0]).unwrap(), 0.0);
        assert_eq!(gini(&[5, 5]).unwrap(), 0.5);
        assert!((gini(&[1, 2, 3]).unwrap() - 11.0 / 18.0).abs() < 1e-15);
        assert!(gini(&[0, 0]).is_err());
    }

    #[test]
    fn single_class_gives_single_leaves() {
        let t = table(vec![vec![1.0], vec![2.0], vec![3.0]], vec![0, 0, 0], 1);
        let f = fit_forest(
            &t,
            &ForestConfig {
                n_trees: 5,
                ..Default::default()
            },
        )
        .unwrap();
        assert!(f.trees.iter().all(Tree::is_single_leaf));
        assert_eq!(f.feature_importances(), None);
    }

    #[test]
    fn single_informative_feature() {
        let mut feats = Vec::new();
        let mut labels = Vec::new();
        for i in 0..40 {
            // feature 1 is constant noise-free filler
            feats.push(vec![i as f64, 5.0]);
            labels.push(usize::from(i >= 20));
        }
        let t = table(feats, labels, 2);
        let f = fit_forest(
            &t,
            &ForestConfig {
                n_trees: 20,
                ..Default::default()
            },
        )
        .unwrap();
        let imp = f.feature_importances().unwrap();
        assert_eq!(imp, vec![1.0, 0.0]);
        assert_eq!(f.accuracy(&t), 1.0);
    }

    #[test]
    fn hand_built_mdi() {
        // Tree A: root splits f0 (decrease 4), left child splits f1 (decrease 1).
        // Tree B: root splits f1 (decrease 2).
        let leaf = |c: Vec<usize>| TreeNode::Leaf { class_counts: c };
        let a = Tree {
            nodes: vec![
                TreeNode::Internal {
                    feature: 0,
                    threshold: 0.5,
                    left: 1,
                    right: 4,
                    impurity_decrease: 4.0,
                },
                TreeNode::Internal {
                    feature: 1,
                    threshold: 0.5,
                    left: 2,
                    right: 3,
                    impurity_decrease: 1.0,
                },
                leaf(vec![2, 0]),
                leaf(vec![0, 1]),
                leaf(vec![0, 5]),
            ],
            n_features: 2,
            n_classes: 2,
        };
        let b = Tree {
            nodes: vec![
                TreeNode::Internal {
                    feature: 1,
                    threshold: 0.0,
                    left: 1,
                    right: 2,
                    impurity_decrease: 2.0,
                },
                leaf(vec![3, 0]),
                leaf(vec![0, 3]),
            ],
            n_features: 2,
            n_classes: 2,
        };
        let forest = Forest {
            trees: vec![a, b],
            n_features: 2,
            n_classes: 2,
        };
        // tree A: (0.8, 0.2); tree B: (0, 1); mean: (0.4, 0.6)
        let imp = forest.feature_importances().unwrap();
        assert!((imp[0] - 0.4).abs() < 1e-15);
        assert!((imp[1] - 0.6).abs() < 1e-15);
        assert_eq!(forest.predict(&[0.0, 1.0]), 1);
    }

    #[test]
    fn impurity_decrease_matches_hand_arithmetic() {
        // 4 samples: classes (0,0,1,1) perfectly split on f0.
        let t = table(
            vec![vec![0.0], vec![1.0], vec![2.0], vec![3.0]],
            vec![0, 0, 1, 1],
            2,
        );
        let cfg = ForestConfig {
            n_trees: 1,
            bootstrap: false,
            max_features: MaxFeatures::All,
            ..Default::default()
        };
        let tree = fit_tree(&t, vec![0, 1, 2, 3], &cfg, 0);
        match &tree.nodes[0] {
            TreeNode::Internal {
                feature,
                threshold,
                impurity_decrease,
                ..
            } => {
                assert_eq!(*feature, 0);
                assert_eq!(*threshold, 1.5);
                // 4 * 0.5 - 0 - 0
                assert_eq!(*impurity_decrease, 2.0);
            }
            other => panic!("expected split, got {other:?}"),
        }
        assert_eq!(tree.nodes.len(), 3);
    }

    #[test]
    fn tie_break_prefers_lower_feature() {
        // Both features separate perfectly; feature 0 must win.
        let t = table(
            vec![
                vec![0.0, 0.0],
                vec![1.0, 1.0],
                vec![2.0, 2.0],
                vec![3.0, 3.0],
            ],
            vec![0, 0, 1, 1],
            2,
        );
        let cfg = ForestConfig {
            max_features: MaxFeatures::All,
            bootstrap: false,
            ..Default::default()
        };
        for seed in 0..10 {
            let tree = fit_tree(&t, vec![0, 1, 2, 3], &cfg, seed);
            assert!(matches!(
                tree.nodes[0],
                TreeNode::Internal { feature: 0, .. }
            ));
        }
    }

    #[test]
    fn deterministic_and_single_tree_reduction() {
        let feats: Vec<Vec<f64>> = (0..60)
            .map(|i| {
                vec![
                    ((i * 37) % 11) as f64,
                    ((i * 13) % 7) as f64,
                    (i % 5) as f64,
                ]
            })
            .collect();
        let labels: Vec<usize> = (0..60).map(|i| (i * 7 % 3) as usize).collect();
        let t = table(feats, labels, 3);
        let cfg = ForestConfig {
            n_trees: 15,
            ..Default::default()
        };
        let a = fit_forest(&t, &cfg).unwrap();
        let b = fit_forest(&t, &cfg).unwrap();
        assert_eq!(a, b);

        let single = ForestConfig {
            n_trees: 1,
            bootstrap: false,
            ..cfg
        };
        let f = fit_forest(&t, &single).unwrap();
        for x in &t.features {
            assert_eq!(f.predict(x), f.trees[0].predict(x));
        }
        let imp = a.feature_importances().unwrap();
        assert!((imp.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(imp.iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn config_validation() {
        assert!(ForestConfig {
            n_trees: 0,
            ..Default::default()
        }
        .validate()
        .is_err());
        assert!(ForestConfig {
            min_samples_split: 1,
            ..Default::default()
        }
        .validate()
        .is_err());
    }
}
