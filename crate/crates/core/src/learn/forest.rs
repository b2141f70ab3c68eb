//! Bagged Gini decision trees emitting class-probability vectors.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{FeatureVector, FEATURE_SCHEMA_VERSION};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ForestParams {
    pub n_trees: usize,
    pub max_depth: usize,
    pub min_leaf: usize,
    pub feature_subsample: usize,
    /// Draw the same number of bootstrap samples from every class.
    pub balanced: bool,
}

impl Default for ForestParams {
    fn default() -> Self {
        Self {
            n_trees: 100,
            max_depth: 12,
            min_leaf: 2,
            feature_subsample: 12,
            balanced: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Node {
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
    /// Non-zero class probabilities as `(class index, probability)`.
    Leaf { probs: Vec<(usize, f64)> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionTree {
    pub nodes: Vec<Node>,
}

impl DecisionTree {
    pub fn leaf_probs(&self, x: &[f64]) -> &[(usize, f64)] {
        let mut idx = 0;
        loop {
            match &self.nodes[idx] {
                Node::Leaf { probs } => return probs,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => idx = if x[*feature] <= *threshold { *left } else { *right },
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeEnsembleModel {
    pub schema_version: u32,
    pub classes: Vec<String>,
    pub n_features: usize,
    pub params: ForestParams,
    pub seed: u64,
    pub trees: Vec<DecisionTree>,
}

/// Model plus out-of-bag class probabilities for each training row (`None`
/// when the row landed in every bootstrap sample).
pub struct TrainedEnsemble {
    pub model: TreeEnsembleModel,
    pub oob_proba: Vec<Option<Vec<f64>>>,
}

impl TreeEnsembleModel {
    pub fn class_index(&self, class: &str) -> Option<usize> {
        self.classes.iter().position(|c| c == class)
    }

    pub fn predict_proba(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.n_features {
            return Err(Error::DimensionMismatch {
                expected: self.n_features,
                got: x.len(),
            });
        }
        let mut acc = vec![0.0; self.classes.len()];
        for tree in &self.trees {
            for &(c, p) in tree.leaf_probs(x) {
                acc[c] += p;
            }
        }
        let n = self.trees.len() as f64;
        acc.iter_mut().for_each(|a| *a /= n);
        Ok(acc)
    }

    pub fn predict_features(&self, fv: &FeatureVector) -> Result<Vec<f64>> {
        if fv.schema_version != self.schema_version {
            return Err(Error::SchemaMismatch {
                model: self.schema_version,
                extractor: fv.schema_version,
            });
        }
        self.predict_proba(&fv.values)
    }

    /// Probability of `class`, or 0 when the model never saw it.
    pub fn proba_of(&self, fv: &FeatureVector, class: &str) -> Result<f64> {
        let probs = self.predict_features(fv)?;
        Ok(self.class_index(class).map_or(0.0, |i| probs[i]))
    }

    /// Most probable class and its probability; ties go to the earlier class.
    pub fn predict(&self, fv: &FeatureVector) -> Result<(String, f64)> {
        let probs = self.predict_features(fv)?;
        let (best, p) = probs.iter().enumerate().fold(
            (0, f64::NEG_INFINITY),
            |acc, (i, &p)| if p > acc.1 { (i, p) } else { acc },
        );
        Ok((self.classes[best].clone(), p))
    }
}

struct Builder<'a> {
    x: &'a [Vec<f64>],
    y: &'a [usize],
    n_classes: usize,
    params: &'a ForestParams,
    nodes: Vec<Node>,
}

fn gini(counts: &[f64], total: f64) -> f64 {
    if total <= 0.0 {
        return 0.0;
    }
    1.0 - counts.iter().map(|c| (c / total) * (c / total)).sum::<f64>()
}

struct SplitChoice {
    feature: usize,
    threshold: f64,
    impurity: f64,
}

impl Builder<'_> {
    fn leaf(&mut self, counts: &[f64], total: f64) -> usize {
        let probs = counts
            .iter()
            .enumerate()
            .filter(|(_, &c)| c > 0.0)
            .map(|(i, c)| (i, c / total))
            .collect();
        self.nodes.push(Node::Leaf { probs });
        self.nodes.len() - 1
    }

    fn best_split_on(&self, rows: &[usize], feature: usize, parent: &[f64]) -> Option<SplitChoice> {
        let mut pairs: Vec<(f64, usize)> = rows.iter().map(|&r| (self.x[r][feature], self.y[r])).collect();
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
        let n = pairs.len();
        let total = n as f64;
        let mut left = vec![0.0; self.n_classes];
        let mut best: Option<SplitChoice> = None;
        for i in 0..n - 1 {
            left[pairs[i].1] += 1.0;
            let n_left = i + 1;
            if pairs[i].0 == pairs[i + 1].0 || n_left < self.params.min_leaf || n - n_left < self.params.min_leaf {
                continue;
            }
            let right: Vec<f64> = parent.iter().zip(&left).map(|(p, l)| p - l).collect();
            let nl = n_left as f64;
            let nr = total - nl;
            let impurity = (nl * gini(&left, nl) + nr * gini(&right, nr)) / total;
            if best.as_ref().is_none_or(|b| impurity < b.impurity) {
                let (a, b) = (pairs[i].0, pairs[i + 1].0);
                let mut threshold = a + (b - a) / 2.0;
                if threshold >= b {
                    threshold = a;
                }
                best = Some(SplitChoice {
                    feature,
                    threshold,
                    impurity,
                });
            }
        }
        best
    }

    fn grow(&mut self, rows: Vec<usize>, depth: usize, rng: &mut ChaCha8Rng) -> usize {
        let mut counts = vec![0.0; self.n_classes];
        for &r in &rows {
            counts[self.y[r]] += 1.0;
        }
        let total = rows.len() as f64;
        let parent_impurity = gini(&counts, total);
        if depth >= self.params.max_depth || rows.len() < 2 * self.params.min_leaf || parent_impurity <= 0.0 {
            return self.leaf(&counts, total);
        }

        let n_features = self.x[0].len();
        let mut order: Vec<usize> = (0..n_features).collect();
        order.shuffle(rng);
        let mtry = self.params.feature_subsample.clamp(1, n_features);
        let mut best: Option<SplitChoice> = None;
        for (k, &f) in order.iter().enumerate() {
            // Keep drawing past `mtry` only while no valid split has been found.
            if k >= mtry && best.is_some() {
                break;
            }
            if let Some(c) = self.best_split_on(&rows, f, &counts) {
                if best.as_ref().is_none_or(|b| c.impurity < b.impurity) {
                    best = Some(c);
                }
            }
        }
        let Some(choice) = best.filter(|c| c.impurity < parent_impurity - 1e-12) else {
            return self.leaf(&counts, total);
        };

        let (left_rows, right_rows): (Vec<usize>, Vec<usize>) = rows
            .iter()
            .partition(|&&r| self.x[r][choice.feature] <= choice.threshold);
        let idx = self.nodes.len();
        self.nodes.push(Node::Leaf { probs: Vec::new() });
        let left = self.grow(left_rows, depth + 1, rng);
        let right = self.grow(right_rows, depth + 1, rng);
        self.nodes[idx] = Node::Split {
            feature: choice.feature,
            threshold: choice.threshold,
            left,
            right,
        };
        idx
    }
}

fn tree_rng(seed: u64, tree: usize) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed ^ (tree as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

fn bootstrap(y: &[usize], n_classes: usize, balanced: bool, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let n = y.len();
    if !balanced {
        return (0..n).map(|_| rng.random_range(0..n)).collect();
    }
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); n_classes];
    for (i, &c) in y.iter().enumerate() {
        by_class[c].push(i);
    }
    let present: Vec<&Vec<usize>> = by_class.iter().filter(|v| !v.is_empty()).collect();
    let per_class = n.div_ceil(present.len());
    let mut rows = Vec::with_capacity(per_class * present.len());
    for members in present {
        rows.extend((0..per_class).map(|_| members[rng.random_range(0..members.len())]));
    }
    rows
}

/// Trains an ensemble. Class order is the sorted set of labels in `y`.
pub fn train_ensemble(x: &[Vec<f64>], y: &[String], params: &ForestParams, seed: u64) -> Result<TrainedEnsemble> {
    if x.is_empty() {
        return Err(Error::EmptyInput);
    }
    if x.len() != y.len() {
        return Err(Error::DimensionMismatch {
            expected: x.len(),
            got: y.len(),
        });
    }
    let n_features = x[0].len();
    if let Some(row) = x.iter().find(|r| r.len() != n_features) {
        return Err(Error::DimensionMismatch {
            expected: n_features,
            got: row.len(),
        });
    }
    if params.n_trees == 0 {
        return Err(Error::Config("n_trees must be positive".into()));
    }
    let mut classes: Vec<String> = y.to_vec();
    classes.sort();
    classes.dedup();
    let labels: Vec<usize> = y
        .iter()
        .map(|l| classes.binary_search(l).expect("label drawn from classes"))
        .collect();
    let n_classes = classes.len();

    let grown: Vec<(DecisionTree, Vec<bool>)> = (0..params.n_trees)
        .into_par_iter()
        .map(|t| {
            let mut rng = tree_rng(seed, t);
            let rows = bootstrap(&labels, n_classes, params.balanced, &mut rng);
            let mut in_bag = vec![false; x.len()];
            for &r in &rows {
                in_bag[r] = true;
            }
            let mut builder = Builder {
                x,
                y: &labels,
                n_classes,
                params,
                nodes: Vec::new(),
            };
            builder.grow(rows, 0, &mut rng);
            (DecisionTree { nodes: builder.nodes }, in_bag)
        })
        .collect();

    let oob_proba = (0..x.len())
        .into_par_iter()
        .map(|i| {
            let mut acc = vec![0.0; n_classes];
            let mut n = 0usize;
            for (tree, in_bag) in &grown {
                if !in_bag[i] {
                    for &(c, p) in tree.leaf_probs(&x[i]) {
                        acc[c] += p;
                    }
                    n += 1;
                }
            }
            (n > 0).then(|| acc.into_iter().map(|a| a / n as f64).collect())
        })
        .collect();

    Ok(TrainedEnsemble {
        model: TreeEnsembleModel {
            schema_version: FEATURE_SCHEMA_VERSION,
            classes,
            n_features,
            params: params.clone(),
            seed,
            trees: grown.into_iter().map(|(t, _)| t).collect(),
        },
        oob_proba,
    })
}
