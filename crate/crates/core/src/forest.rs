//! Random-forest classifier with Gini splits.
//!
//! Training is a pure function of `(features, labels, config)`. Tree `t` draws
//! its bootstrap sample and feature subsets from its own ChaCha8 stream keyed
//! by `(config.seed, t)`, so trees may be grown in parallel without changing
//! the result.
//!
//! Split quality is compared in exact integer arithmetic. For a split into
//! children with `n_l`, `n_r` samples and squared class-count sums `s_l`, `s_r`
//! the weighted Gini impurity is `n - (s_l / n_l + s_r / n_r)`, so the best
//! split maximizes `(s_l * n_r + s_r * n_l) / (n_l * n_r)`. Ties go to the
//! lowest feature index, then to the lowest threshold.
//!
//! Serialized models are canonical JSON:
//!
//! ```text
//! {"format":"cropheight-forest","version":1,"config":{..},"classes":[..],
//!  "n_features":11,"trees":[{"nodes":[{"split":{..}},{"leaf":{"counts":[..]}}]}]}
//! ```
//!
//! Node 0 of each tree is the root; a split sends `x[feature] <= threshold`
//! to `left`.

use std::cmp::Ordering;

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

pub const MODEL_FORMAT: &str = "cropheight-forest";
pub const MODEL_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RfConfig {
    pub n_trees: usize,
    /// Candidate features per split; `None` means `ceil(sqrt(d))`.
    pub max_features: Option<usize>,
    pub min_leaf: usize,
    pub max_depth: Option<usize>,
    pub bootstrap: bool,
    pub seed: u64,
}

impl Default for RfConfig {
    fn default() -> Self {
        RfConfig {
            n_trees: 100,
            max_features: None,
            min_leaf: 1,
            max_depth: None,
            bootstrap: true,
            seed: 0,
        }
    }
}

impl RfConfig {
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn features_per_split(&self, n_features: usize) -> usize {
        self.max_features
            .unwrap_or_else(|| (n_features as f64).sqrt().ceil() as usize)
            .clamp(1, n_features)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Node {
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
    Leaf {
        counts: Vec<u32>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionTree {
    pub nodes: Vec<Node>,
}

impl DecisionTree {
    /// Class-count vector of the leaf reached by `x`.
    pub fn leaf_counts(&self, x: &[f64]) -> &[u32] {
        let mut i = 0;
        loop {
            match &self.nodes[i] {
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => i = if x[*feature] <= *threshold { *left } else { *right },
                Node::Leaf { counts } => return counts,
            }
        }
    }

    /// Index (into the model's class list) this tree votes for.
    pub fn vote(&self, x: &[f64]) -> usize {
        argmax_first(self.leaf_counts(x))
    }

    pub fn depth(&self) -> usize {
        fn go(nodes: &[Node], i: usize) -> usize {
            match &nodes[i] {
                Node::Split { left, right, .. } => 1 + go(nodes, *left).max(go(nodes, *right)),
                Node::Leaf { .. } => 0,
            }
        }
        go(&self.nodes, 0)
    }
}

fn argmax_first(counts: &[u32]) -> usize {
    let mut best = 0;
    for (i, &c) in counts.iter().enumerate() {
        if c > counts[best] {
            best = i;
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestModel {
    pub config: RfConfig,
    /// Class labels in vote order.
    pub classes: Vec<usize>,
    pub n_features: usize,
    pub trees: Vec<DecisionTree>,
}

pub fn fit(features: &[Vec<f64>], labels: &[usize], config: &RfConfig) -> Result<ForestModel> {
    let n = features.len();
    if n != labels.len() {
        return Err(Error::Dimension {
            expected: n,
            got: labels.len(),
        });
    }
    if n < 2 {
        return Err(Error::Training(format!("need at least 2 samples, got {n}")));
    }
    let d = features[0].len();
    if d == 0 {
        return Err(Error::Training("samples have no features".into()));
    }
    for row in features {
        if row.len() != d {
            return Err(Error::Dimension {
                expected: d,
                got: row.len(),
            });
        }
        if row.iter().any(|v| !v.is_finite()) {
            return Err(Error::Training("non-finite feature value".into()));
        }
    }
    if config.n_trees == 0 || config.min_leaf == 0 {
        return Err(Error::Training("n_trees and min_leaf must be at least 1".into()));
    }
    if let Some(m) = config.max_features {
        if m == 0 || m > d {
            return Err(Error::Training(format!("max_features {m} outside 1..={d}")));
        }
    }
    let mut classes: Vec<usize> = labels.to_vec();
    classes.sort_unstable();
    classes.dedup();
    if classes.len() < 2 {
        return Err(Error::Training("need at least two distinct classes".into()));
    }
    let y: Vec<usize> = labels
        .iter()
        .map(|l| classes.binary_search(l).expect("label present"))
        .collect();

    let grower = Grower {
        x: features,
        y: &y,
        n_classes: classes.len(),
        mtry: config.features_per_split(d),
        config,
    };
    let trees = (0..config.n_trees)
        .into_par_iter()
        .map(|t| grower.grow(t as u64))
        .collect();
    Ok(ForestModel {
        config: config.clone(),
        classes,
        n_features: d,
        trees,
    })
}

struct Grower<'a> {
    x: &'a [Vec<f64>],
    y: &'a [usize],
    n_classes: usize,
    mtry: usize,
    config: &'a RfConfig,
}

#[derive(Clone, Copy)]
struct Candidate {
    num: u128,
    den: u128,
    feature: usize,
    threshold: f64,
}

impl Candidate {
    fn better_than(&self, other: &Candidate) -> bool {
        match (self.num * other.den).cmp(&(other.num * self.den)) {
            Ordering::Greater => true,
            Ordering::Less => false,
            Ordering::Equal => (self.feature, self.threshold) < (other.feature, other.threshold),
        }
    }
}

fn midpoint(a: f64, b: f64) -> f64 {
    let m = a + (b - a) / 2.0;
    if m >= b {
        a
    } else {
        m
    }
}

impl Grower<'_> {
    fn grow(&self, tree_index: u64) -> DecisionTree {
        let n = self.x.len();
        let d = self.x[0].len();
        let mut rng = rng::stream(self.config.seed, &[tree_index]);
        let sample: Vec<usize> = if self.config.bootstrap {
            (0..n).map(|_| rng.gen_range(0..n)).collect()
        } else {
            (0..n).collect()
        };

        let mut nodes = vec![Node::Leaf { counts: Vec::new() }];
        let mut stack = vec![(0usize, sample, 0usize)];
        let mut order: Vec<usize> = (0..d).collect();
        while let Some((id, idx, depth)) = stack.pop() {
            let mut counts = vec![0u32; self.n_classes];
            for &i in &idx {
                counts[self.y[i]] += 1;
            }
            let pure = counts.iter().filter(|&&c| c > 0).count() <= 1;
            let capped = self.config.max_depth.is_some_and(|m| depth >= m);
            let best = if pure || capped || idx.len() < 2 * self.config.min_leaf {
                None
            } else {
                order.shuffle(&mut rng);
                self.best_split(&idx, &order)
            };
            match best {
                None => nodes[id] = Node::Leaf { counts },
                Some(c) => {
                    let (l, r): (Vec<usize>, Vec<usize>) =
                        idx.iter().partition(|&&i| self.x[i][c.feature] <= c.threshold);
                    let left = nodes.len();
                    let right = left + 1;
                    nodes.push(Node::Leaf { counts: Vec::new() });
                    nodes.push(Node::Leaf { counts: Vec::new() });
                    nodes[id] = Node::Split {
                        feature: c.feature,
                        threshold: c.threshold,
                        left,
                        right,
                    };
                    stack.push((right, r, depth + 1));
                    stack.push((left, l, depth + 1));
                }
            }
        }
        DecisionTree { nodes }
    }

    fn best_split(&self, idx: &[usize], order: &[usize]) -> Option<Candidate> {
        let min_leaf = self.config.min_leaf;
        let n = idx.len();
        let mut best: Option<Candidate> = None;
        let mut visited = 0;
        let mut pairs: Vec<(f64, usize)> = Vec::with_capacity(n);
        let mut total = vec![0u64; self.n_classes];
        for &i in idx {
            total[self.y[i]] += 1;
        }
        let total_sq: u64 = total.iter().map(|c| c * c).sum();

        for &f in order {
            if visited == self.mtry {
                break;
            }
            pairs.clear();
            pairs.extend(idx.iter().map(|&i| (self.x[i][f], self.y[i])));
            pairs.sort_unstable_by(|a, b| a.0.total_cmp(&b.0));
            if pairs[0].0 == pairs[n - 1].0 {
                continue;
            }
            visited += 1;

            let mut left = vec![0u64; self.n_classes];
            let (mut s_l, mut s_r) = (0u64, total_sq);
            for k in 0..n - 1 {
                let c = pairs[k].1;
                // move one sample of class c from right to left
                s_l += 2 * left[c] + 1;
                s_r -= 2 * (total[c] - left[c]) - 1;
                left[c] += 1;
                if pairs[k].0 == pairs[k + 1].0 {
                    continue;
                }
                let (n_l, n_r) = ((k + 1) as u64, (n - k - 1) as u64);
                if n_l < min_leaf as u64 || n_r < min_leaf as u64 {
                    continue;
                }
                let cand = Candidate {
                    num: u128::from(s_l) * u128::from(n_r) + u128::from(s_r) * u128::from(n_l),
                    den: u128::from(n_l) * u128::from(n_r),
                    feature: f,
                    threshold: midpoint(pairs[k].0, pairs[k + 1].0),
                };
                if best.as_ref().is_none_or(|b| cand.better_than(b)) {
                    best = Some(cand);
                }
            }
        }
        best
    }
}

impl ForestModel {
    fn check_len(&self, x: &[f64]) -> Result<()> {
        if x.len() == self.n_features {
            Ok(())
        } else {
            Err(Error::Dimension {
                expected: self.n_features,
                got: x.len(),
            })
        }
    }

    /// Number of trees voting for each class, in `classes` order.
    pub fn votes(&self, x: &[f64]) -> Result<Vec<u32>> {
        self.check_len(x)?;
        let mut votes = vec![0u32; self.classes.len()];
        for tree in &self.trees {
            votes[tree.vote(x)] += 1;
        }
        Ok(votes)
    }

    /// Fraction of trees voting for each class.
    pub fn predict_proba(&self, x: &[f64]) -> Result<Vec<f64>> {
        let n = self.trees.len() as f64;
        Ok(self.votes(x)?.into_iter().map(|v| f64::from(v) / n).collect())
    }

    /// Majority class (first in class order on ties) and its vote fraction.
    pub fn predict_class(&self, x: &[f64]) -> Result<(usize, f64)> {
        let votes = self.votes(x)?;
        let best = argmax_first(&votes);
        Ok((self.classes[best], f64::from(votes[best]) / self.trees.len() as f64))
    }

    pub fn serialize(&self) -> Vec<u8> {
        #[derive(Serialize)]
        struct Out<'a> {
            format: &'a str,
            version: u32,
            #[serde(flatten)]
            model: &'a ForestModel,
        }
        serde_json::to_vec(&Out {
            format: MODEL_FORMAT,
            version: MODEL_VERSION,
            model: self,
        })
        .expect("model serializes")
    }

    pub fn deserialize(bytes: &[u8]) -> Result<ForestModel> {
        #[derive(Deserialize)]
        struct Header {
            format: String,
            version: u32,
        }
        #[derive(Deserialize)]
        struct In {
            #[allow(dead_code)]
            format: String,
            #[allow(dead_code)]
            version: u32,
            #[serde(flatten)]
            model: ForestModel,
        }
        let header: Header =
            serde_json::from_slice(bytes).map_err(|e| Error::ModelFormat(e.to_string()))?;
        if header.format != MODEL_FORMAT {
            return Err(Error::ModelFormat(format!("unexpected format `{}`", header.format)));
        }
        if header.version != MODEL_VERSION {
            return Err(Error::ModelFormat(format!(
                "version {} not supported (expected {MODEL_VERSION})",
                header.version
            )));
        }
        let parsed: In = serde_json::from_slice(bytes).map_err(|e| Error::ModelFormat(e.to_string()))?;
        let model = parsed.model;
        model.validate()?;
        Ok(model)
    }

    fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::ModelFormat(m));
        if self.trees.len() != self.config.n_trees || self.trees.is_empty() {
            return bad(format!("expected {} trees, found {}", self.config.n_trees, self.trees.len()));
        }
        if self.classes.len() < 2 || self.n_features == 0 {
            return bad("model needs two classes and at least one feature".into());
        }
        for (t, tree) in self.trees.iter().enumerate() {
            let n = tree.nodes.len();
            if n == 0 {
                return bad(format!("tree {t} is empty"));
            }
            for (i, node) in tree.nodes.iter().enumerate() {
                match node {
                    Node::Split {
                        feature,
                        threshold,
                        left,
                        right,
                    } => {
                        if *feature >= self.n_features
                            || !threshold.is_finite()
                            || *left <= i
                            || *right <= i
                            || *left >= n
                            || *right >= n
                        {
                            return bad(format!("tree {t} node {i} is malformed"));
                        }
                    }
                    Node::Leaf { counts } => {
                        if counts.len() != self.classes.len() {
                            return bad(format!("tree {t} leaf {i} has wrong class count"));
                        }
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
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn blobs(seed: u64, n: usize) -> (Vec<Vec<f64>>, Vec<usize>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut x = Vec::new();
        let mut y = Vec::new();
        for i in 0..n {
            let c = i % 3;
            x.push(vec![
                c as f64 * 2.0 + rng.gen_range(-1.2..1.2),
                rng.gen_range(-1.0..1.0),
                -(c as f64) + rng.gen_range(-0.8..0.8),
            ]);
            y.push(c * 10);
        }
        (x, y)
    }

    #[test]
    fn separable_copies_fit_perfectly() {
        let mut x = vec![vec![0.0, 1.0]; 10];
        x.extend(vec![vec![1.0, 0.0]; 10]);
        let y: Vec<usize> = (0..20).map(|i| usize::from(i >= 10)).collect();
        let m = fit(&x, &y, &RfConfig::default()).unwrap();
        for (xi, yi) in x.iter().zip(&y) {
            assert_eq!(m.predict_class(xi).unwrap().0, *yi);
        }
    }

    #[test]
    fn xor_fits_with_unbounded_depth() {
        let x = vec![vec![0.0, 0.0], vec![0.0, 1.0], vec![1.0, 0.0], vec![1.0, 1.0]];
        let y = vec![0, 1, 1, 0];
        let m = fit(&x, &y, &RfConfig::default()).unwrap();
        let acc = x
            .iter()
            .zip(&y)
            .filter(|(xi, yi)| m.predict_class(xi).unwrap().0 == **yi)
            .count();
        assert_eq!(acc, 4);
        // Every tree that saw all four points needs two levels on XOR.
        let no_boot = RfConfig {
            n_trees: 1,
            bootstrap: false,
            max_features: Some(2),
            ..RfConfig::default()
        };
        let t = &fit(&x, &y, &no_boot).unwrap().trees[0];
        assert_eq!(t.depth(), 2);
        for (xi, yi) in x.iter().zip(&y) {
            assert_eq!(t.vote(xi), *yi);
        }
    }

    #[test]
    fn same_seed_same_bytes() {
        let (x, y) = blobs(1, 90);
        let cfg = RfConfig::default().with_seed(42);
        let a = fit(&x, &y, &cfg).unwrap().serialize();
        let b = fit(&x, &y, &cfg).unwrap().serialize();
        assert_eq!(a, b);
        let c = fit(&x, &y, &cfg.clone().with_seed(43)).unwrap().serialize();
        assert_ne!(a, c);
    }

    #[test]
    fn thread_count_does_not_matter() {
        let (x, y) = blobs(2, 120);
        let cfg = RfConfig::default().with_seed(5);
        let one = rayon::ThreadPoolBuilder::new()
            .num_threads(1)
            .build()
            .unwrap()
            .install(|| fit(&x, &y, &cfg).unwrap());
        let four = rayon::ThreadPoolBuilder::new()
            .num_threads(4)
            .build()
            .unwrap()
            .install(|| fit(&x, &y, &cfg).unwrap());
        assert_eq!(one, four);
    }

    #[test]
    fn proba_is_vote_fraction() {
        let (x, y) = blobs(3, 60);
        let m = fit(&x, &y, &RfConfig::default()).unwrap();
        for xi in &x {
            let votes = m.votes(xi).unwrap();
            assert_eq!(votes.iter().sum::<u32>() as usize, m.trees.len());
            let p = m.predict_proba(xi).unwrap();
            assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            for (pi, vi) in p.iter().zip(&votes) {
                assert_eq!(*pi, f64::from(*vi) / 100.0);
            }
        }
    }

    #[test]
    fn class_ties_go_to_first_class() {
        let leaf0 = DecisionTree {
            nodes: vec![Node::Leaf { counts: vec![3, 0] }],
        };
        let leaf1 = DecisionTree {
            nodes: vec![Node::Leaf { counts: vec![0, 3] }],
        };
        let m = ForestModel {
            config: RfConfig {
                n_trees: 2,
                ..RfConfig::default()
            },
            classes: vec![4, 9],
            n_features: 1,
            trees: vec![leaf1, leaf0],
        };
        assert_eq!(m.predict_class(&[0.0]).unwrap(), (4, 0.5));
        assert_eq!(m.predict_proba(&[0.0]).unwrap(), vec![0.5, 0.5]);
    }

    #[test]
    fn rejects_bad_input() {
        let x = vec![vec![0.0], vec![1.0]];
        assert!(matches!(fit(&x, &[1, 1], &RfConfig::default()), Err(Error::Training(_))));
        let x = vec![vec![0.0], vec![f64::NAN]];
        assert!(fit(&x, &[0, 1], &RfConfig::default()).is_err());
        let x = vec![vec![0.0], vec![1.0, 2.0]];
        assert!(matches!(fit(&x, &[0, 1], &RfConfig::default()), Err(Error::Dimension { .. })));
        let m = fit(&[vec![0.0], vec![1.0]], &[0, 1], &RfConfig::default()).unwrap();
        assert!(m.predict_proba(&[0.0, 1.0]).is_err());
    }

    #[test]
    fn corrupted_model_bytes_fail() {
        let (x, y) = blobs(4, 30);
        let bytes = fit(&x, &y, &RfConfig { n_trees: 3, ..RfConfig::default() })
            .unwrap()
            .serialize();
        assert!(ForestModel::deserialize(&bytes[..bytes.len() / 2]).is_err());
        let text = String::from_utf8(bytes.clone()).unwrap();
        let bumped = text.replace("\"version\":1", "\"version\":2");
        assert!(matches!(ForestModel::deserialize(bumped.as_bytes()), Err(Error::ModelFormat(m)) if m.contains("version")));
        let broken = text.replacen("\"left\":1", "\"left\":0", 1);
        assert!(ForestModel::deserialize(broken.as_bytes()).is_err());
        assert!(ForestModel::deserialize(&bytes).is_ok());
    }
}
