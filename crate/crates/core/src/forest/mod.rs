//! Random Forest of bootstrap-aggregated CART trees split on Gini impurity.

use std::cmp::Ordering;

use log::warn;

use crate::numcore::{mix_seed, Prng, Tensor};
use crate::{Error, Result, Scalar};

/// A node of a fitted tree. Rows with `x[feature] <= threshold` go left.
#[derive(Clone, Debug, PartialEq)]
pub enum TreeNode<S> {
    Leaf {
        /// Training rows of class 0 and class 1 that reached this leaf.
        class_counts: [u64; 2],
    },
    Split {
        feature: usize,
        threshold: S,
        left: Box<TreeNode<S>>,
        right: Box<TreeNode<S>>,
    },
}

impl<S: Scalar> TreeNode<S> {
    pub fn leaf_for(&self, row: &[S]) -> [u64; 2] {
        let mut node = self;
        loop {
            match node {
                TreeNode::Leaf { class_counts } => return *class_counts,
                TreeNode::Split { feature, threshold, left, right } => {
                    node = if row[*feature] <= *threshold { left } else { right };
                }
            }
        }
    }

    /// Majority class of the reached leaf, as twice the vote for class 1:
    /// 2 for class 1, 0 for class 0, 1 on a tie.
    pub fn twice_vote(&self, row: &[S]) -> u64 {
        let [c0, c1] = self.leaf_for(row);
        match c1.cmp(&c0) {
            Ordering::Greater => 2,
            Ordering::Equal => 1,
            Ordering::Less => 0,
        }
    }

    pub fn depth(&self) -> usize {
        match self {
            TreeNode::Leaf { .. } => 0,
            TreeNode::Split { left, right, .. } => 1 + left.depth().max(right.depth()),
        }
    }

    pub fn n_leaves(&self) -> usize {
        match self {
            TreeNode::Leaf { .. } => 1,
            TreeNode::Split { left, right, .. } => left.n_leaves() + right.n_leaves(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Forest<S> {
    pub trees: Vec<TreeNode<S>>,
    pub n_estimators: usize,
    /// Candidate features drawn per split.
    pub feature_subsample: usize,
    pub seed: u64,
    pub n_features: usize,
}

/// `1 - Σ p_c²`.
pub fn gini(class_counts: &[u64]) -> Result<f64> {
    let n: u64 = class_counts.iter().sum();
    if n == 0 {
        return Err(Error::param("gini: all class counts are zero"));
    }
    let n = n as f64;
    Ok(1.0 - class_counts.iter().map(|&c| (c as f64 / n).powi(2)).sum::<f64>())
}

/// A chosen split and its weighted Gini decrease.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Split<S> {
    pub feature: usize,
    pub threshold: S,
    pub decrease: f64,
}

/// Exact purity score `Σ_child Σ_c n_{child,c}² / n_child` as a fraction.
/// Maximising it maximises the weighted Gini decrease.
#[derive(Clone, Copy, Debug)]
struct Purity {
    num: u128,
    den: u128,
}

impl Purity {
    fn of_children(l: [u64; 2], r: [u64; 2]) -> Self {
        let sq = |c: [u64; 2]| (c[0] as u128).pow(2) + (c[1] as u128).pow(2);
        let (nl, nr) = ((l[0] + l[1]) as u128, (r[0] + r[1]) as u128);
        Self {
            num: sq(l) * nr + sq(r) * nl,
            den: nl * nr,
        }
    }

    fn of_node(c: [u64; 2]) -> Self {
        Self {
            num: (c[0] as u128).pow(2) + (c[1] as u128).pow(2),
            den: (c[0] + c[1]) as u128,
        }
    }

    fn cmp(&self, other: &Self) -> Ordering {
        (self.num * other.den).cmp(&(other.num * self.den))
    }

    fn value(&self) -> f64 {
        self.num as f64 / self.den as f64
    }
}

fn counts_of(y: &[u8], rows: &[usize]) -> [u64; 2] {
    let mut c = [0u64; 2];
    for &r in rows {
        c[y[r] as usize] += 1;
    }
    c
}

/// Midpoint between consecutive sorted values `a < b`, kept strictly below
/// `b` so that `a` routes left and `b` routes right.
fn midpoint<S: Scalar>(a: S, b: S) -> S {
    let m = a + (b - a) / S::of(2.0);
    if m >= b {
        a
    } else {
        m
    }
}

/// Best Gini split of `rows` over the candidate `features`.
///
/// Thresholds are midpoints of consecutive distinct values. Ties go to the
/// lower feature index, then the lower threshold. `None` when no split
/// strictly lowers the impurity.
pub fn best_split<S: Scalar>(x: &Tensor<S>, y: &[u8], rows: &[usize], features: &[usize]) -> Option<Split<S>> {
    if rows.len() < 2 {
        return None;
    }
    let total = counts_of(y, rows);
    let parent = Purity::of_node(total);
    let mut features = features.to_vec();
    features.sort_unstable();
    features.dedup();
    let cols = x.cols();
    let data = x.data();
    let mut best: Option<(Purity, usize, S)> = None;
    let mut pairs: Vec<(S, u8)> = Vec::with_capacity(rows.len());
    for &f in &features {
        pairs.clear();
        pairs.extend(rows.iter().map(|&r| (data[r * cols + f], y[r])));
        pairs.sort_unstable_by(|a, b| a.0.partial_cmp(&b.0).unwrap_or(Ordering::Equal));
        let mut left = [0u64; 2];
        for i in 0..pairs.len() - 1 {
            left[pairs[i].1 as usize] += 1;
            let (a, b) = (pairs[i].0, pairs[i + 1].0);
            if !(a < b) {
                continue;
            }
            let right = [total[0] - left[0], total[1] - left[1]];
            let score = Purity::of_children(left, right);
            if score.cmp(&parent) != Ordering::Greater {
                continue;
            }
            let better = match &best {
                None => true,
                Some((s, _, _)) => score.cmp(s) == Ordering::Greater,
            };
            if better {
                best = Some((score, f, midpoint(a, b)));
            }
        }
    }
    best.map(|(score, feature, threshold)| {
        let n = rows.len() as f64;
        Split {
            feature,
            threshold,
            decrease: (score.value() - parent.value()) / n,
        }
    })
}

/// `k` distinct features out of `n_features`, ascending.
fn sample_features(n_features: usize, k: usize, rng: &mut Prng) -> Vec<usize> {
    let mut pool: Vec<usize> = (0..n_features).collect();
    let k = k.min(n_features);
    for i in 0..k {
        let j = i + rng.below(n_features - i);
        pool.swap(i, j);
    }
    pool.truncate(k);
    pool.sort_unstable();
    pool
}

/// Grows one unpruned tree on `rows` (repeats allowed), drawing
/// `max_features` candidate features per split. When none of the drawn
/// features can split a node, the remaining features are tried before the
/// node becomes a leaf.
pub fn fit_tree<S: Scalar>(
    x: &Tensor<S>,
    y: &[u8],
    rows: &[usize],
    max_features: usize,
    rng: &mut Prng,
) -> Result<TreeNode<S>> {
    if rows.is_empty() {
        return Err(Error::param("fit_tree: no rows"));
    }
    let f = x.cols();
    // Explicit stack so deep trees cannot overflow the call stack.
    enum Task {
        Grow(Vec<usize>),
        Join { feature: usize, threshold_slot: usize },
    }
    let mut thresholds: Vec<S> = Vec::new();
    let mut tasks = vec![Task::Grow(rows.to_vec())];
    let mut built: Vec<TreeNode<S>> = Vec::new();
    while let Some(task) = tasks.pop() {
        match task {
            Task::Grow(node_rows) => {
                let counts = counts_of(y, &node_rows);
                let pure = counts[0] == 0 || counts[1] == 0;
                let split = if pure || node_rows.len() < 2 {
                    None
                } else {
                    let drawn = sample_features(f, max_features, rng);
                    best_split(x, y, &node_rows, &drawn).or_else(|| {
                        let rest: Vec<usize> = (0..f).filter(|j| !drawn.contains(j)).collect();
                        best_split(x, y, &node_rows, &rest)
                    })
                };
                match split {
                    None => built.push(TreeNode::Leaf { class_counts: counts }),
                    Some(s) => {
                        let (left, right): (Vec<usize>, Vec<usize>) =
                            node_rows.iter().partition(|&&r| x.at(r, s.feature) <= s.threshold);
                        thresholds.push(s.threshold);
                        tasks.push(Task::Join {
                            feature: s.feature,
                            threshold_slot: thresholds.len() - 1,
                        });
                        // Left is grown first, so it sits below right on `built`.
                        tasks.push(Task::Grow(right));
                        tasks.push(Task::Grow(left));
                    }
                }
            }
            Task::Join { feature, threshold_slot } => {
                let right = built.pop().expect("right subtree built");
                let left = built.pop().expect("left subtree built");
                built.push(TreeNode::Split {
                    feature,
                    threshold: thresholds[threshold_slot],
                    left: Box::new(left),
                    right: Box::new(right),
                });
            }
        }
    }
    Ok(built.pop().expect("root built"))
}

/// Fits `n_estimators` trees, tree `t` on a bootstrap sample drawn from a
/// generator seeded with `mix_seed(seed, t)`, using `⌈√F⌉` features per split.
pub fn fit_forest<S: Scalar>(x: &Tensor<S>, y: &[u8], n_estimators: usize, seed: u64) -> Result<Forest<S>> {
    let (n, f) = x.dims2("fit_forest")?;
    if y.len() != n {
        return Err(Error::shape("fit_forest labels", &[n], &[y.len()]));
    }
    if n < 2 {
        return Err(Error::param("fit_forest: need at least 2 rows"));
    }
    if n_estimators == 0 {
        return Err(Error::param("fit_forest: n_estimators must be positive"));
    }
    if let Some(&bad) = y.iter().find(|&&v| v > 1) {
        return Err(Error::param(format!("fit_forest: label {bad} is not 0/1")));
    }
    let counts = counts_of(y, &(0..n).collect::<Vec<_>>());
    if counts[0] == 0 || counts[1] == 0 {
        warn!("fit_forest: training labels contain a single class; every tree is one leaf");
    }
    let feature_subsample = ((f as f64).sqrt().ceil() as usize).clamp(1, f.max(1));
    let trees = (0..n_estimators)
        .map(|t| {
            let mut rng = Prng::new(mix_seed(seed, t as u64));
            let sample: Vec<usize> = (0..n).map(|_| rng.below(n)).collect();
            fit_tree(x, y, &sample, feature_subsample, &mut rng)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Forest {
        trees,
        n_estimators,
        feature_subsample,
        seed,
        n_features: f,
    })
}

/// Fraction of trees voting class 1 for each row, a tied leaf counting one
/// half. Scores lie on the grid `k / (2·n_trees)`.
pub fn forest_predict_proba<S: Scalar>(forest: &Forest<S>, x: &Tensor<S>) -> Result<Vec<S>> {
    let (n, f) = x.dims2("forest_predict_proba")?;
    if f != forest.n_features {
        return Err(Error::Schema(format!(
            "forest was fitted on {} features, got {f}",
            forest.n_features
        )));
    }
    let denom = (2 * forest.trees.len()) as f64;
    Ok((0..n)
        .map(|i| {
            let row = x.row(i);
            let twice: u64 = forest.trees.iter().map(|t| t.twice_vote(row)).sum();
            S::of(twice as f64 / denom)
        })
        .collect())
}
