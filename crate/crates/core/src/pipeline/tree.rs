//! CART trees stored as flat, index-linked node arrays.
//!
//! Classification trees split on Gini impurity and store class-1 frequencies
//! in their leaves; regression trees (used by boosting) split on squared
//! error of the gradients and store a Newton step `Σg / Σh`. Candidate
//! thresholds are midpoints between consecutive distinct sorted values.
//! Equal-impurity candidates resolve to the lowest feature index, then the
//! smallest threshold.

use rand::Rng;

use crate::dataset::Matrix;

/// `feature` value marking a leaf.
pub const LEAF: u32 = u32::MAX;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Node {
    pub feature: u32,
    pub threshold: f64,
    pub left: u32,
    pub right: u32,
    pub value: f64,
}

impl Node {
    fn leaf(value: f64) -> Self {
        Node {
            feature: LEAF,
            threshold: 0.0,
            left: 0,
            right: 0,
            value,
        }
    }

    pub fn is_leaf(&self) -> bool {
        self.feature == LEAF
    }
}

/// Root is `nodes[0]`; rows with `x[feature] <= threshold` go left.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Tree {
    pub nodes: Vec<Node>,
}

impl Tree {
    pub fn predict(&self, row: &[f64]) -> f64 {
        let mut at = 0usize;
        loop {
            let node = &self.nodes[at];
            if node.is_leaf() {
                return node.value;
            }
            at = if row[node.feature as usize] <= node.threshold {
                node.left as usize
            } else {
                node.right as usize
            };
        }
    }

    pub fn scale_leaves(&mut self, factor: f64) {
        for node in self.nodes.iter_mut().filter(|n| n.is_leaf()) {
            node.value *= factor;
        }
    }

    /// Sorted, de-duplicated feature indices this tree splits on.
    pub fn features_used(&self) -> Vec<usize> {
        let mut f: Vec<usize> = self
            .nodes
            .iter()
            .filter(|n| !n.is_leaf())
            .map(|n| n.feature as usize)
            .collect();
        f.sort_unstable();
        f.dedup();
        f
    }

    /// Checks that every child link points forward inside the array, so
    /// traversal terminates.
    pub fn is_well_formed(&self, n_features: usize) -> bool {
        !self.nodes.is_empty()
            && self.nodes.iter().enumerate().all(|(i, n)| {
                n.is_leaf()
                    || ((n.feature as usize) < n_features
                        && (n.left as usize) > i
                        && (n.right as usize) > i
                        && (n.left as usize) < self.nodes.len()
                        && (n.right as usize) < self.nodes.len())
            })
    }
}

#[derive(Debug, Clone, Copy)]
pub struct TreeParams {
    pub max_depth: usize,
    pub min_samples_leaf: usize,
    /// Features drawn per split; `None` considers all.
    pub max_features: Option<usize>,
}

#[derive(Clone, Copy)]
enum Target<'a> {
    Class(&'a [u8]),
    Newton { grad: &'a [f64], hess: &'a [f64] },
}

#[derive(Clone, Copy, Default)]
struct Stats {
    n: usize,
    ones: usize,
    sum_g: f64,
    sum_h: f64,
}

impl Stats {
    fn add(&mut self, target: Target, i: usize) {
        self.n += 1;
        match target {
            Target::Class(y) => self.ones += y[i] as usize,
            Target::Newton { grad, hess } => {
                self.sum_g += grad[i];
                self.sum_h += hess[i];
            }
        }
    }

    fn minus(&self, other: &Stats) -> Stats {
        Stats {
            n: self.n - other.n,
            ones: self.ones - other.ones,
            sum_g: self.sum_g - other.sum_g,
            sum_h: self.sum_h - other.sum_h,
        }
    }

    /// Impurity scaled by node size; lower is better and children's scores
    /// add. Gini: `n · gini = n - (c0² + c1²)/n`. Squared error, up to a
    /// constant: `-(Σg)²/n`.
    fn score(&self, target: Target) -> f64 {
        let n = self.n as f64;
        match target {
            Target::Class(_) => {
                let c1 = self.ones as f64;
                let c0 = n - c1;
                n - (c0 * c0 + c1 * c1) / n
            }
            Target::Newton { .. } => -(self.sum_g * self.sum_g) / n,
        }
    }

    fn leaf_value(&self, target: Target) -> f64 {
        match target {
            Target::Class(_) => self.ones as f64 / self.n as f64,
            Target::Newton { .. } => {
                if self.sum_h > 0.0 {
                    self.sum_g / self.sum_h
                } else {
                    0.0
                }
            }
        }
    }

    fn is_pure(&self, target: Target) -> bool {
        matches!(target, Target::Class(_)) && (self.ones == 0 || self.ones == self.n)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Split {
    pub feature: usize,
    pub threshold: f64,
    /// Sum of the children's size-scaled impurities.
    pub score: f64,
}

fn midpoint(a: f64, b: f64) -> f64 {
    let m = a + (b - a) / 2.0;
    // Adjacent floats: keep `a` on the left.
    if m >= b {
        a
    } else {
        m
    }
}

fn best_split(
    x: &Matrix,
    samples: &[usize],
    features: &[usize],
    target: Target,
    min_leaf: usize,
) -> Option<Split> {
    let mut total = Stats::default();
    for &i in samples {
        total.add(target, i);
    }
    let mut best: Option<Split> = None;
    let mut sorted = samples.to_vec();
    for &f in features {
        sorted.sort_by(|&a, &b| x.get(a, f).total_cmp(&x.get(b, f)).then(a.cmp(&b)));
        let mut left = Stats::default();
        for pos in 1..sorted.len() {
            left.add(target, sorted[pos - 1]);
            if pos < min_leaf || sorted.len() - pos < min_leaf {
                continue;
            }
            let (a, b) = (x.get(sorted[pos - 1], f), x.get(sorted[pos], f));
            if a == b {
                continue;
            }
            let score = left.score(target) + total.minus(&left).score(target);
            if best.is_none_or(|s| score < s.score) {
                best = Some(Split {
                    feature: f,
                    threshold: midpoint(a, b),
                    score,
                });
            }
        }
    }
    best
}

/// Best depth-1 Gini split over all features, exposed for oracle tests.
pub fn best_gini_split(x: &Matrix, y: &[u8], samples: &[usize]) -> Option<Split> {
    let features: Vec<usize> = (0..x.ncols()).collect();
    best_split(x, samples, &features, Target::Class(y), 1)
}

fn grow<R: Rng>(
    x: &Matrix,
    target: Target,
    samples: Vec<usize>,
    params: &TreeParams,
    mut rng: Option<&mut R>,
) -> Tree {
    let d = x.ncols();
    let min_leaf = params.min_samples_leaf.max(1);
    let mut nodes = vec![Node::leaf(0.0)];
    let mut stack = vec![(0usize, samples, 0usize)];
    while let Some((slot, idx, depth)) = stack.pop() {
        let mut stats = Stats::default();
        for &i in &idx {
            stats.add(target, i);
        }
        nodes[slot] = Node::leaf(stats.leaf_value(target));
        if depth >= params.max_depth || idx.len() < 2 * min_leaf || stats.is_pure(target) {
            continue;
        }
        let features: Vec<usize> = match (params.max_features, rng.as_deref_mut()) {
            (Some(k), Some(rng)) if k < d => {
                let mut f = rand::seq::index::sample(rng, d, k).into_vec();
                f.sort_unstable();
                f
            }
            _ => (0..d).collect(),
        };
        let parent = stats.score(target);
        let Some(split) = best_split(x, &idx, &features, target, min_leaf) else {
            continue;
        };
        if split.score >= parent - 1e-12 * parent.abs() {
            continue;
        }
        let (left, right): (Vec<usize>, Vec<usize>) = idx
            .into_iter()
            .partition(|&i| x.get(i, split.feature) <= split.threshold);
        let l = nodes.len();
        nodes.push(Node::leaf(0.0));
        nodes.push(Node::leaf(0.0));
        nodes[slot] = Node {
            feature: split.feature as u32,
            threshold: split.threshold,
            left: l as u32,
            right: l as u32 + 1,
            value: stats.leaf_value(target),
        };
        stack.push((l + 1, right, depth + 1));
        stack.push((l, left, depth + 1));
    }
    Tree { nodes }
}

/// Gini classification tree over `samples` (repeats allowed, as produced by
/// bootstrapping). Feature subsets per split are drawn from `rng`.
pub fn fit_classification_tree<R: Rng>(
    x: &Matrix,
    y: &[u8],
    samples: Vec<usize>,
    params: &TreeParams,
    rng: &mut R,
) -> Tree {
    grow(x, Target::Class(y), samples, params, Some(rng))
}

/// Squared-error regression tree on `grad` with Newton leaf values.
pub fn fit_regression_tree(
    x: &Matrix,
    grad: &[f64],
    hess: &[f64],
    samples: Vec<usize>,
    params: &TreeParams,
) -> Tree {
    grow::<rand_chacha::ChaCha8Rng>(x, Target::Newton { grad, hess }, samples, params, None)
}
