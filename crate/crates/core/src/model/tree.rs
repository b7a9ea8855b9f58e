use std::cmp::Ordering;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{Task, N_CLASSES};
use crate::num::Real;

/// Flattened tree node. Internal nodes send `x[feature] <= threshold` to
/// `left`; leaves have `feature == None` and carry `value` (mean label or
/// voted class index) and, for classifiers, the class weights.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound(deserialize = "F: serde::de::DeserializeOwned"))]
pub struct Node<F> {
    pub feature: Option<u32>,
    pub threshold: F,
    pub left: u32,
    pub right: u32,
    pub value: F,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub counts: Vec<F>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound(deserialize = "F: serde::de::DeserializeOwned"))]
pub struct Tree<F> {
    pub nodes: Vec<Node<F>>,
}

impl<F: Real> Tree<F> {
    pub fn predict_row(&self, row: &[F]) -> F {
        let mut i = 0usize;
        loop {
            let n = &self.nodes[i];
            match n.feature {
                None => return n.value,
                Some(f) => {
                    let next = if row[f as usize] <= n.threshold { n.left } else { n.right };
                    i = next as usize;
                }
            }
        }
    }

    pub fn depth(&self) -> usize {
        fn go<F>(nodes: &[Node<F>], i: usize) -> usize {
            match nodes[i].feature {
                None => 0,
                Some(_) => 1 + go(nodes, nodes[i].left as usize).max(go(nodes, nodes[i].right as usize)),
            }
        }
        go(&self.nodes, 0)
    }

    pub(crate) fn max_feature(&self) -> Option<u32> {
        self.nodes.iter().filter_map(|n| n.feature).max()
    }
}

pub(crate) struct TreeParams {
    pub task: Task,
    pub max_depth: Option<usize>,
    pub min_samples_leaf: usize,
    pub features_per_split: usize,
}

/// Column-major training data with per-feature orderings computed once per
/// forest. `order[f]` lists every row sorted by `(cols[f][row], row)`.
pub(crate) struct Presorted<'a, F> {
    pub cols: &'a [Vec<F>],
    pub y: &'a [F],
    pub order: Vec<Vec<u32>>,
}

impl<'a, F: Real> Presorted<'a, F> {
    pub fn new(cols: &'a [Vec<F>], y: &'a [F]) -> Self {
        let order = cols
            .iter()
            .map(|c| {
                let mut idx: Vec<u32> = (0..c.len() as u32).collect();
                idx.sort_by(|&a, &b| crate::stats::total_cmp(&c[a as usize], &c[b as usize]).then(a.cmp(&b)));
                idx
            })
            .collect();
        Presorted { cols, y, order }
    }
}

/// Sufficient statistics of a weighted sample set.
#[derive(Clone, Copy)]
struct Acc<F> {
    w: F,
    /// Bootstrap-weighted row count.
    n: usize,
    sum: F,
    classes: [F; N_CLASSES],
}

impl<F: Real> Acc<F> {
    fn zero() -> Self {
        Acc {
            w: F::zero(),
            n: 0,
            sum: F::zero(),
            classes: [F::zero(); N_CLASSES],
        }
    }

    fn add(&mut self, task: Task, y: F, w: F, n: usize) {
        self.w = self.w + w;
        self.n += n;
        match task {
            Task::Regression => self.sum = self.sum + w * y,
            Task::Classification => {
                let c = y.to_usize().unwrap_or(0).min(N_CLASSES - 1);
                self.classes[c] = self.classes[c] + w;
            }
        }
    }

    fn sub(&self, other: &Self) -> Self {
        let mut classes = self.classes;
        for (c, o) in classes.iter_mut().zip(other.classes) {
            *c = *c - o;
        }
        Acc {
            w: self.w - other.w,
            n: self.n - other.n,
            sum: self.sum - other.sum,
            classes,
        }
    }

    /// Larger is purer: `sum^2 / w` (variance reduction) or `sum c^2 / w`
    /// (Gini decrease). Both differ from the impurity by terms constant
    /// within a node.
    fn proxy(&self, task: Task) -> F {
        if self.w <= F::zero() {
            return F::zero();
        }
        match task {
            Task::Regression => self.sum * self.sum / self.w,
            Task::Classification => self.classes.iter().fold(F::zero(), |a, &c| a + c * c) / self.w,
        }
    }
}

fn argmax_lowest<F: Real>(xs: &[F]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

/// Grows one CART tree on the rows with nonzero bootstrap weight.
pub(crate) fn grow_tree<F: Real, R: Rng>(data: &Presorted<'_, F>, weights: &[u32], params: &TreeParams, rng: &mut R) -> Tree<F> {
    let d = data.cols.len();
    let mut order: Vec<Vec<u32>> = data
        .order
        .iter()
        .map(|o| o.iter().copied().filter(|&i| weights[i as usize] > 0).collect())
        .collect();
    let n = order.first().map_or(0, Vec::len);
    let mut go_left = vec![false; data.y.len()];
    let mut scratch: Vec<u32> = Vec::with_capacity(n);
    let mut nodes: Vec<Node<F>> = Vec::new();
    let min_leaf = params.min_samples_leaf.max(1);
    let task = params.task;

    // (node index, lo, hi, depth)
    let mut stack = vec![(0usize, 0usize, n, 0usize)];
    nodes.push(leaf_placeholder());
    while let Some((id, lo, hi, depth)) = stack.pop() {
        let rows = &order[0][lo..hi];
        let mut total = Acc::zero();
        let (mut y_min, mut y_max) = (F::infinity(), F::neg_infinity());
        for &r in rows {
            let y = data.y[r as usize];
            total.add(task, y, F::from_usize_lossy(weights[r as usize] as usize), weights[r as usize] as usize);
            y_min = y_min.min(y);
            y_max = y_max.max(y);
        }

        let can_split = params.max_depth.is_none_or(|m| depth < m) && total.n >= 2 * min_leaf && y_min < y_max;
        let mut best: Option<(usize, F, usize, F)> = None; // (feature, threshold, n_left_rows, proxy)
        if can_split {
            let parent = total.proxy(task);
            let features: Vec<usize> = if params.features_per_split >= d {
                (0..d).collect()
            } else {
                let mut f = rand::seq::index::sample(rng, d, params.features_per_split).into_vec();
                f.sort_unstable();
                f
            };
            for f in features {
                let col = &data.cols[f];
                let ord = &order[f][lo..hi];
                let mut left = Acc::zero();
                for k in 0..ord.len() - 1 {
                    let r = ord[k] as usize;
                    left.add(task, data.y[r], F::from_usize_lossy(weights[r] as usize), weights[r] as usize);
                    let (a, b) = (col[r], col[ord[k + 1] as usize]);
                    if a.partial_cmp(&b) != Some(Ordering::Less) || left.n < min_leaf {
                        continue;
                    }
                    let right = total.sub(&left);
                    if right.n < min_leaf {
                        break;
                    }
                    let score = left.proxy(task) + right.proxy(task);
                    if score > parent && best.as_ref().is_none_or(|b| score > b.3) {
                        let mut thr = a + (b - a) / (F::one() + F::one());
                        if thr.partial_cmp(&b) != Some(Ordering::Less) || thr < a {
                            thr = a;
                        }
                        best = Some((f, thr, k + 1, score));
                    }
                }
            }
        }

        match best {
            None => nodes[id] = make_leaf(task, &total, y_min, y_max),
            Some((f, thr, n_left, _)) => {
                for &r in &order[f][lo..lo + n_left] {
                    go_left[r as usize] = true;
                }
                for o in order.iter_mut() {
                    let seg = &mut o[lo..hi];
                    scratch.clear();
                    let mut w = 0;
                    for i in 0..seg.len() {
                        let r = seg[i];
                        if go_left[r as usize] {
                            seg[w] = r;
                            w += 1;
                        } else {
                            scratch.push(r);
                        }
                    }
                    seg[w..].copy_from_slice(&scratch);
                }
                for &r in &order[f][lo..lo + n_left] {
                    go_left[r as usize] = false;
                }
                let left_id = nodes.len();
                nodes.push(leaf_placeholder());
                let right_id = nodes.len();
                nodes.push(leaf_placeholder());
                nodes[id] = Node {
                    feature: Some(f as u32),
                    threshold: thr,
                    left: left_id as u32,
                    right: right_id as u32,
                    value: F::zero(),
                    counts: Vec::new(),
                };
                // right first so the left subtree is expanded first
                stack.push((right_id, lo + n_left, hi, depth + 1));
                stack.push((left_id, lo, lo + n_left, depth + 1));
            }
        }
    }
    Tree { nodes }
}

fn leaf_placeholder<F: Real>() -> Node<F> {
    Node {
        feature: None,
        threshold: F::zero(),
        left: 0,
        right: 0,
        value: F::zero(),
        counts: Vec::new(),
    }
}

fn make_leaf<F: Real>(task: Task, acc: &Acc<F>, y_min: F, y_max: F) -> Node<F> {
    let (value, counts) = match task {
        Task::Regression if y_min == y_max => (y_min, Vec::new()),
        Task::Regression if acc.w > F::zero() => ((acc.sum / acc.w).max(y_min).min(y_max), Vec::new()),
        Task::Regression => (F::zero(), Vec::new()),
        Task::Classification => (F::from_usize_lossy(argmax_lowest(&acc.classes)), acc.classes.to_vec()),
    };
    Node {
        value,
        counts,
        ..leaf_placeholder()
    }
}
