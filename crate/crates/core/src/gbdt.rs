//! Second-order gradient-boosted regression trees with exact greedy splits.
//!
//! Squared-error loss, so every row has gradient `pred - y` and hessian 1.
//! Each round grows a tree level by level on a row subsample and a column
//! subsample. Leaf weights are then set from all training rows that reach the
//! leaf, which makes every round a descent step on the full training loss.

use nalgebra::DMatrix;
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::container::Container;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GbdtParams {
    pub rounds: usize,
    pub max_depth: usize,
    pub learning_rate: f64,
    pub lambda: f64,
    pub gamma: f64,
    pub row_subsample: f64,
    pub col_subsample: f64,
}

impl Default for GbdtParams {
    fn default() -> Self {
        Self {
            rounds: 200,
            max_depth: 4,
            learning_rate: 0.1,
            lambda: 1.0,
            gamma: 0.0,
            row_subsample: 0.8,
            col_subsample: 0.8,
        }
    }
}

impl GbdtParams {
    pub fn validate(&self) -> Result<()> {
        let frac = |v: f64| v > 0.0 && v <= 1.0;
        if !(self.learning_rate >= 0.0 && self.learning_rate <= 1.0) {
            return Err(Error::Config("gbdt.learning_rate must be in [0, 1]".into()));
        }
        if !(self.lambda >= 0.0) || !(self.gamma >= 0.0) {
            return Err(Error::Config("gbdt.lambda and gbdt.gamma must be >= 0".into()));
        }
        if !frac(self.row_subsample) || !frac(self.col_subsample) {
            return Err(Error::Config("gbdt subsample rates must be in (0, 1]".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TreeNode {
    /// Rows with `x[feature] < threshold` go to `left`, the rest to `right`.
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
    Leaf {
        weight: f64,
    },
}

/// Nodes in pre-order; the root is node 0 and a split's left child follows it.
#[derive(Debug, Clone, PartialEq)]
pub struct Tree {
    pub nodes: Vec<TreeNode>,
}

impl Tree {
    /// Leaf weight reached by a row whose feature `f` is `value(f)`.
    fn predict_by(&self, value: impl Fn(usize) -> f64) -> f64 {
        let mut i = 0;
        loop {
            match self.nodes[i] {
                TreeNode::Split { feature, threshold, left, right } => {
                    i = if value(feature) < threshold { left } else { right };
                }
                TreeNode::Leaf { weight } => return weight,
            }
        }
    }

    pub fn predict(&self, x: &[f64]) -> f64 {
        self.predict_by(|f| x[f])
    }

    pub fn depth(&self) -> usize {
        fn go(nodes: &[TreeNode], i: usize) -> usize {
            match nodes[i] {
                TreeNode::Leaf { .. } => 0,
                TreeNode::Split { left, right, .. } => 1 + go(nodes, left).max(go(nodes, right)),
            }
        }
        go(&self.nodes, 0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GbdtEnsemble {
    pub base: f64,
    pub trees: Vec<Tree>,
    pub params: GbdtParams,
    pub n_features: usize,
    pub seed: u64,
    /// Mean squared training error before the first and after every round.
    pub train_loss: Vec<f64>,
    /// Gain of every accepted split, in creation order.
    pub split_gains: Vec<f64>,
}

impl GbdtEnsemble {
    pub fn predict(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.n_features {
            return Err(Error::Dimension(format!("expected {} features, got {}", self.n_features, x.len())));
        }
        Ok(self.predict_unchecked(x))
    }

    fn predict_unchecked(&self, x: &[f64]) -> f64 {
        let eta = self.params.learning_rate;
        let mut acc = self.base;
        for t in &self.trees {
            acc += eta * t.predict(x);
        }
        acc
    }

    pub fn write_into(&self, c: &mut Container, prefix: &str) {
        c.set(&format!("{prefix}.params"), serde_json::to_string(&self.params).expect("params serialize"));
        c.set(&format!("{prefix}.n_features"), self.n_features);
        c.set(&format!("{prefix}.seed"), self.seed);
        let mut counts = Vec::with_capacity(self.trees.len());
        let (mut ints, mut values) = (Vec::new(), Vec::new());
        for t in &self.trees {
            counts.push(t.nodes.len() as u64);
            for n in &t.nodes {
                match *n {
                    // pre-order: the left child is implicit, store the right child
                    TreeNode::Split { feature, threshold, right, .. } => {
                        ints.extend([1, feature as u64, right as u64]);
                        values.push(threshold);
                    }
                    TreeNode::Leaf { weight } => {
                        ints.extend([0, 0, 0]);
                        values.push(weight);
                    }
                }
            }
        }
        c.push_f64(format!("{prefix}.base"), &[], vec![self.base]);
        c.push_u64(format!("{prefix}.tree_sizes"), &[counts.len()], counts);
        c.push_u64(format!("{prefix}.nodes"), &[values.len(), 3], ints);
        c.push_f64(format!("{prefix}.values"), &[values.len()], values);
        c.push_f64(format!("{prefix}.train_loss"), &[self.train_loss.len()], self.train_loss.clone());
        c.push_f64(format!("{prefix}.split_gains"), &[self.split_gains.len()], self.split_gains.clone());
    }

    pub fn read_from(c: &Container, prefix: &str) -> Result<Self> {
        let params: GbdtParams = serde_json::from_str(c.get(&format!("{prefix}.params"))?)
            .map_err(|e| Error::format(format!("bad gbdt params: {e}")))?;
        let (_, base) = c.f64s(&format!("{prefix}.base"))?;
        let (_, sizes) = c.u64s(&format!("{prefix}.tree_sizes"))?;
        let (_, ints) = c.u64s(&format!("{prefix}.nodes"))?;
        let (_, values) = c.f64s(&format!("{prefix}.values"))?;
        if ints.len() != 3 * values.len() || sizes.iter().sum::<u64>() as usize != values.len() || base.len() != 1 {
            return Err(Error::format("inconsistent gbdt node arrays"));
        }
        let n_features: usize = c.get_parsed(&format!("{prefix}.n_features"))?;
        let mut trees = Vec::with_capacity(sizes.len());
        let mut at = 0;
        for &size in sizes {
            let size = size as usize;
            let mut nodes = Vec::with_capacity(size);
            for i in 0..size {
                let (kind, feature, right) =
                    (ints[3 * (at + i)], ints[3 * (at + i) + 1] as usize, ints[3 * (at + i) + 2] as usize);
                let v = values[at + i];
                nodes.push(match kind {
                    0 => TreeNode::Leaf { weight: v },
                    1 if right > i + 1 && right < size && feature < n_features => {
                        TreeNode::Split { feature, threshold: v, left: i + 1, right }
                    }
                    _ => return Err(Error::format("malformed gbdt node")),
                });
            }
            at += size;
            trees.push(Tree { nodes });
        }
        Ok(Self {
            base: base[0],
            trees,
            params,
            n_features,
            seed: c.get_parsed(&format!("{prefix}.seed"))?,
            train_loss: c.f64s(&format!("{prefix}.train_loss"))?.1.to_vec(),
            split_gains: c.f64s(&format!("{prefix}.split_gains"))?.1.to_vec(),
        })
    }
}

/// Level-wise growth state of one node.
#[derive(Clone)]
struct Grow {
    g: f64,
    h: f64,
    depth: usize,
    best: Option<(f64, usize, f64)>,
    left_g: f64,
    left_h: f64,
    last: f64,
    seen: bool,
}

/// Row indices of one feature in ascending value order, with the values.
struct SortedColumn {
    rows: Vec<u32>,
    values: Vec<f64>,
}

/// Builder node before pre-order renumbering.
enum Raw {
    Split { feature: usize, threshold: f64, left: usize, right: usize },
    Leaf,
}

fn to_preorder(raw: &[Raw], leaf_weight: &[f64]) -> Tree {
    fn emit(raw: &[Raw], w: &[f64], i: usize, out: &mut Vec<TreeNode>) -> usize {
        let me = out.len();
        match raw[i] {
            Raw::Leaf => out.push(TreeNode::Leaf { weight: w[i] }),
            Raw::Split { feature, threshold, left, right } => {
                out.push(TreeNode::Leaf { weight: 0.0 });
                let l = emit(raw, w, left, out);
                let r = emit(raw, w, right, out);
                out[me] = TreeNode::Split { feature, threshold, left: l, right: r };
            }
        }
        me
    }
    let mut nodes = Vec::with_capacity(raw.len());
    emit(raw, leaf_weight, 0, &mut nodes);
    Tree { nodes }
}

fn score(g: f64, h: f64, lambda: f64) -> f64 {
    if h + lambda > 0.0 {
        g * g / (h + lambda)
    } else {
        0.0
    }
}

/// Grows one tree and returns it with the gains of its splits.
#[allow(clippy::too_many_arguments)]
fn grow_tree(
    x: &DMatrix<f64>,
    sorted: &[SortedColumn],
    grad: &[f64],
    residual: &[f64],
    rows: &[usize],
    cols: &[usize],
    params: &GbdtParams,
) -> (Tree, Vec<f64>) {
    let n = x.nrows();
    const INACTIVE: u32 = u32::MAX;
    // node id of every sampled row; other rows do not shape the tree
    let mut node_of = vec![INACTIVE; n];
    let (mut g0, mut h0) = (0.0, 0.0);
    for &r in rows {
        node_of[r] = 0;
        g0 += grad[r];
        h0 += 1.0;
    }
    let mut raw = vec![Raw::Leaf];
    let mut state = vec![Grow { g: g0, h: h0, depth: 0, best: None, left_g: 0.0, left_h: 0.0, last: 0.0, seen: false }];
    let mut frontier: Vec<usize> = if params.max_depth > 0 { vec![0] } else { vec![] };
    let mut gains = Vec::new();
    let lambda = params.lambda;

    while !frontier.is_empty() {
        for &f in cols {
            for &nd in &frontier {
                let s = &mut state[nd];
                s.left_g = 0.0;
                s.left_h = 0.0;
                s.seen = false;
            }
            let column = &sorted[f];
            for (&r, &v) in column.rows.iter().zip(&column.values) {
                let r = r as usize;
                let nd = node_of[r];
                if nd == INACTIVE {
                    continue;
                }
                let s = &mut state[nd as usize];
                if s.seen && v > s.last {
                    // both sides hold at least one row here, so the denominators are positive;
                    // the parent score is constant per node and enters only at commit time
                    let (gl, hl) = (s.left_g, s.left_h);
                    let (gr, hr) = (s.g - gl, s.h - hl);
                    let children = gl * gl / (hl + lambda) + gr * gr / (hr + lambda);
                    if s.best.is_none_or(|(bc, _, _)| children > bc) {
                        let mid = 0.5 * (s.last + v);
                        let thr = if mid > s.last { mid } else { v };
                        s.best = Some((children, f, thr));
                    }
                }
                s.left_g += grad[r];
                s.left_h += 1.0;
                s.last = v;
                s.seen = true;
            }
        }
        let mut next = Vec::new();
        for &nd in &frontier {
            let Some((children, feature, threshold)) = state[nd].best else { continue };
            let gain = 0.5 * (children - score(state[nd].g, state[nd].h, lambda)) - params.gamma;
            if !(gain > 0.0) {
                continue;
            }
            let depth = state[nd].depth + 1;
            let (l, r) = (raw.len(), raw.len() + 1);
            raw.push(Raw::Leaf);
            raw.push(Raw::Leaf);
            raw[nd] = Raw::Split { feature, threshold, left: l, right: r };
            gains.push(gain);
            let fresh = Grow { g: 0.0, h: 0.0, depth, best: None, left_g: 0.0, left_h: 0.0, last: 0.0, seen: false };
            state.push(fresh.clone());
            state.push(fresh);
            if depth < params.max_depth {
                next.push(l);
                next.push(r);
            }
        }
        // route sampled rows into the new children; rows that cannot split further drop out
        for &r in rows {
            if node_of[r] == INACTIVE {
                continue;
            }
            let nd = node_of[r] as usize;
            node_of[r] = INACTIVE;
            if let Raw::Split { feature, threshold, left, right } = raw[nd] {
                let child = if x[(r, feature)] < threshold { left } else { right };
                if state[child].depth < params.max_depth {
                    node_of[r] = child as u32;
                    state[child].g += grad[r];
                    state[child].h += 1.0;
                }
            }
        }
        frontier = next;
    }

    // leaf weights from every training row reaching the leaf
    let mut sum_res = vec![0.0; raw.len()];
    let mut count = vec![0.0; raw.len()];
    let leaf_of = |r: usize| {
        let mut i = 0;
        while let Raw::Split { feature, threshold, left, right } = raw[i] {
            i = if x[(r, feature)] < threshold { left } else { right };
        }
        i
    };
    for (r, res) in residual.iter().enumerate().take(n) {
        let l = leaf_of(r);
        sum_res[l] += res;
        count[l] += 1.0;
    }
    let weights: Vec<f64> =
        sum_res.iter().zip(&count).map(|(s, c)| if c + lambda > 0.0 { s / (c + lambda) } else { 0.0 }).collect();
    (to_preorder(&raw, &weights), gains)
}

/// Fits one ensemble on the rows of `x` against `y`.
pub fn gbdt_fit(x: &DMatrix<f64>, y: &[f64], params: &GbdtParams, seed: u64) -> Result<GbdtEnsemble> {
    params.validate()?;
    let (n, f) = (x.nrows(), x.ncols());
    if y.len() != n {
        return Err(Error::Dimension(format!("{n} rows but {} targets", y.len())));
    }
    if n < 2 {
        return Err(Error::Data(format!("gbdt needs at least 2 rows, got {n}")));
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::Data("non-finite regression target".into()));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::Data("non-finite feature value".into()));
    }
    let sorted: Vec<SortedColumn> = (0..f)
        .map(|j| {
            let col = x.column(j);
            let mut rows: Vec<u32> = (0..n as u32).collect();
            rows.sort_by(|&a, &b| col[a as usize].total_cmp(&col[b as usize]).then(a.cmp(&b)));
            let values = rows.iter().map(|&r| col[r as usize]).collect();
            SortedColumn { rows, values }
        })
        .collect();

    let base = y.iter().sum::<f64>() / n as f64;
    let mut pred = vec![base; n];
    let mse = |pred: &[f64]| pred.iter().zip(y).map(|(p, t)| (p - t).powi(2)).sum::<f64>() / n as f64;
    let mut train_loss = vec![mse(&pred)];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_rows = ((params.row_subsample * n as f64).ceil() as usize).clamp(1, n);
    let n_cols = if f == 0 { 0 } else { ((params.col_subsample * f as f64).ceil() as usize).clamp(1, f) };
    let eta = params.learning_rate;
    let mut trees = Vec::with_capacity(params.rounds);
    let mut split_gains = Vec::new();
    for _ in 0..params.rounds {
        let mut rows = sample(&mut rng, n, n_rows).into_vec();
        rows.sort_unstable();
        let mut cols = if f == 0 { Vec::new() } else { sample(&mut rng, f, n_cols).into_vec() };
        cols.sort_unstable();
        let grad: Vec<f64> = pred.iter().zip(y).map(|(p, t)| p - t).collect();
        let residual: Vec<f64> = grad.iter().map(|g| -g).collect();
        let (tree, gains) = grow_tree(x, &sorted, &grad, &residual, &rows, &cols, params);
        for (r, p) in pred.iter_mut().enumerate() {
            *p += eta * tree.predict_by(|f| x[(r, f)]);
        }
        train_loss.push(mse(&pred));
        split_gains.extend(gains);
        trees.push(tree);
    }
    Ok(GbdtEnsemble { base, trees, params: params.clone(), n_features: f, seed, train_loss, split_gains })
}

pub fn gbdt_predict(model: &GbdtEnsemble, x: &[f64]) -> Result<f64> {
    model.predict(x)
}

/// Worst-case FLOPs of one prediction: one comparison per level per tree, one
/// multiply-add (2 FLOPs) per tree and the base-score add.
pub fn gbdt_flops(model: &GbdtEnsemble) -> u64 {
    flops_for(model.trees.len(), model.params.max_depth)
}

pub fn flops_for(trees: usize, depth: usize) -> u64 {
    (trees * depth + 2 * trees + 1) as u64
}
