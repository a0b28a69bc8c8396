//! Multiclass gradient-boosted regression trees with a softmax objective.
//!
//! Each round fits one tree per class to the softmax gradients and
//! hessians with exact greedy split search over the distinct feature
//! values. Leaf weights are `-G / (H + lambda)` scaled by the learning
//! rate. Hessians use the `2p(1-p)` scaling of the usual softmax objective.

use std::fmt::Write as _;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::codec::{Reader, Writer};
use crate::error::{Error, Result};
use crate::scalar::Real;

const MAGIC: &[u8; 4] = b"ECGB";
const VERSION: u16 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GbdtParams {
    pub max_depth: usize,
    pub min_child_weight: f64,
    pub subsample: f64,
    pub lambda: f64,
    pub learning_rate: f64,
    pub n_estimators: usize,
    /// Minimum gain for a split to be kept.
    pub gamma: f64,
}

impl Default for GbdtParams {
    fn default() -> Self {
        GbdtParams {
            max_depth: 6,
            min_child_weight: 6.0,
            subsample: 0.5,
            lambda: 1.0,
            learning_rate: 0.3,
            n_estimators: 120,
            gamma: 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Node<T> {
    Split {
        feature: u32,
        /// Rows with `x[feature] <= threshold` go left.
        threshold: T,
        left: u32,
        right: u32,
        gain: f64,
    },
    Leaf {
        value: T,
        hessian: f64,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tree<T> {
    nodes: Vec<Node<T>>,
}

impl<T: Real> Tree<T> {
    pub fn nodes(&self) -> &[Node<T>] {
        &self.nodes
    }

    pub fn predict(&self, x: &[T]) -> T {
        let mut i = 0usize;
        loop {
            match self.nodes[i] {
                Node::Leaf { value, .. } => return value,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                    ..
                } => {
                    i = if x[feature as usize] <= threshold {
                        left as usize
                    } else {
                        right as usize
                    }
                }
            }
        }
    }

    pub fn depth(&self) -> usize {
        fn go<T>(nodes: &[Node<T>], i: usize) -> usize {
            match nodes[i] {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => 1 + go(nodes, left as usize).max(go(nodes, right as usize)),
            }
        }
        go(&self.nodes, 0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GbdtModel<T> {
    classes: usize,
    dim: usize,
    params: GbdtParams,
    /// Round-major: tree `r * classes + k` is round `r`, class `k`.
    trees: Vec<Tree<T>>,
}

/// Per-feature sorted distinct values and each row's bin.
struct Binned<T> {
    values: Vec<Vec<T>>,
    bins: Vec<Vec<u32>>,
}

fn bin_features<T: Real>(x: &[&[T]], dim: usize) -> Binned<T> {
    let cols: Vec<(Vec<T>, Vec<u32>)> = (0..dim)
        .into_par_iter()
        .map(|j| {
            let mut vals: Vec<T> = x.iter().map(|r| r[j]).collect();
            vals.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
            vals.dedup();
            if vals.len() < 2 {
                return (vals, Vec::new());
            }
            let bins = x
                .iter()
                .map(|r| {
                    vals.binary_search_by(|v| v.partial_cmp(&r[j]).expect("finite"))
                        .expect("present") as u32
                })
                .collect();
            (vals, bins)
        })
        .collect();
    let (values, bins) = cols.into_iter().unzip();
    Binned { values, bins }
}

struct SplitChoice {
    feature: usize,
    lo: usize,
    hi: usize,
    gain: f64,
}

struct TreeBuilder<'a, T> {
    binned: &'a Binned<T>,
    grad: &'a [f64],
    hess: &'a [f64],
    params: &'a GbdtParams,
    nodes: Vec<Node<T>>,
}

impl<T: Real> TreeBuilder<'_, T> {
    fn leaf_weight(&self, g: f64, h: f64) -> f64 {
        -g / (h + self.params.lambda)
    }

    fn score(&self, g: f64, h: f64) -> f64 {
        g * g / (h + self.params.lambda)
    }

    fn best_split(&self, rows: &[u32], g: f64, h: f64) -> Option<SplitChoice> {
        let mcw = self.params.min_child_weight;
        let parent = self.score(g, h);
        self.binned
            .bins
            .par_iter()
            .enumerate()
            .filter(|(_, b)| !b.is_empty())
            .filter_map(|(j, bins)| {
                let nb = self.binned.values[j].len();
                let mut gs = vec![0.0f64; nb];
                let mut hs = vec![0.0f64; nb];
                let mut cnt = vec![0u32; nb];
                for &r in rows {
                    let b = bins[r as usize] as usize;
                    gs[b] += self.grad[r as usize];
                    hs[b] += self.hess[r as usize];
                    cnt[b] += 1;
                }
                // candidate cuts lie between consecutive values present in this node
                let (mut gl, mut hl) = (0.0, 0.0);
                let mut prev: Option<usize> = None;
                let mut best: Option<SplitChoice> = None;
                for b in 0..nb {
                    if cnt[b] == 0 {
                        continue;
                    }
                    if let Some(pb) = prev {
                        let (gr, hr) = (g - gl, h - hl);
                        if hl >= mcw && hr >= mcw {
                            let gain = 0.5 * (self.score(gl, hl) + self.score(gr, hr) - parent) - self.params.gamma;
                            if gain > 1e-12 && best.as_ref().is_none_or(|s| gain > s.gain) {
                                best = Some(SplitChoice {
                                    feature: j,
                                    lo: pb,
                                    hi: b,
                                    gain,
                                });
                            }
                        }
                    }
                    gl += gs[b];
                    hl += hs[b];
                    prev = Some(b);
                }
                best
            })
            .reduce_with(|a, b| {
                if b.gain > a.gain || (b.gain == a.gain && (b.feature, b.lo) < (a.feature, a.lo)) {
                    b
                } else {
                    a
                }
            })
    }

    fn grow(&mut self, rows: Vec<u32>, depth: usize) -> u32 {
        let g: f64 = rows.iter().map(|&r| self.grad[r as usize]).sum();
        let h: f64 = rows.iter().map(|&r| self.hess[r as usize]).sum();
        let id = self.nodes.len() as u32;
        let leaf = Node::Leaf {
            value: T::from_f64_lossy(self.leaf_weight(g, h) * self.params.learning_rate),
            hessian: h,
        };
        self.nodes.push(leaf);
        if depth >= self.params.max_depth || h < 2.0 * self.params.min_child_weight {
            return id;
        }
        let Some(split) = self.best_split(&rows, g, h) else {
            return id;
        };
        let vals = &self.binned.values[split.feature];
        let (lo, hi) = (vals[split.lo], vals[split.hi]);
        let mid = lo + (hi - lo) / (T::one() + T::one());
        let threshold = if mid >= lo && mid < hi { mid } else { lo };
        let bins = &self.binned.bins[split.feature];
        let (left_rows, right_rows): (Vec<u32>, Vec<u32>) =
            rows.into_iter().partition(|&r| bins[r as usize] as usize <= split.lo);
        let left = self.grow(left_rows, depth + 1);
        let right = self.grow(right_rows, depth + 1);
        self.nodes[id as usize] = Node::Split {
            feature: split.feature as u32,
            threshold,
            left,
            right,
            gain: split.gain,
        };
        id
    }
}

fn softmax_in_place(v: &mut [f64]) {
    let max = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for x in v.iter_mut() {
        *x = (*x - max).exp();
        sum += *x;
    }
    for x in v.iter_mut() {
        *x /= sum;
    }
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Fits the model and returns the training error rate after each round
/// (computed on all rows).
pub fn train_gbdt_traced<T: Real>(
    x: &[&[T]],
    y: &[usize],
    params: &GbdtParams,
    seed: u64,
) -> Result<(GbdtModel<T>, Vec<f64>)> {
    if x.is_empty() || x.len() != y.len() {
        return Err(Error::invalid("boosted trees need one label per non-empty row"));
    }
    let dim = x[0].len();
    for r in x {
        if r.len() != dim {
            return Err(Error::DimMismatch {
                expected: dim,
                got: r.len(),
            });
        }
        if r.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                what: "feature in boosted-tree input".into(),
            });
        }
    }
    let classes = y.iter().max().map_or(0, |m| m + 1);
    if classes < 2 {
        return Err(Error::invalid("boosted trees need at least two classes"));
    }
    let mut present = vec![false; classes];
    for &c in y {
        present[c] = true;
    }
    if let Some(missing) = present.iter().position(|p| !p) {
        return Err(Error::invalid(format!("class {missing} has no training rows")));
    }
    if !(params.subsample > 0.0 && params.subsample <= 1.0) {
        return Err(Error::invalid("subsample must be in (0, 1]"));
    }

    let n = x.len();
    let binned = bin_features(x, dim);
    let mut margins = vec![0.0f64; n * classes];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut trees = Vec::with_capacity(params.n_estimators * classes);
    let mut trace = Vec::with_capacity(params.n_estimators);

    for _ in 0..params.n_estimators {
        let mut probs = margins.clone();
        for row in probs.chunks_mut(classes) {
            softmax_in_place(row);
        }
        let rows: Vec<u32> = if params.subsample < 1.0 {
            let k = ((n as f64) * params.subsample).ceil().max(1.0) as usize;
            let mut s: Vec<u32> = sample(&mut rng, n, k.min(n)).into_iter().map(|i| i as u32).collect();
            s.sort_unstable();
            s
        } else {
            (0..n as u32).collect()
        };
        let round: Vec<Tree<T>> = (0..classes)
            .into_par_iter()
            .map(|k| {
                let grad: Vec<f64> = (0..n)
                    .map(|i| probs[i * classes + k] - f64::from(u8::from(y[i] == k)))
                    .collect();
                let hess: Vec<f64> = (0..n)
                    .map(|i| {
                        let p = probs[i * classes + k];
                        // same hessian scaling as the reference softmax objective
                        (2.0 * p * (1.0 - p)).max(1e-16)
                    })
                    .collect();
                let mut b = TreeBuilder {
                    binned: &binned,
                    grad: &grad,
                    hess: &hess,
                    params,
                    nodes: Vec::new(),
                };
                b.grow(rows.clone(), 0);
                Tree { nodes: b.nodes }
            })
            .collect();
        for (i, row) in x.iter().enumerate() {
            for (k, t) in round.iter().enumerate() {
                margins[i * classes + k] += t.predict(row).to_f64_lossy();
            }
        }
        trees.extend(round);
        let errors = (0..n)
            .filter(|&i| argmax(&margins[i * classes..(i + 1) * classes]) != y[i])
            .count();
        trace.push(errors as f64 / n as f64);
    }

    Ok((
        GbdtModel {
            classes,
            dim,
            params: *params,
            trees,
        },
        trace,
    ))
}

pub fn train_gbdt<T: Real>(x: &[&[T]], y: &[usize], params: &GbdtParams, seed: u64) -> Result<GbdtModel<T>> {
    train_gbdt_traced(x, y, params, seed).map(|(m, _)| m)
}

impl<T: Real> GbdtModel<T> {
    /// A model with no trees: uniform probabilities.
    pub fn empty(classes: usize, dim: usize, params: GbdtParams) -> Self {
        GbdtModel {
            classes,
            dim,
            params,
            trees: Vec::new(),
        }
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn rounds(&self) -> usize {
        self.trees.len() / self.classes.max(1)
    }

    pub fn params(&self) -> &GbdtParams {
        &self.params
    }

    pub fn trees(&self) -> &[Tree<T>] {
        &self.trees
    }

    pub fn margins(&self, x: &[T]) -> Result<Vec<f64>> {
        if x.len() != self.dim {
            return Err(Error::DimMismatch {
                expected: self.dim,
                got: x.len(),
            });
        }
        let mut m = vec![0.0f64; self.classes];
        for (i, t) in self.trees.iter().enumerate() {
            m[i % self.classes] += t.predict(x).to_f64_lossy();
        }
        Ok(m)
    }

    /// One line per node: `tree node split f<j> <= t yes=<l> no=<r> gain=<g>`
    /// or `tree node leaf=<v> hess=<h>`.
    pub fn dump(&self) -> String {
        let mut out = String::new();
        for (ti, t) in self.trees.iter().enumerate() {
            for (ni, n) in t.nodes.iter().enumerate() {
                let _ = match n {
                    Node::Split {
                        feature,
                        threshold,
                        left,
                        right,
                        gain,
                    } => writeln!(
                        out,
                        "{ti}\t{ni}\tf{feature}<={threshold}\tyes={left}\tno={right}\tgain={gain}"
                    ),
                    Node::Leaf { value, hessian } => writeln!(out, "{ti}\t{ni}\tleaf={value}\thess={hessian}"),
                };
            }
        }
        out
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::new(MAGIC, VERSION);
        self.write(&mut w);
        w.finish()
    }

    pub(crate) fn write(&self, w: &mut Writer) {
        w.u8(T::WIDTH);
        w.u32(self.classes as u32);
        w.u32(self.dim as u32);
        let p = &self.params;
        w.u32(p.max_depth as u32);
        w.f64(p.min_child_weight);
        w.f64(p.subsample);
        w.f64(p.lambda);
        w.f64(p.learning_rate);
        w.u32(p.n_estimators as u32);
        w.f64(p.gamma);
        w.u64(self.trees.len() as u64);
        for t in &self.trees {
            w.u32(t.nodes.len() as u32);
            for n in &t.nodes {
                match *n {
                    Node::Split {
                        feature,
                        threshold,
                        left,
                        right,
                        gain,
                    } => {
                        w.u8(0);
                        w.u32(feature);
                        w.real(threshold);
                        w.u32(left);
                        w.u32(right);
                        w.f64(gain);
                    }
                    Node::Leaf { value, hessian } => {
                        w.u8(1);
                        w.real(value);
                        w.f64(hessian);
                    }
                }
            }
        }
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::open(bytes, MAGIC, VERSION)?;
        let m = Self::read(&mut r)?;
        r.finish()?;
        Ok(m)
    }

    pub(crate) fn read(r: &mut Reader<'_>) -> Result<Self> {
        r.expect_width::<T>()?;
        let classes = r.u32()? as usize;
        let dim = r.u32()? as usize;
        let params = GbdtParams {
            max_depth: r.u32()? as usize,
            min_child_weight: r.f64()?,
            subsample: r.f64()?,
            lambda: r.f64()?,
            learning_rate: r.f64()?,
            n_estimators: r.u32()? as usize,
            gamma: r.f64()?,
        };
        let n_trees = r.len()?;
        if classes == 0 || n_trees % classes != 0 {
            return Err(Error::Corrupt(format!("{n_trees} trees for {classes} classes")));
        }
        let mut trees = Vec::with_capacity(n_trees.min(1 << 16));
        for _ in 0..n_trees {
            let nn = r.u32()? as usize;
            let mut nodes = Vec::with_capacity(nn.min(1 << 16));
            for _ in 0..nn {
                nodes.push(match r.u8()? {
                    0 => Node::Split {
                        feature: r.u32()?,
                        threshold: r.real()?,
                        left: r.u32()?,
                        right: r.u32()?,
                        gain: r.f64()?,
                    },
                    1 => Node::Leaf {
                        value: r.real()?,
                        hessian: r.f64()?,
                    },
                    x => return Err(Error::Corrupt(format!("unknown node tag {x}"))),
                });
            }
            for (i, n) in nodes.iter().enumerate() {
                if let Node::Split {
                    feature, left, right, ..
                } = *n
                {
                    if feature as usize >= dim
                        || left as usize <= i
                        || right as usize <= i
                        || left as usize >= nn
                        || right as usize >= nn
                    {
                        return Err(Error::Corrupt(format!("invalid split node {i}")));
                    }
                }
            }
            if nodes.is_empty() {
                return Err(Error::Corrupt("empty tree".into()));
            }
            trees.push(Tree { nodes });
        }
        Ok(GbdtModel {
            classes,
            dim,
            params,
            trees,
        })
    }
}

/// Softmax class probabilities and the argmax class (lowest index wins
/// ties).
pub fn predict_gbdt<T: Real>(model: &GbdtModel<T>, x: &[T]) -> Result<(usize, Vec<f64>)> {
    let mut p = model.margins(x)?;
    softmax_in_place(&mut p);
    Ok((argmax(&p), p))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn blobs(n_per: usize, centers: &[[f64; 2]], spread: f64, seed: u64) -> (Vec<Vec<f64>>, Vec<usize>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut x = Vec::new();
        let mut y = Vec::new();
        for (k, c) in centers.iter().enumerate() {
            for _ in 0..n_per {
                x.push(vec![
                    c[0] + rng.gen_range(-spread..spread),
                    c[1] + rng.gen_range(-spread..spread),
                ]);
                y.push(k);
            }
        }
        (x, y)
    }

    #[test]
    fn separable_blobs_fit_perfectly() {
        let (x, y) = blobs(50, &[[0.0, 0.0], [5.0, 5.0]], 1.0, 1);
        let rows: Vec<&[f64]> = x.iter().map(|r| r.as_slice()).collect();
        let m = train_gbdt(&rows, &y, &GbdtParams::default(), 0).unwrap();
        assert_eq!(m.trees().len(), m.rounds() * 2);
        let correct = rows
            .iter()
            .zip(&y)
            .filter(|(r, &c)| predict_gbdt(&m, r).unwrap().0 == c)
            .count();
        assert_eq!(correct, rows.len());
        assert!(m.trees().iter().all(|t| t.depth() <= 6));
    }

    #[test]
    fn depth_zero_predicts_prior() {
        let x: Vec<Vec<f64>> = (0..10).map(|i| vec![i as f64]).collect();
        let y = vec![0, 1, 1, 1, 2, 1, 0, 1, 2, 1];
        let rows: Vec<&[f64]> = x.iter().map(|r| r.as_slice()).collect();
        let p = GbdtParams {
            max_depth: 0,
            subsample: 1.0,
            n_estimators: 5,
            ..Default::default()
        };
        let m = train_gbdt(&rows, &y, &p, 0).unwrap();
        for r in &rows {
            assert_eq!(predict_gbdt(&m, r).unwrap().0, 1);
        }
    }

    #[test]
    fn single_leaf_value_formula() {
        let x: Vec<Vec<f64>> = (0..8).map(|i| vec![i as f64]).collect();
        let y = vec![0, 0, 0, 1, 1, 1, 1, 1];
        let rows: Vec<&[f64]> = x.iter().map(|r| r.as_slice()).collect();
        let p = GbdtParams {
            max_depth: 0,
            subsample: 1.0,
            n_estimators: 1,
            learning_rate: 1.0,
            lambda: 1.0,
            ..Default::default()
        };
        let m = train_gbdt(&rows, &y, &p, 0).unwrap();
        // first round: p = 1/2 everywhere, g = p - y, h = 2p(1-p)
        for k in 0..2 {
            let g: f64 = y.iter().map(|&c| 0.5 - f64::from(u8::from(c == k))).sum();
            let h = 8.0 * 0.5;
            let Node::Leaf { value, .. } = m.trees()[k].nodes()[0] else {
                panic!("expected leaf")
            };
            assert_eq!(value, -g / (h + 1.0));
        }
    }

    #[test]
    fn missing_class_is_an_error() {
        let x: Vec<Vec<f64>> = vec![vec![0.0], vec![1.0]];
        let rows: Vec<&[f64]> = x.iter().map(|r| r.as_slice()).collect();
        assert!(train_gbdt(&rows, &[0, 2], &GbdtParams::default(), 0).is_err());
        assert!(train_gbdt(&rows, &[0, 0], &GbdtParams::default(), 0).is_err());
    }

    #[test]
    fn empty_model_is_uniform() {
        let m = GbdtModel::<f64>::empty(4, 2, GbdtParams::default());
        let (c, p) = predict_gbdt(&m, &[1.0, 2.0]).unwrap();
        assert_eq!(c, 0);
        assert!(p.iter().all(|&v| (v - 0.25).abs() < 1e-15));
        assert!(predict_gbdt(&m, &[1.0]).is_err());
    }

    #[test]
    fn split_gains_positive_and_leaves_heavy_enough() {
        let (x, y) = blobs(40, &[[0.0, 0.0], [2.0, 0.0], [0.0, 2.0]], 1.5, 4);
        let rows: Vec<&[f64]> = x.iter().map(|r| r.as_slice()).collect();
        let p = GbdtParams {
            n_estimators: 20,
            ..Default::default()
        };
        let m = train_gbdt(&rows, &y, &p, 3).unwrap();
        for t in m.trees() {
            for n in t.nodes() {
                match *n {
                    Node::Split { gain, .. } => assert!(gain >= 0.0),
                    Node::Leaf { hessian, .. } => {
                        if t.nodes().len() > 1 {
                            assert!(hessian >= p.min_child_weight);
                        }
                    }
                }
            }
        }
        let back = GbdtModel::<f64>::from_bytes(&m.to_bytes()).unwrap();
        assert_eq!(back, m);
        assert!(m.dump().lines().count() >= m.trees().len());
    }

    #[test]
    fn full_sample_training_is_deterministic() {
        let (x, y) = blobs(30, &[[0.0, 0.0], [1.0, 1.0]], 1.0, 9);
        let rows: Vec<&[f64]> = x.iter().map(|r| r.as_slice()).collect();
        let p = GbdtParams {
            subsample: 1.0,
            n_estimators: 10,
            ..Default::default()
        };
        let a = train_gbdt(&rows, &y, &p, 1).unwrap();
        let b = train_gbdt(&rows, &y, &p, 2).unwrap();
        assert_eq!(a.to_bytes(), b.to_bytes());
    }

    #[test]
    fn full_sample_error_never_increases() {
        let (x, y) = blobs(50, &[[0.0, 0.0], [3.0, 0.0], [0.0, 3.0]], 1.6, 7);
        let rows: Vec<&[f64]> = x.iter().map(|r| r.as_slice()).collect();
        let p = GbdtParams {
            subsample: 1.0,
            n_estimators: 40,
            ..Default::default()
        };
        let (_, trace) = train_gbdt_traced(&rows, &y, &p, 0).unwrap();
        assert_eq!(trace.len(), 40);
        assert!(trace[0] > 0.0, "fixture must not be separable after one round");
        for w in trace.windows(2) {
            assert!(w[1] <= w[0], "{trace:?}");
        }
    }
}
