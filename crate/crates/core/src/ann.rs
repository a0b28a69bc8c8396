//! Hierarchical navigable small-world graph for approximate nearest
//! neighbor search.
//!
//! Nodes get a random top layer drawn with `floor(-ln(U) / ln(m))`. Each
//! insertion descends greedily from the entry point to the node's top
//! layer, then runs a beam search of width `ef_construction` on every
//! layer below and links to neighbors chosen by the pruning heuristic.
//! Layer 0 allows `2m` links per node, upper layers `m`.
//!
//! Insertion order plus the seed define the graph. Search is read-only and
//! can run from many threads.

use std::cmp::{Ordering, Reverse};
use std::collections::BinaryHeap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::codec::{Reader, Writer};
use crate::embedding::EmbeddingTable;
use crate::error::{Error, Result};
use crate::scalar::{dot, sq_euclidean, Real};

const MAGIC: &[u8; 4] = b"ECHN";
const VERSION: u16 = 1;
const MAX_LEVEL: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
pub enum DistanceMetric {
    #[default]
    Euclidean,
    /// `1 - cos(a, b)`.
    Cosine,
}

impl DistanceMetric {
    /// Monotone surrogate used inside the graph (squared distance for
    /// Euclidean).
    fn raw<T: Real>(self, a: &[T], b: &[T]) -> T {
        match self {
            DistanceMetric::Euclidean => sq_euclidean(a, b),
            DistanceMetric::Cosine => cosine_distance(a, b),
        }
    }

    fn finish<T: Real>(self, raw: T) -> T {
        match self {
            DistanceMetric::Euclidean => raw.sqrt(),
            DistanceMetric::Cosine => raw,
        }
    }

    pub fn distance<T: Real>(self, a: &[T], b: &[T]) -> T {
        self.finish(self.raw(a, b))
    }
}

fn cosine_distance<T: Real>(a: &[T], b: &[T]) -> T {
    let na = dot(a, a).sqrt();
    let nb = dot(b, b).sqrt();
    if na == T::zero() || nb == T::zero() {
        return T::one();
    }
    T::one() - dot(a, b) / (na * nb)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct HnswParams {
    /// Maximum links per node on layers above 0 (layer 0 allows `2m`).
    pub m: usize,
    pub ef_construction: usize,
    pub metric: DistanceMetric,
}

impl Default for HnswParams {
    fn default() -> Self {
        HnswParams {
            m: 100,
            ef_construction: 300,
            metric: DistanceMetric::Euclidean,
        }
    }
}

impl HnswParams {
    pub fn max_degree(&self, layer: usize) -> usize {
        if layer == 0 {
            2 * self.m
        } else {
            self.m
        }
    }
}

/// Search result: position of the point in insertion order and its exact
/// distance to the query.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Neighbor<T> {
    pub index: usize,
    pub distance: T,
}

#[derive(Clone, Copy, Debug)]
struct Cand<T> {
    dist: T,
    idx: u32,
}

impl<T: Real> PartialEq for Cand<T> {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl<T: Real> Eq for Cand<T> {}

impl<T: Real> PartialOrd for Cand<T> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl<T: Real> Ord for Cand<T> {
    fn cmp(&self, other: &Self) -> Ordering {
        self.dist
            .partial_cmp(&other.dist)
            .unwrap_or(Ordering::Equal)
            .then(self.idx.cmp(&other.idx))
    }
}

struct Visited {
    bits: Vec<u64>,
}

impl Visited {
    fn new(n: usize) -> Self {
        Visited {
            bits: vec![0; n.div_ceil(64)],
        }
    }

    /// Marks `i`; returns false if it was already marked.
    fn insert(&mut self, i: u32) -> bool {
        let (w, b) = (i as usize / 64, i as usize % 64);
        let was = self.bits[w] >> b & 1 == 1;
        self.bits[w] |= 1 << b;
        !was
    }
}

#[derive(Debug, Clone)]
pub struct Hnsw<T> {
    params: HnswParams,
    dim: usize,
    ids: Vec<String>,
    data: Vec<T>,
    /// `links[node][layer]` for layers `0..=level_of(node)`.
    links: Vec<Vec<Vec<u32>>>,
    entry_point: Option<u32>,
    rng: ChaCha8Rng,
}

impl<T: Real> Hnsw<T> {
    pub fn new(dim: usize, params: HnswParams, seed: u64) -> Result<Self> {
        if dim == 0 {
            return Err(Error::invalid("cannot index zero-dimensional vectors"));
        }
        if params.m < 2 {
            return Err(Error::invalid(format!("HNSW m must be at least 2, got {}", params.m)));
        }
        Ok(Hnsw {
            params,
            dim,
            ids: Vec::new(),
            data: Vec::new(),
            links: Vec::new(),
            entry_point: None,
            rng: ChaCha8Rng::seed_from_u64(seed),
        })
    }

    /// Inserts every row of `table` in table order.
    pub fn build(table: &EmbeddingTable<T>, params: HnswParams, seed: u64) -> Result<Self> {
        if table.is_empty() {
            return Err(Error::invalid("cannot build an index over an empty table"));
        }
        let mut index = Hnsw::new(table.dim(), params, seed)?;
        for (id, v) in table.iter() {
            index.insert(id, v)?;
        }
        Ok(index)
    }

    pub fn params(&self) -> &HnswParams {
        &self.params
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn id(&self, index: usize) -> &str {
        &self.ids[index]
    }

    pub fn vector(&self, index: usize) -> &[T] {
        &self.data[index * self.dim..(index + 1) * self.dim]
    }

    pub fn entry_point(&self) -> Option<usize> {
        self.entry_point.map(|e| e as usize)
    }

    pub fn level_of(&self, index: usize) -> usize {
        self.links[index].len() - 1
    }

    pub fn max_level(&self) -> Option<usize> {
        self.entry_point().map(|e| self.level_of(e))
    }

    pub fn neighbors(&self, index: usize, layer: usize) -> &[u32] {
        self.links[index].get(layer).map_or(&[], |v| v.as_slice())
    }

    fn raw(&self, q: &[T], i: u32) -> T {
        self.params.metric.raw(q, self.vector(i as usize))
    }

    fn random_level(&mut self) -> usize {
        let ml = 1.0 / (self.params.m as f64).ln();
        let u: f64 = 1.0 - self.rng.gen::<f64>();
        ((-u.ln() * ml).floor() as usize).min(MAX_LEVEL)
    }

    pub fn insert(&mut self, id: impl Into<String>, vector: &[T]) -> Result<usize> {
        if vector.len() != self.dim {
            return Err(Error::DimMismatch {
                expected: self.dim,
                got: vector.len(),
            });
        }
        if vector.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                what: "in indexed vector".into(),
            });
        }
        let node = self.ids.len() as u32;
        let level = self.random_level();
        self.ids.push(id.into());
        self.data.extend_from_slice(vector);
        self.links.push(vec![Vec::new(); level + 1]);

        let Some(entry) = self.entry_point else {
            self.entry_point = Some(node);
            return Ok(node as usize);
        };
        let top = self.level_of(entry as usize);
        let q = self.vector(node as usize).to_vec();
        let mut ep = Cand {
            dist: self.raw(&q, entry),
            idx: entry,
        };
        for layer in (level + 1..=top).rev() {
            ep = self.greedy_closest(&q, ep, layer);
        }
        let mut entries = vec![ep];
        let mut touched = vec![node];
        for layer in (0..=level.min(top)).rev() {
            let found = self.search_layer(&q, &entries, self.params.ef_construction, layer);
            let chosen = self.select_neighbors(&found, self.params.m);
            self.links[node as usize][layer] = chosen.iter().map(|c| c.idx).collect();
            for c in &chosen {
                self.link_back(c.idx, node, layer);
                touched.push(c.idx);
            }
            entries = found;
        }
        if level > top {
            self.entry_point = Some(node);
        }
        #[cfg(debug_assertions)]
        for &t in &touched {
            self.check_node(t as usize)
                .expect("HNSW invariant violated during insertion");
        }
        let _ = touched;
        Ok(node as usize)
    }

    fn greedy_closest(&self, q: &[T], mut cur: Cand<T>, layer: usize) -> Cand<T> {
        loop {
            let mut improved = false;
            for &n in self.neighbors(cur.idx as usize, layer) {
                let c = Cand {
                    dist: self.raw(q, n),
                    idx: n,
                };
                if c < cur {
                    cur = c;
                    improved = true;
                }
            }
            if !improved {
                return cur;
            }
        }
    }

    /// Beam search on one layer; returns up to `ef` candidates ascending.
    fn search_layer(&self, q: &[T], entries: &[Cand<T>], ef: usize, layer: usize) -> Vec<Cand<T>> {
        let mut visited = Visited::new(self.len());
        let mut frontier: BinaryHeap<Reverse<Cand<T>>> = BinaryHeap::new();
        let mut best: BinaryHeap<Cand<T>> = BinaryHeap::new();
        for &e in entries {
            if visited.insert(e.idx) {
                frontier.push(Reverse(e));
                best.push(e);
            }
        }
        while best.len() > ef {
            best.pop();
        }
        while let Some(Reverse(c)) = frontier.pop() {
            if best.len() >= ef && c > *best.peek().expect("non-empty") {
                break;
            }
            for &n in self.neighbors(c.idx as usize, layer) {
                if !visited.insert(n) {
                    continue;
                }
                let cand = Cand {
                    dist: self.raw(q, n),
                    idx: n,
                };
                if best.len() < ef || cand < *best.peek().expect("non-empty") {
                    frontier.push(Reverse(cand));
                    best.push(cand);
                    if best.len() > ef {
                        best.pop();
                    }
                }
            }
        }
        best.into_sorted_vec()
    }

    /// Pruning heuristic: walk candidates nearest-first and keep one only
    /// if it is closer to the base point than to every kept neighbor.
    fn select_neighbors(&self, sorted: &[Cand<T>], max: usize) -> Vec<Cand<T>> {
        let mut kept: Vec<Cand<T>> = Vec::with_capacity(max);
        for &c in sorted {
            if kept.len() >= max {
                break;
            }
            let v = self.vector(c.idx as usize);
            if kept.iter().all(|k| self.raw(v, k.idx) > c.dist) {
                kept.push(c);
            }
        }
        kept
    }

    fn link_back(&mut self, from: u32, to: u32, layer: usize) {
        let max = self.params.max_degree(layer);
        let list = &mut self.links[from as usize][layer];
        if list.contains(&to) {
            return;
        }
        list.push(to);
        if list.len() <= max {
            return;
        }
        let base = self.vector(from as usize).to_vec();
        let mut cands: Vec<Cand<T>> = self.links[from as usize][layer]
            .iter()
            .map(|&n| Cand {
                dist: self.raw(&base, n),
                idx: n,
            })
            .collect();
        cands.sort();
        let kept = self.select_neighbors(&cands, max);
        self.links[from as usize][layer] = kept.into_iter().map(|c| c.idx).collect();
    }

    /// Approximate k nearest neighbors, ascending by distance. Returns all
    /// points when `k` exceeds the index size.
    pub fn search(&self, query: &[T], k: usize, ef_search: usize) -> Result<Vec<Neighbor<T>>> {
        if query.len() != self.dim {
            return Err(Error::DimMismatch {
                expected: self.dim,
                got: query.len(),
            });
        }
        let Some(entry) = self.entry_point else {
            return Ok(Vec::new());
        };
        if k == 0 {
            return Ok(Vec::new());
        }
        let mut ep = Cand {
            dist: self.raw(query, entry),
            idx: entry,
        };
        for layer in (1..=self.level_of(entry as usize)).rev() {
            ep = self.greedy_closest(query, ep, layer);
        }
        let found = self.search_layer(query, &[ep], ef_search.max(k), 0);
        Ok(found
            .into_iter()
            .take(k)
            .map(|c| Neighbor {
                index: c.idx as usize,
                distance: self.params.metric.finish(c.dist),
            })
            .collect())
    }

    fn check_node(&self, i: usize) -> Result<()> {
        let level = self.level_of(i);
        for (layer, list) in self.links[i].iter().enumerate() {
            if list.len() > self.params.max_degree(layer) {
                return Err(Error::Corrupt(format!(
                    "node {i} has degree {} on layer {layer} (max {})",
                    list.len(),
                    self.params.max_degree(layer)
                )));
            }
            for &n in list {
                let n = n as usize;
                if n >= self.len() || n == i {
                    return Err(Error::Corrupt(format!("node {i} has invalid neighbor {n}")));
                }
                if self.level_of(n) < layer {
                    return Err(Error::Corrupt(format!(
                        "edge {i}->{n} on layer {layer} but node {n} only reaches layer {}",
                        self.level_of(n)
                    )));
                }
            }
        }
        debug_assert!(level <= MAX_LEVEL);
        Ok(())
    }

    /// Degree bounds, layer membership and entry-point level.
    pub fn check_invariants(&self) -> Result<()> {
        for i in 0..self.len() {
            self.check_node(i)?;
        }
        if let Some(e) = self.entry_point() {
            let top = self.level_of(e);
            if (0..self.len()).any(|i| self.level_of(i) > top) {
                return Err(Error::Corrupt("entry point is not on the top layer".into()));
            }
        }
        Ok(())
    }

    /// Nodes on `layer` not reachable from the entry point along that
    /// layer's edges.
    pub fn unreachable_on_layer(&self, layer: usize) -> usize {
        let Some(e) = self.entry_point else { return 0 };
        let members = (0..self.len()).filter(|&i| self.level_of(i) >= layer).count();
        if self.level_of(e as usize) < layer {
            return members;
        }
        let mut seen = Visited::new(self.len());
        let mut stack = vec![e];
        seen.insert(e);
        let mut reached = 0;
        while let Some(n) = stack.pop() {
            reached += 1;
            for &m in self.neighbors(n as usize, layer) {
                if seen.insert(m) {
                    stack.push(m);
                }
            }
        }
        members - reached
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::new(MAGIC, VERSION);
        w.u8(T::WIDTH);
        w.u8(match self.params.metric {
            DistanceMetric::Euclidean => 0,
            DistanceMetric::Cosine => 1,
        });
        w.u32(self.params.m as u32);
        w.u32(self.params.ef_construction as u32);
        w.u32(self.dim as u32);
        w.u64(self.len() as u64);
        w.u32(self.entry_point.unwrap_or(u32::MAX));
        for i in 0..self.len() {
            w.str(&self.ids[i]);
            for &v in self.vector(i) {
                w.real(v);
            }
            w.u8(self.level_of(i) as u8);
            for list in &self.links[i] {
                w.u32(list.len() as u32);
                for &n in list {
                    w.u32(n);
                }
            }
        }
        w.finish()
    }

    /// Loads and validates an index. `seed` only affects later insertions.
    pub fn from_bytes(bytes: &[u8], seed: u64) -> Result<Self> {
        let mut r = Reader::open(bytes, MAGIC, VERSION)?;
        r.expect_width::<T>()?;
        let metric = match r.u8()? {
            0 => DistanceMetric::Euclidean,
            1 => DistanceMetric::Cosine,
            x => return Err(Error::Corrupt(format!("unknown metric tag {x}"))),
        };
        let params = HnswParams {
            m: r.u32()? as usize,
            ef_construction: r.u32()? as usize,
            metric,
        };
        let dim = r.u32()? as usize;
        let n = r.len()?;
        let entry = r.u32()?;
        let mut index = Hnsw::new(dim, params, seed)?;
        for _ in 0..n {
            index.ids.push(r.str()?);
            for _ in 0..dim {
                index.data.push(r.real()?);
            }
            let level = r.u8()? as usize;
            if level > MAX_LEVEL {
                return Err(Error::Corrupt(format!("level {level} exceeds {MAX_LEVEL}")));
            }
            let mut layers = Vec::with_capacity(level + 1);
            for _ in 0..=level {
                let deg = r.u32()? as usize;
                let mut list = Vec::with_capacity(deg.min(4096));
                for _ in 0..deg {
                    list.push(r.u32()?);
                }
                layers.push(list);
            }
            index.links.push(layers);
        }
        r.finish()?;
        index.entry_point = match (entry, n) {
            (u32::MAX, 0) => None,
            (e, _) if (e as usize) < n => Some(e),
            (e, _) => return Err(Error::Corrupt(format!("entry point {e} out of range"))),
        };
        index.check_invariants()?;
        Ok(index)
    }
}

/// Exact k nearest neighbors by linear scan; ties go to the lower index.
pub fn brute_force_knn<T: Real>(
    table: &EmbeddingTable<T>,
    query: &[T],
    k: usize,
    metric: DistanceMetric,
) -> Vec<Neighbor<T>> {
    brute_force_rows((0..table.len()).map(|i| table.row(i)), query, k, metric)
}

pub(crate) fn brute_force_rows<'a, T: Real, I>(
    rows: I,
    query: &[T],
    k: usize,
    metric: DistanceMetric,
) -> Vec<Neighbor<T>>
where
    I: Iterator<Item = &'a [T]>,
{
    let mut all: Vec<Neighbor<T>> = rows
        .enumerate()
        .map(|(index, row)| Neighbor {
            index,
            distance: metric.distance(query, row),
        })
        .collect();
    all.sort_by(|a, b| {
        a.distance
            .partial_cmp(&b.distance)
            .unwrap_or(Ordering::Equal)
            .then(a.index.cmp(&b.index))
    });
    all.truncate(k);
    all
}
