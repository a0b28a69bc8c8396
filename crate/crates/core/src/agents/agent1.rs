use serde::{Deserialize, Serialize};

use super::rows_for;
use crate::ann::{brute_force_rows, DistanceMetric, Hnsw, HnswParams, Neighbor};
use crate::codec::{Reader, Writer};
use crate::embedding::EmbeddingTable;
use crate::error::{Error, Result};
use crate::record::ProteinRecord;
use crate::scalar::Real;

const MAGIC: &[u8; 4] = b"ECA1";
const VERSION: u16 = 1;

/// Training sets smaller than this are searched by linear scan.
pub const EXACT_SCAN_LIMIT: usize = 50_000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Agent1Params {
    pub n_neighbors: usize,
    /// Graph search breadth; raised to at least `10 * n_neighbors`.
    pub ef_search: usize,
    pub hnsw: HnswParams,
    pub exact_scan_limit: usize,
}

impl Default for Agent1Params {
    fn default() -> Self {
        Agent1Params {
            n_neighbors: 5,
            ef_search: 50,
            hnsw: HnswParams::default(),
            exact_scan_limit: EXACT_SCAN_LIMIT,
        }
    }
}

#[derive(Debug, Clone)]
enum Points<T> {
    Exact { dim: usize, data: Vec<T> },
    Graph(Box<Hnsw<T>>),
}

/// Distance-weighted KNN over training embeddings labeled enzyme or not.
#[derive(Debug, Clone)]
pub struct Agent1Model<T> {
    params: Agent1Params,
    points: Points<T>,
    labels: Vec<bool>,
}

pub fn train_agent1<T: Real>(
    records: &[ProteinRecord],
    table: &EmbeddingTable<T>,
    params: &Agent1Params,
    seed: u64,
) -> Result<Agent1Model<T>> {
    if params.n_neighbors == 0 {
        return Err(Error::invalid("n_neighbors must be at least 1"));
    }
    if records.is_empty() {
        return Err(Error::invalid("enzyme classifier needs at least one training record"));
    }
    let rows = rows_for(records, table)?;
    let points = if records.len() < params.exact_scan_limit {
        let mut data = Vec::with_capacity(rows.len() * table.dim());
        for r in &rows {
            data.extend_from_slice(r);
        }
        Points::Exact { dim: table.dim(), data }
    } else {
        let mut g = Hnsw::new(table.dim(), params.hnsw, seed)?;
        for (rec, r) in records.iter().zip(&rows) {
            g.insert(rec.id.clone(), r)?;
        }
        Points::Graph(Box::new(g))
    };
    Ok(Agent1Model {
        params: *params,
        points,
        labels: records.iter().map(|r| r.is_enzyme).collect(),
    })
}

impl<T: Real> Agent1Model<T> {
    pub fn params(&self) -> &Agent1Params {
        &self.params
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        match &self.points {
            Points::Exact { dim, .. } => *dim,
            Points::Graph(g) => g.dim(),
        }
    }

    pub fn uses_graph(&self) -> bool {
        matches!(self.points, Points::Graph(_))
    }

    fn neighbors(&self, x: &[T]) -> Result<Vec<Neighbor<T>>> {
        let k = self.params.n_neighbors;
        match &self.points {
            Points::Exact { dim, data } => {
                if x.len() != *dim {
                    return Err(Error::DimMismatch {
                        expected: *dim,
                        got: x.len(),
                    });
                }
                Ok(brute_force_rows(
                    data.chunks_exact(*dim),
                    x,
                    k,
                    DistanceMetric::Euclidean,
                ))
            }
            Points::Graph(g) => g.search(x, k, self.params.ef_search.max(10 * k)),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::new(MAGIC, VERSION);
        w.u8(T::WIDTH);
        w.u32(self.params.n_neighbors as u32);
        w.u32(self.params.ef_search as u32);
        w.u32(self.params.hnsw.m as u32);
        w.u32(self.params.hnsw.ef_construction as u32);
        w.u64(self.params.exact_scan_limit as u64);
        w.u64(self.labels.len() as u64);
        for &l in &self.labels {
            w.u8(u8::from(l));
        }
        match &self.points {
            Points::Exact { dim, data } => {
                w.u8(0);
                w.u32(*dim as u32);
                for &v in data {
                    w.real(v);
                }
            }
            Points::Graph(g) => {
                w.u8(1);
                w.bytes(&g.to_bytes());
            }
        }
        w.finish()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::open(bytes, MAGIC, VERSION)?;
        r.expect_width::<T>()?;
        let mut params = Agent1Params {
            n_neighbors: r.u32()? as usize,
            ef_search: r.u32()? as usize,
            ..Default::default()
        };
        params.hnsw.m = r.u32()? as usize;
        params.hnsw.ef_construction = r.u32()? as usize;
        params.exact_scan_limit = r.u64()? as usize;
        let n = r.len()?;
        let mut labels = Vec::with_capacity(n.min(1 << 24));
        for _ in 0..n {
            labels.push(match r.u8()? {
                0 => false,
                1 => true,
                x => return Err(Error::Corrupt(format!("bad label byte {x}"))),
            });
        }
        let points = match r.u8()? {
            0 => {
                let dim = r.u32()? as usize;
                let mut data = Vec::with_capacity((n * dim).min(1 << 26));
                for _ in 0..n * dim {
                    data.push(r.real()?);
                }
                Points::Exact { dim, data }
            }
            1 => {
                let g = Hnsw::from_bytes(r.bytes()?, 0)?;
                if g.len() != n {
                    return Err(Error::Corrupt(format!("index holds {} points for {n} labels", g.len())));
                }
                params.hnsw = *g.params();
                Points::Graph(Box::new(g))
            }
            x => return Err(Error::Corrupt(format!("unknown point storage tag {x}"))),
        };
        r.finish()?;
        if params.n_neighbors == 0 || n == 0 {
            return Err(Error::Corrupt("empty enzyme classifier".into()));
        }
        Ok(Agent1Model { params, points, labels })
    }
}

/// Inverse-distance-weighted vote among the nearest training points.
/// Neighbors at distance zero, if any, outvote everything else with equal
/// weight. Returns the label and the winning share of the total weight;
/// an even split goes to non-enzyme.
pub fn predict_agent1<T: Real>(model: &Agent1Model<T>, x: &[T]) -> Result<(bool, f64)> {
    let nn = model.neighbors(x)?;
    let exact = nn.iter().any(|n| n.distance == T::zero());
    let (mut yes, mut no) = (0.0f64, 0.0f64);
    for n in &nn {
        let w = if exact {
            if n.distance == T::zero() {
                1.0
            } else {
                0.0
            }
        } else {
            1.0 / n.distance.to_f64_lossy()
        };
        if model.labels[n.index] {
            yes += w;
        } else {
            no += w;
        }
    }
    let total = yes + no;
    if total == 0.0 || !total.is_finite() {
        return Ok((false, 0.0));
    }
    Ok(if yes > no {
        (true, yes / total)
    } else {
        (false, no / total)
    })
}
