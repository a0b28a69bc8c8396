//! Per-record feature vectors: built-in one-hot encoding, precomputed
//! deep-embedding tables, and validation-driven table selection.

use std::collections::HashMap;
use std::fmt;
use std::fs;
use std::io::BufRead;
use std::path::Path;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::codec::{Reader, Writer};
use crate::dataset::{open_maybe_gzip, DatasetSplit, Task};
use crate::error::{Error, Result};
use crate::eval::{binary_metrics, macro_metrics, one_vs_all_counts};
use crate::record::{residue_index, ProteinRecord, ALPHABET};
use crate::scalar::{sq_euclidean, Real};

pub const DEFAULT_MAX_LEN: usize = 1000;

const MAGIC: &[u8; 4] = b"ECEM";
const VERSION: u16 = 1;

/// Provenance tag of an embedding table.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum EmbeddingKind {
    OneHot { max_len: usize },
    Unirep,
    Esm0,
    Esm32,
    Esm33,
    Custom(String),
}

impl fmt::Display for EmbeddingKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EmbeddingKind::OneHot { max_len } => write!(f, "onehot:{max_len}"),
            EmbeddingKind::Unirep => f.write_str("unirep"),
            EmbeddingKind::Esm0 => f.write_str("esm0"),
            EmbeddingKind::Esm32 => f.write_str("esm32"),
            EmbeddingKind::Esm33 => f.write_str("esm33"),
            EmbeddingKind::Custom(name) => write!(f, "custom:{name}"),
        }
    }
}

impl FromStr for EmbeddingKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        Ok(match s {
            "unirep" => EmbeddingKind::Unirep,
            "esm0" => EmbeddingKind::Esm0,
            "esm32" => EmbeddingKind::Esm32,
            "esm33" => EmbeddingKind::Esm33,
            "onehot" => EmbeddingKind::OneHot {
                max_len: DEFAULT_MAX_LEN,
            },
            other => {
                if let Some(n) = other.strip_prefix("onehot:") {
                    EmbeddingKind::OneHot {
                        max_len: n.parse().map_err(|_| format!("bad one-hot length {n:?}"))?,
                    }
                } else if let Some(name) = other.strip_prefix("custom:") {
                    EmbeddingKind::Custom(name.to_string())
                } else {
                    EmbeddingKind::Custom(other.to_string())
                }
            }
        })
    }
}

/// Fixed-width vectors keyed by record id, in insertion order.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable<T> {
    kind: EmbeddingKind,
    dim: usize,
    ids: Vec<String>,
    data: Vec<T>,
    index: HashMap<String, usize>,
}

impl<T: Real> EmbeddingTable<T> {
    pub fn new(kind: EmbeddingKind, dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::invalid("embedding dimension must be positive"));
        }
        Ok(EmbeddingTable {
            kind,
            dim,
            ids: Vec::new(),
            data: Vec::new(),
            index: HashMap::new(),
        })
    }

    pub fn kind(&self) -> &EmbeddingKind {
        &self.kind
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

    pub fn insert(&mut self, id: impl Into<String>, vector: &[T]) -> Result<()> {
        let id = id.into();
        if vector.len() != self.dim {
            return Err(Error::DimMismatch {
                expected: self.dim,
                got: vector.len(),
            });
        }
        if vector.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                what: format!("in embedding of {id}"),
            });
        }
        if self.index.contains_key(&id) {
            return Err(Error::invalid(format!("duplicate embedding id {id}")));
        }
        self.index.insert(id.clone(), self.ids.len());
        self.ids.push(id);
        self.data.extend_from_slice(vector);
        Ok(())
    }

    pub fn get(&self, id: &str) -> Option<&[T]> {
        self.index.get(id).map(|&i| self.row(i))
    }

    /// Looks up `id`, naming the table in the error.
    pub fn require(&self, id: &str) -> Result<&[T]> {
        self.get(id).ok_or_else(|| Error::MissingEmbedding {
            table: self.kind.to_string(),
            id: id.to_string(),
        })
    }

    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn id(&self, i: usize) -> &str {
        &self.ids[i]
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &[T])> {
        self.ids.iter().enumerate().map(|(i, id)| (id.as_str(), self.row(i)))
    }

    /// Binary container: magic, version, scalar width, kind, dim, count,
    /// id width, then fixed-width rows (zero-padded id bytes, values).
    pub fn to_bytes(&self) -> Vec<u8> {
        let id_width = self.ids.iter().map(String::len).max().unwrap_or(0);
        let mut w = Writer::new(MAGIC, VERSION);
        w.u8(T::WIDTH);
        w.str(&self.kind.to_string());
        w.u32(self.dim as u32);
        w.u64(self.ids.len() as u64);
        w.u32(id_width as u32);
        let mut out = w.finish();
        for (id, row) in self.iter() {
            out.extend_from_slice(id.as_bytes());
            out.resize(out.len() + id_width - id.len(), 0);
            for &v in row {
                v.write_le(&mut out);
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::open(bytes, MAGIC, VERSION)?;
        let width = r.u8()?;
        let kind: EmbeddingKind = r.str()?.parse().map_err(Error::Corrupt)?;
        let dim = r.u32()? as usize;
        let count = r.u64()? as usize;
        let id_width = r.u32()? as usize;
        let mut table = EmbeddingTable::new(kind, dim)?;
        let row_bytes = id_width + dim * width as usize;
        let header_len = bytes.len() - r.remaining();
        let body = &bytes[header_len..];
        if body.len() != row_bytes * count {
            return Err(Error::Corrupt(format!(
                "expected {count} rows of {row_bytes} bytes, found {} bytes",
                body.len()
            )));
        }
        let mut row = vec![T::zero(); dim];
        for chunk in body.chunks_exact(row_bytes.max(1)).take(count) {
            let id_end = chunk[..id_width].iter().position(|&b| b == 0).unwrap_or(id_width);
            let id = std::str::from_utf8(&chunk[..id_end]).map_err(|_| Error::Corrupt("id is not utf-8".into()))?;
            for (j, v) in row.iter_mut().enumerate() {
                let at = id_width + j * width as usize;
                *v = match width {
                    4 => T::from_f64_lossy(f32::read_le(&chunk[at..]) as f64),
                    8 => T::from_f64_lossy(f64::read_le(&chunk[at..])),
                    w => return Err(Error::Corrupt(format!("unsupported scalar width {w}"))),
                };
            }
            table.insert(id, &row)?;
        }
        Ok(table)
    }

    /// One row per id: `id<TAB>v1<TAB>...<TAB>vdim`.
    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        for (id, row) in self.iter() {
            out.push_str(id);
            for v in row {
                out.push('\t');
                out.push_str(&v.to_string());
            }
            out.push('\n');
        }
        out
    }

    pub fn read_tsv<R: BufRead>(reader: R, kind: EmbeddingKind, name: &str) -> Result<Self> {
        let mut table: Option<EmbeddingTable<T>> = None;
        let mut row = Vec::new();
        for (i, line) in reader.lines().enumerate() {
            let line = line.map_err(|e| Error::io(name, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let mut fields = line.split('\t');
            let id = fields.next().unwrap_or_default().trim().to_string();
            row.clear();
            for f in fields {
                let v: f64 = f.trim().parse().map_err(|_| Error::Format {
                    file: name.to_string(),
                    line: i + 1,
                    message: format!("bad number {f:?}"),
                })?;
                if !v.is_finite() {
                    return Err(Error::Format {
                        file: name.to_string(),
                        line: i + 1,
                        message: format!("non-finite value {f:?}"),
                    });
                }
                row.push(T::from_f64_lossy(v));
            }
            let t = match &mut table {
                Some(t) => t,
                None => table.insert(EmbeddingTable::new(kind.clone(), row.len()).map_err(|_| Error::Format {
                    file: name.to_string(),
                    line: i + 1,
                    message: "row has no values".into(),
                })?),
            };
            if row.len() != t.dim {
                return Err(Error::Format {
                    file: name.to_string(),
                    line: i + 1,
                    message: format!("ragged row: {} values, expected {}", row.len(), t.dim),
                });
            }
            t.insert(id, &row).map_err(|e| Error::Format {
                file: name.to_string(),
                line: i + 1,
                message: e.to_string(),
            })?;
        }
        table.ok_or_else(|| Error::invalid(format!("{name}: empty embedding table")))
    }
}

/// Loads a table from the binary container or TSV, detected by magic.
/// The kind of a TSV table is taken from `kind`.
pub fn load_embedding_table<T: Real>(
    path: &Path,
    kind: EmbeddingKind,
    expected_dim: Option<usize>,
) -> Result<EmbeddingTable<T>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let table = if bytes.starts_with(MAGIC) {
        EmbeddingTable::from_bytes(&bytes)?
    } else {
        EmbeddingTable::read_tsv(open_maybe_gzip(path)?, kind, &path.display().to_string())?
    };
    if let Some(dim) = expected_dim {
        if dim != table.dim() {
            return Err(Error::DimMismatch {
                expected: dim,
                got: table.dim(),
            });
        }
    }
    Ok(table)
}

/// `max_len` blocks of one indicator per alphabet symbol. Longer sequences
/// are truncated, shorter ones zero-padded.
pub fn one_hot_encode<T: Real>(seq: &str, max_len: usize) -> Vec<T> {
    let width = ALPHABET.len();
    let mut out = vec![T::zero(); width * max_len];
    for (pos, b) in seq.bytes().take(max_len).enumerate() {
        let idx = residue_index(b.to_ascii_uppercase())
            .or_else(|| residue_index(b'X'))
            .expect("X in alphabet");
        out[pos * width + idx] = T::one();
    }
    out
}

pub fn one_hot_table<'a, T: Real, I>(entries: I, max_len: usize) -> Result<EmbeddingTable<T>>
where
    I: IntoIterator<Item = (&'a str, &'a str)>,
{
    let mut table = EmbeddingTable::new(EmbeddingKind::OneHot { max_len }, ALPHABET.len() * max_len)?;
    for (id, seq) in entries {
        table.insert(id, &one_hot_encode::<T>(seq, max_len))?;
    }
    Ok(table)
}

/// A classifier used only to score candidate embeddings.
pub trait BaselineLearner<T: Real>: Sync {
    fn fit_predict(&self, train_x: &[&[T]], train_y: &[usize], test_x: &[&[T]]) -> Vec<usize>;
}

/// Exact k-nearest-neighbor vote with inverse-distance weights.
#[derive(Debug, Clone, Copy)]
pub struct KnnBaseline {
    pub k: usize,
}

impl Default for KnnBaseline {
    fn default() -> Self {
        KnnBaseline { k: 5 }
    }
}

impl<T: Real> BaselineLearner<T> for KnnBaseline {
    fn fit_predict(&self, train_x: &[&[T]], train_y: &[usize], test_x: &[&[T]]) -> Vec<usize> {
        test_x
            .par_iter()
            .map(|q| {
                let mut d: Vec<(f64, usize)> = train_x
                    .iter()
                    .enumerate()
                    .map(|(i, x)| (sq_euclidean(q, x).to_f64_lossy().sqrt(), i))
                    .collect();
                d.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
                d.truncate(self.k.max(1));
                let exact: Vec<_> = d.iter().filter(|x| x.0 == 0.0).copied().collect();
                let voters = if exact.is_empty() { d } else { exact };
                let mut votes: HashMap<usize, f64> = HashMap::new();
                for (dist, i) in voters {
                    let w = if dist == 0.0 { 1.0 } else { 1.0 / dist };
                    *votes.entry(train_y[i]).or_default() += w;
                }
                votes
                    .into_iter()
                    .max_by(|a, b| a.1.total_cmp(&b.1).then(b.0.cmp(&a.0)))
                    .map(|(label, _)| label)
                    .unwrap_or(0)
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScoreboardEntry {
    pub kind: EmbeddingKind,
    pub dim: usize,
    pub score: f64,
}

/// Task label used when scoring embeddings: enzyme flag, function count,
/// or the dense index of the first EC in canonical order.
fn task_labels(records: &[ProteinRecord], task: Task, ec_index: &mut HashMap<String, usize>) -> Vec<usize> {
    records
        .iter()
        .map(|r| match task {
            Task::EnzymeOrNot => usize::from(r.is_enzyme),
            Task::FunctionCount => usize::from(r.function_count),
            Task::EcNumber => {
                let key = r.ecs.iter().min().map(|e| e.to_string()).unwrap_or_default();
                let next = ec_index.len();
                *ec_index.entry(key).or_insert(next)
            }
        })
        .collect()
}

/// Trains `learner` once per table and scores it on the validation part
/// (F1 for the binary task, per-class macro F1 otherwise). Returns the
/// best table's kind and the scoreboard in input order. Ties go to the
/// smaller dimension, then to the smaller kind.
pub fn select_embedding<T: Real>(
    tables: &[&EmbeddingTable<T>],
    split: &DatasetSplit,
    learner: &dyn BaselineLearner<T>,
) -> Result<(EmbeddingKind, Vec<ScoreboardEntry>)> {
    if tables.is_empty() {
        return Err(Error::invalid("no embedding tables to select from"));
    }
    for t in tables {
        for r in split.train.iter().chain(&split.test) {
            t.require(&r.id)?;
        }
    }
    let mut ec_index = HashMap::new();
    let train_y = task_labels(&split.train, split.task, &mut ec_index);
    let test_y = task_labels(&split.test, split.task, &mut ec_index);

    let board: Vec<ScoreboardEntry> = tables
        .par_iter()
        .map(|t| {
            let train_x: Vec<&[T]> = split.train.iter().map(|r| t.get(&r.id).expect("checked")).collect();
            let test_x: Vec<&[T]> = split.test.iter().map(|r| t.get(&r.id).expect("checked")).collect();
            let pred = learner.fit_predict(&train_x, &train_y, &test_x);
            let score = match split.task {
                Task::EnzymeOrNot => {
                    let counts = one_vs_all_counts(&test_y, &pred, 1);
                    binary_metrics(&counts).f1.value_or_zero()
                }
                _ => {
                    let mut classes: Vec<usize> = test_y.iter().chain(&pred).copied().collect();
                    classes.sort_unstable();
                    classes.dedup();
                    let per_class: Vec<_> = classes.iter().map(|&c| one_vs_all_counts(&test_y, &pred, c)).collect();
                    macro_metrics(&per_class).map(|m| m.f1_per_class).unwrap_or(0.0)
                }
            };
            ScoreboardEntry {
                kind: t.kind().clone(),
                dim: t.dim(),
                score,
            }
        })
        .collect();

    let best = board
        .iter()
        .min_by(|a, b| {
            b.score
                .total_cmp(&a.score)
                .then(a.dim.cmp(&b.dim))
                .then(a.kind.cmp(&b.kind))
        })
        .expect("non-empty");
    debug_assert!(board.iter().all(|e| e.score <= best.score));
    Ok((best.kind.clone(), board))
}
