use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use log::warn;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::rows_for;
use crate::ann::{Hnsw, HnswParams};
use crate::codec::{Reader, Writer};
use crate::ec::{EcNumber, LabelDictionary};
use crate::embedding::EmbeddingTable;
use crate::error::{Error, Result};
use crate::linear::{sparsify, train_l2svm, LinearKind, LinearModel, SvmParams, TrainMeta};
use crate::record::ProteinRecord;
use crate::scalar::Real;

const MAGIC: &[u8; 4] = b"ECA3";
const VERSION: u16 = 1;

/// Number of ranked ECs returned in recommendation mode.
pub const RECOMMENDATION_LIMIT: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// Return as many ECs as the predicted function count.
    #[default]
    Prediction,
    /// Return up to [`RECOMMENDATION_LIMIT`] ranked ECs.
    Recommendation,
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Prediction => "prediction",
            Mode::Recommendation => "recommendation",
        })
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "prediction" | "predict" => Ok(Mode::Prediction),
            "recommendation" | "recommend" => Ok(Mode::Recommendation),
            other => Err(Error::invalid(format!("unknown mode {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Agent3Params {
    pub hnsw: HnswParams,
    pub ef_search: usize,
    /// Negative-sample budget per label.
    pub negatives: usize,
    /// Nearest training points whose labels form the prediction shortlist.
    pub shortlist_size: usize,
    pub svm: SvmParams,
    /// Weights below this magnitude are dropped after training.
    pub sparsify: f64,
}

impl Default for Agent3Params {
    fn default() -> Self {
        Agent3Params {
            hnsw: HnswParams::default(),
            ef_search: 300,
            negatives: 700,
            shortlist_size: 700,
            svm: SvmParams::default(),
            sparsify: 1e-6,
        }
    }
}

/// One-vs-all linear classifiers over EC labels, queried through a
/// nearest-neighbor shortlist.
#[derive(Debug, Clone)]
pub struct Agent3Model<T> {
    params: Agent3Params,
    dict: LabelDictionary,
    /// Indexed by label; `None` for labels without training points.
    classifiers: Vec<Option<LinearModel<T>>>,
    ann: Hnsw<T>,
    label_of_point: Vec<u32>,
    negative_counts: Vec<u32>,
}

/// One training point per (record, EC) pair.
struct Points {
    record: Vec<u32>,
    label: Vec<u32>,
    /// Sorted labels carried by each record.
    record_labels: Vec<Vec<u32>>,
}

fn collect_points(records: &[ProteinRecord], dict: &LabelDictionary) -> Result<Points> {
    let mut p = Points {
        record: Vec::new(),
        label: Vec::new(),
        record_labels: Vec::with_capacity(records.len()),
    };
    for (ri, r) in records.iter().enumerate() {
        let mut labels: Vec<u32> = Vec::new();
        for ec in &r.ecs {
            let l = dict.label(ec).ok_or_else(|| {
                Error::invalid(format!(
                    "record {} carries {ec}, absent from the label dictionary",
                    r.id
                ))
            })?;
            labels.push(l as u32);
        }
        labels.sort_unstable();
        labels.dedup();
        for &l in &labels {
            p.record.push(ri as u32);
            p.label.push(l);
        }
        p.record_labels.push(labels);
    }
    if p.label.is_empty() {
        return Err(Error::invalid("no labeled training points for the EC classifier"));
    }
    Ok(p)
}

fn constant_model<T: Real>(dim: usize, bias: f64) -> Result<LinearModel<T>> {
    LinearModel::from_dense(
        &vec![T::zero(); dim],
        T::from_f64_lossy(bias),
        LinearKind::L2Svm,
        TrainMeta {
            regularization: 0.0,
            iterations: 0,
            objective: 0.0,
            converged: true,
        },
    )
}

fn fit_label<T: Real>(
    label: u32,
    positives: &[u32],
    negatives: &[u32],
    rows: &[&[T]],
    dim: usize,
    params: &Agent3Params,
) -> Result<LinearModel<T>> {
    if negatives.is_empty() {
        // every training record carries this label
        return constant_model(dim, 1.0);
    }
    let pos: Vec<&[T]> = positives.iter().map(|&r| rows[r as usize]).collect();
    let neg: Vec<&[T]> = negatives.iter().map(|&r| rows[r as usize]).collect();
    let svm = SvmParams {
        seed: params.svm.seed ^ u64::from(label),
        ..params.svm
    };
    let m = train_l2svm(&pos, &neg, &svm)?;
    Ok(sparsify(&m, T::from_f64_lossy(params.sparsify)))
}

fn positives_by_label(points: &Points, n_labels: usize) -> Vec<Vec<u32>> {
    let mut pos = vec![Vec::new(); n_labels];
    for (&r, &l) in points.record.iter().zip(&points.label) {
        pos[l as usize].push(r);
    }
    pos
}

fn build_ann<T: Real>(
    points: &Points,
    records: &[ProteinRecord],
    rows: &[&[T]],
    dim: usize,
    params: &Agent3Params,
    seed: u64,
) -> Result<Hnsw<T>> {
    let mut ann = Hnsw::new(dim, params.hnsw, seed)?;
    for &r in &points.record {
        ann.insert(records[r as usize].id.clone(), rows[r as usize])?;
    }
    Ok(ann)
}

/// Trains one classifier per dictionary label. Negatives for label `L` are
/// the graph neighbors of `L`'s positives (`ceil(budget / |positives|)`
/// per positive) drawn from records that do not carry `L`.
pub fn train_agent3<T: Real>(
    records: &[ProteinRecord],
    table: &EmbeddingTable<T>,
    dict: &LabelDictionary,
    params: &Agent3Params,
    seed: u64,
) -> Result<Agent3Model<T>> {
    if params.negatives == 0 || params.shortlist_size == 0 {
        return Err(Error::invalid("negative budget and shortlist size must be positive"));
    }
    let rows = rows_for(records, table)?;
    let dim = table.dim();
    let points = collect_points(records, dict)?;
    let ann = build_ann(&points, records, &rows, dim, params, seed)?;
    let n_points = points.label.len();
    let positives = positives_by_label(&points, dict.len());

    let fitted: Vec<Result<(Option<LinearModel<T>>, u32)>> = (0..dict.len())
        .into_par_iter()
        .map(|l| {
            let label = l as u32;
            let pos = &positives[l];
            if pos.is_empty() {
                warn!(
                    "label {} has no training points; skipped",
                    dict.ec(l).expect("label in range")
                );
                return Ok((None, 0));
            }
            let per = params.negatives.div_ceil(pos.len()).min(n_points);
            let mut neg: BTreeSet<u32> = BTreeSet::new();
            for &r in pos {
                for nb in ann.search(rows[r as usize], per, params.ef_search.max(per))? {
                    let rec = points.record[nb.index];
                    if points.record_labels[rec as usize].binary_search(&label).is_err() {
                        neg.insert(rec);
                    }
                }
            }
            if neg.is_empty() {
                neg = (0..records.len() as u32)
                    .filter(|&r| points.record_labels[r as usize].binary_search(&label).is_err())
                    .take(params.negatives)
                    .collect();
            }
            let neg: Vec<u32> = neg.into_iter().collect();
            assert!(
                neg.iter()
                    .all(|&r| points.record_labels[r as usize].binary_search(&label).is_err()),
                "sampled negative carries the positive label"
            );
            let m = fit_label(label, pos, &neg, &rows, dim, params)?;
            Ok((Some(m), neg.len() as u32))
        })
        .collect();
    let mut classifiers = Vec::with_capacity(dict.len());
    let mut negative_counts = Vec::with_capacity(dict.len());
    for f in fitted {
        let (m, n) = f?;
        classifiers.push(m);
        negative_counts.push(n);
    }
    Ok(Agent3Model {
        params: *params,
        dict: dict.clone(),
        classifiers,
        ann,
        label_of_point: points.label,
        negative_counts,
    })
}

/// Reference trainer: every label against every record not carrying it,
/// with a shortlist spanning all training points.
pub fn train_one_vs_all_exhaustive<T: Real>(
    records: &[ProteinRecord],
    table: &EmbeddingTable<T>,
    dict: &LabelDictionary,
    params: &Agent3Params,
    seed: u64,
) -> Result<Agent3Model<T>> {
    let rows = rows_for(records, table)?;
    let dim = table.dim();
    let points = collect_points(records, dict)?;
    let ann = build_ann(&points, records, &rows, dim, params, seed)?;
    let positives = positives_by_label(&points, dict.len());
    let fitted: Vec<Result<(Option<LinearModel<T>>, u32)>> = (0..dict.len())
        .into_par_iter()
        .map(|l| {
            let label = l as u32;
            if positives[l].is_empty() {
                return Ok((None, 0));
            }
            let neg: Vec<u32> = (0..records.len() as u32)
                .filter(|&r| points.record_labels[r as usize].binary_search(&label).is_err())
                .collect();
            let m = fit_label(label, &positives[l], &neg, &rows, dim, params)?;
            Ok((Some(m), neg.len() as u32))
        })
        .collect();
    let (classifiers, negative_counts) = fitted.into_iter().collect::<Result<Vec<_>>>()?.into_iter().unzip();
    let n_points = points.label.len();
    Ok(Agent3Model {
        params: Agent3Params {
            shortlist_size: n_points,
            ef_search: params.ef_search.max(n_points),
            ..*params
        },
        dict: dict.clone(),
        classifiers,
        ann,
        label_of_point: points.label,
        negative_counts,
    })
}

impl<T: Real> Agent3Model<T> {
    pub fn params(&self) -> &Agent3Params {
        &self.params
    }

    pub fn dictionary(&self) -> &LabelDictionary {
        &self.dict
    }

    pub fn dim(&self) -> usize {
        self.ann.dim()
    }

    pub fn classifier(&self, label: usize) -> Option<&LinearModel<T>> {
        self.classifiers.get(label).and_then(Option::as_ref)
    }

    pub fn classifier_count(&self) -> usize {
        self.classifiers.iter().filter(|c| c.is_some()).count()
    }

    /// Negatives used to train each label's classifier.
    pub fn negative_counts(&self) -> &[u32] {
        &self.negative_counts
    }

    pub fn point_count(&self) -> usize {
        self.label_of_point.len()
    }

    pub fn ann(&self) -> &Hnsw<T> {
        &self.ann
    }

    /// Labels of the nearest training points, deduplicated, nearest first.
    pub fn shortlist(&self, x: &[T]) -> Result<Vec<usize>> {
        let k = self.params.shortlist_size;
        let nn = self.ann.search(x, k, self.params.ef_search.max(k))?;
        let mut seen = vec![false; self.dict.len()];
        let mut out = Vec::new();
        for n in nn {
            let l = self.label_of_point[n.index] as usize;
            if !seen[l] {
                seen[l] = true;
                out.push(l);
            }
        }
        Ok(out)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::new(MAGIC, VERSION);
        w.u8(T::WIDTH);
        let p = &self.params;
        w.u32(p.ef_search as u32);
        w.u32(p.negatives as u32);
        w.u32(p.shortlist_size as u32);
        w.f64(p.svm.c);
        w.u32(p.svm.max_iter as u32);
        w.f64(p.svm.tol);
        w.u64(p.svm.seed);
        w.f64(p.sparsify);
        w.str(&self.dict.to_tsv());
        w.bytes(&self.ann.to_bytes());
        w.u64(self.label_of_point.len() as u64);
        for &l in &self.label_of_point {
            w.u32(l);
        }
        for (c, &n) in self.classifiers.iter().zip(&self.negative_counts) {
            w.u32(n);
            match c {
                Some(m) => {
                    w.u8(1);
                    m.write(&mut w);
                }
                None => w.u8(0),
            }
        }
        w.finish()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::open(bytes, MAGIC, VERSION)?;
        r.expect_width::<T>()?;
        let mut params = Agent3Params {
            ef_search: r.u32()? as usize,
            negatives: r.u32()? as usize,
            shortlist_size: r.u32()? as usize,
            ..Default::default()
        };
        params.svm.c = r.f64()?;
        params.svm.max_iter = r.u32()? as usize;
        params.svm.tol = r.f64()?;
        params.svm.seed = r.u64()?;
        params.sparsify = r.f64()?;
        let dict = LabelDictionary::from_tsv(&r.str()?)?;
        let ann = Hnsw::from_bytes(r.bytes()?, 0)?;
        params.hnsw = *ann.params();
        let n = r.len()?;
        if n != ann.len() {
            return Err(Error::Corrupt(format!(
                "{n} point labels for {} indexed points",
                ann.len()
            )));
        }
        let mut label_of_point = Vec::with_capacity(n);
        for _ in 0..n {
            let l = r.u32()?;
            if l as usize >= dict.len() {
                return Err(Error::Corrupt(format!("point label {l} outside the dictionary")));
            }
            label_of_point.push(l);
        }
        let mut classifiers = Vec::with_capacity(dict.len());
        let mut negative_counts = Vec::with_capacity(dict.len());
        for _ in 0..dict.len() {
            negative_counts.push(r.u32()?);
            classifiers.push(match r.u8()? {
                0 => None,
                1 => {
                    let m = LinearModel::read(&mut r)?;
                    if m.dim() != ann.dim() {
                        return Err(Error::Corrupt("classifier dimension differs from the index".into()));
                    }
                    Some(m)
                }
                x => return Err(Error::Corrupt(format!("bad classifier tag {x}"))),
            });
        }
        r.finish()?;
        Ok(Agent3Model {
            params,
            dict,
            classifiers,
            ann,
            label_of_point,
            negative_counts,
        })
    }
}

/// Ranked ECs for `x`: shortlist labels scored by the sigmoid of their
/// classifier's decision value, best first (ties by canonical EC order).
/// Prediction mode keeps `count_hint` entries, recommendation mode up to
/// [`RECOMMENDATION_LIMIT`].
pub fn predict_agent3<T: Real>(
    model: &Agent3Model<T>,
    x: &[T],
    mode: Mode,
    count_hint: usize,
) -> Result<Vec<(EcNumber, f64)>> {
    let mut scored = Vec::new();
    for l in model.shortlist(x)? {
        if let Some(c) = model.classifier(l) {
            let z = c.decision(x)?.to_f64_lossy();
            let ec = model.dict.ec(l).expect("shortlist label in dictionary");
            scored.push((ec, 1.0 / (1.0 + (-z).exp())));
        }
    }
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    scored.truncate(match mode {
        Mode::Prediction => count_hint.max(1),
        Mode::Recommendation => RECOMMENDATION_LIMIT,
    });
    Ok(scored)
}
