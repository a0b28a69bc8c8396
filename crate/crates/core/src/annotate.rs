//! Query-time annotation shared by the command line and the job service:
//! FASTA in, prediction TSV out.

use rayon::prelude::*;

use crate::agents::Mode;
use crate::bundle::Bundle;
use crate::dataset::parse_fasta_str;
use crate::embedding::{one_hot_encode, EmbeddingKind};
use crate::error::{Error, Result};
use crate::eval::{format_error_row, format_prediction_row, PREDICTION_HEADER};
use crate::integrator::integrate;
use crate::record::{normalize_sequence, Prediction};
use crate::{EmbeddingTable, Scalar};

#[derive(Debug, Clone, PartialEq)]
pub struct Annotation {
    /// Header plus one row per query, in input order.
    pub tsv: String,
    pub rows: usize,
    /// Rows that carry an error message instead of a prediction.
    pub failed: usize,
}

/// Embedding for one query: computed for one-hot bundles, looked up in
/// `external` otherwise.
fn query_vector(bundle: &Bundle, id: &str, seq: &str, external: Option<&EmbeddingTable>) -> Result<Vec<Scalar>> {
    match (&bundle.embedding, external) {
        (EmbeddingKind::OneHot { max_len }, None) => Ok(one_hot_encode(seq, *max_len)),
        (_, Some(t)) => Ok(t.require(id)?.to_vec()),
        (kind, None) => Err(Error::MissingEmbedding {
            table: kind.to_string(),
            id: id.to_string(),
        }),
    }
}

pub fn predict_one(
    bundle: &Bundle,
    id: &str,
    raw_seq: &str,
    mode: Mode,
    external: Option<&EmbeddingTable>,
) -> Result<Prediction> {
    let (seq, _) = normalize_sequence(raw_seq);
    let x = query_vector(bundle, id, &seq, external)?;
    let ev = bundle.evidence(id, &seq, &x)?;
    Ok(integrate(&ev, bundle.policy(), mode))
}

/// Annotates `(id, sequence)` pairs. Per-query failures become error rows;
/// only a mismatched embedding table fails the whole call.
pub fn annotate(
    bundle: &Bundle,
    entries: &[(String, String)],
    mode: Mode,
    external: Option<&EmbeddingTable>,
) -> Result<Annotation> {
    if let Some(t) = external {
        if t.kind() != &bundle.embedding || t.dim() != bundle.dim() {
            return Err(Error::invalid(format!(
                "embedding table is {} (dim {}), bundle expects {} (dim {})",
                t.kind(),
                t.dim(),
                bundle.embedding,
                bundle.dim()
            )));
        }
    }
    let rows: Vec<(String, bool)> = entries
        .par_iter()
        .map(|(id, seq)| match predict_one(bundle, id, seq, mode, external) {
            Ok(p) => (format_prediction_row(&p), false),
            Err(e) => (format_error_row(id, &e.to_string()), true),
        })
        .collect();
    let mut tsv = String::from(PREDICTION_HEADER);
    tsv.push('\n');
    let mut failed = 0;
    for (row, bad) in &rows {
        tsv.push_str(row);
        tsv.push('\n');
        failed += usize::from(*bad);
    }
    Ok(Annotation {
        tsv,
        rows: rows.len(),
        failed,
    })
}

/// Parses FASTA text, then [`annotate`]s it.
pub fn annotate_fasta(
    bundle: &Bundle,
    fasta: &str,
    mode: Mode,
    external: Option<&EmbeddingTable>,
) -> Result<Annotation> {
    let entries = parse_fasta_str(fasta)?;
    annotate(bundle, &entries, mode, external)
}
