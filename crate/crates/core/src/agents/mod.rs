//! The three learning agents: enzyme/non-enzyme KNN, function-count
//! boosted trees, and a shortlisted one-vs-all EC classifier.

mod agent1;
mod agent2;
mod agent3;

pub use agent1::{predict_agent1, train_agent1, Agent1Model, Agent1Params, EXACT_SCAN_LIMIT};
pub use agent2::{predict_agent2, train_agent2, Agent2Model};
pub use agent3::{
    predict_agent3, train_agent3, train_one_vs_all_exhaustive, Agent3Model, Agent3Params, Mode, RECOMMENDATION_LIMIT,
};

use crate::embedding::EmbeddingTable;
use crate::error::Result;
use crate::record::ProteinRecord;
use crate::scalar::Real;

/// Embedding rows for `records`, failing on the first id the table lacks.
fn rows_for<'a, T: Real>(records: &[ProteinRecord], table: &'a EmbeddingTable<T>) -> Result<Vec<&'a [T]>> {
    records.iter().map(|r| table.require(&r.id)).collect()
}
