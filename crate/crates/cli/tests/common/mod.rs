#![allow(dead_code)]

use std::path::Path;
use std::sync::Arc;

use ecannot_core::bundle::{train_bundle, Bundle, TrainConfig};
use ecannot_core::embedding::one_hot_table;
use ecannot_core::synthetic::{synthetic_records, SyntheticSpec};
use ecannot_core::{EmbeddingTable, ProteinRecord};

pub const MAX_LEN: usize = 150;

pub fn small_spec() -> SyntheticSpec {
    SyntheticSpec {
        enzyme_families: 10,
        non_enzyme_families: 6,
        members_per_family: 6,
        ..SyntheticSpec::default()
    }
}

/// A bundle trained on a small synthetic set, plus the records.
pub fn small_bundle() -> (Arc<Bundle>, Vec<ProteinRecord>) {
    let records = synthetic_records(&small_spec());
    let table: EmbeddingTable =
        one_hot_table(records.iter().map(|r| (r.id.as_str(), r.seq.as_str())), MAX_LEN).unwrap();
    let (bundle, _) = train_bundle(&records, &table, &TrainConfig::default()).unwrap();
    (Arc::new(bundle), records)
}

pub fn fasta(records: &[ProteinRecord]) -> String {
    records.iter().map(|r| format!(">{}\n{}\n", r.id, r.seq)).collect()
}

pub fn save(bundle: &Bundle, dir: &Path) {
    bundle.clone().save(dir).unwrap();
}
