use std::fmt;
use std::str::FromStr;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::ec::EcNumber;

/// Amino-acid alphabet, in one-hot column order.
pub const ALPHABET: &[u8; 25] = b"ACDEFGHIKLMNPQRSTVWYBZXUO";

/// Maximum number of EC numbers carried by one enzyme.
pub const MAX_FUNCTIONS: usize = 8;

/// Position of `residue` in [`ALPHABET`].
pub fn residue_index(residue: u8) -> Option<usize> {
    ALPHABET.iter().position(|&a| a == residue)
}

/// Uppercases, drops whitespace and maps symbols outside the alphabet to
/// `X`. Returns the cleaned sequence and the number of replaced symbols.
pub fn normalize_sequence(raw: &str) -> (String, usize) {
    let mut replaced = 0;
    let seq = raw
        .chars()
        .filter(|c| !c.is_whitespace())
        .map(|c| {
            let up = c.to_ascii_uppercase();
            if up.is_ascii() && residue_index(up as u8).is_some() {
                up
            } else {
                replaced += 1;
                'X'
            }
        })
        .collect();
    (seq, replaced)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProteinRecord {
    pub id: String,
    pub name: String,
    pub seq: String,
    pub is_enzyme: bool,
    pub function_count: u8,
    pub ecs: Vec<EcNumber>,
    pub date_integrated: NaiveDate,
    pub date_sequence_update: NaiveDate,
}

impl ProteinRecord {
    /// Latest of the two annotation dates.
    pub fn last_touched(&self) -> NaiveDate {
        self.date_integrated.max(self.date_sequence_update)
    }

    /// Checks the record-level invariants.
    pub fn validate(&self) -> Result<(), String> {
        if self.seq.is_empty() {
            return Err("empty sequence".into());
        }
        if let Some(bad) = self.seq.bytes().find(|&b| residue_index(b).is_none()) {
            return Err(format!("residue {:?} outside the alphabet", bad as char));
        }
        if !self.is_enzyme && !self.ecs.is_empty() {
            return Err("non-enzyme carries EC numbers".into());
        }
        if self.is_enzyme && (self.ecs.is_empty() || self.ecs.len() > MAX_FUNCTIONS) {
            return Err(format!(
                "enzyme must carry 1..={MAX_FUNCTIONS} EC numbers, found {}",
                self.ecs.len()
            ));
        }
        if usize::from(self.function_count) != self.ecs.len() {
            return Err(format!(
                "function_count {} does not match {} EC numbers",
                self.function_count,
                self.ecs.len()
            ));
        }
        Ok(())
    }
}

/// Which component decided a prediction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Source {
    Alignment,
    Agents,
    /// Loaded from another tool's output.
    External,
}

impl fmt::Display for Source {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Source::Alignment => "alignment",
            Source::Agents => "agents",
            Source::External => "external",
        })
    }
}

impl FromStr for Source {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "alignment" => Ok(Source::Alignment),
            "agents" => Ok(Source::Agents),
            "external" => Ok(Source::External),
            other => Err(format!("unknown source {other:?}")),
        }
    }
}

/// Integrated output for one query sequence.
///
/// `is_enzyme == None` marks an abstention (the tool produced no call);
/// evaluators count these as unclassified samples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub id: String,
    pub is_enzyme: Option<bool>,
    pub function_count: u8,
    pub ranked_ecs: Vec<(EcNumber, f64)>,
    pub source: Source,
}

impl Prediction {
    pub fn abstain(id: impl Into<String>, source: Source) -> Self {
        Prediction {
            id: id.into(),
            is_enzyme: None,
            function_count: 0,
            ranked_ecs: Vec::new(),
            source,
        }
    }

    pub fn ecs(&self) -> impl Iterator<Item = EcNumber> + '_ {
        self.ranked_ecs.iter().map(|&(ec, _)| ec)
    }
}
