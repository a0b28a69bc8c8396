//! Flat-file parsing, preprocessing and chronological benchmark splits.
//!
//! The flat-file contract is a tab-separated table with the header
//! `id name ec is_enzyme function_count seq date_integrated date_seq_update`
//! (any column order, optionally gzip-compressed). The `ec` column holds a
//! semicolon-delimited list of EC numbers.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, Read};
use std::path::Path;

use chrono::NaiveDate;
use flate2::read::MultiGzDecoder;
use serde::{Deserialize, Serialize};

use crate::ec::{build_label_dictionary, format_ec_list, parse_ec_list, LabelDictionary};
use crate::error::{Error, Result};
use crate::record::{normalize_sequence, ProteinRecord};

pub const FLATFILE_COLUMNS: [&str; 8] = [
    "id",
    "name",
    "ec",
    "is_enzyme",
    "function_count",
    "seq",
    "date_integrated",
    "date_seq_update",
];

/// Default end of the training period.
pub fn default_cutoff() -> NaiveDate {
    NaiveDate::from_ymd_opt(2018, 2, 28).expect("valid date")
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Reject {
    pub line: usize,
    pub id: String,
    pub reason: String,
}

#[derive(Debug, Clone, Default)]
pub struct FlatFile {
    pub records: Vec<ProteinRecord>,
    pub rejects: Vec<Reject>,
    /// Rows in which residues outside the alphabet were replaced by `X`.
    pub remapped_rows: usize,
}

/// Opens a file, transparently decompressing gzip.
pub fn open_maybe_gzip(path: &Path) -> Result<Box<dyn BufRead>> {
    let mut file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut magic = [0u8; 2];
    let n = file.read(&mut magic).map_err(|e| Error::io(path, e))?;
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    if n == 2 && magic == [0x1f, 0x8b] {
        Ok(Box::new(BufReader::new(MultiGzDecoder::new(file))))
    } else {
        Ok(Box::new(BufReader::new(file)))
    }
}

pub fn parse_flatfile(path: &Path) -> Result<FlatFile> {
    let reader = open_maybe_gzip(path)?;
    read_flatfile(reader, &path.display().to_string())
}

fn parse_date(s: &str) -> std::result::Result<NaiveDate, String> {
    NaiveDate::parse_from_str(s.trim(), "%Y-%m-%d").map_err(|_| format!("bad date {s:?}"))
}

fn parse_flag(s: &str) -> std::result::Result<bool, String> {
    match s.trim().to_ascii_lowercase().as_str() {
        "1" | "true" | "yes" => Ok(true),
        "0" | "false" | "no" => Ok(false),
        other => Err(format!("bad is_enzyme flag {other:?}")),
    }
}

pub fn read_flatfile<R: BufRead>(reader: R, name: &str) -> Result<FlatFile> {
    let mut lines = reader.lines().enumerate();
    let header = loop {
        match lines.next() {
            Some((i, line)) => {
                let line = line.map_err(|e| Error::io(name, e))?;
                if !line.trim().is_empty() {
                    break (i, line);
                }
            }
            None => return Ok(FlatFile::default()),
        }
    };
    let names: Vec<&str> = header.1.split('\t').map(str::trim).collect();
    let mut col = [0usize; 8];
    for (slot, wanted) in col.iter_mut().zip(FLATFILE_COLUMNS) {
        *slot = names.iter().position(|&n| n == wanted).ok_or_else(|| Error::Format {
            file: name.to_string(),
            line: header.0 + 1,
            message: format!("missing column {wanted:?}"),
        })?;
    }
    let width = names.len();

    let mut out = FlatFile::default();
    for (i, line) in lines {
        let line = line.map_err(|e| Error::io(name, e))?;
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() < width {
            return Err(Error::Format {
                file: name.to_string(),
                line: line_no,
                message: format!("expected {width} columns, found {}", fields.len()),
            });
        }
        let get = |k: usize| fields[col[k]].trim();
        let id = get(0).to_string();
        match build_row(&get) {
            Ok((record, remapped)) => {
                if remapped > 0 {
                    log::warn!("{name}:{line_no}: {remapped} residues of {id} mapped to X");
                    out.remapped_rows += 1;
                }
                out.records.push(record);
            }
            Err(reason) => out.rejects.push(Reject {
                line: line_no,
                id,
                reason,
            }),
        }
    }
    Ok(out)
}

fn build_row<'a>(get: &dyn Fn(usize) -> &'a str) -> std::result::Result<(ProteinRecord, usize), String> {
    let id = get(0);
    if id.is_empty() {
        return Err("empty id".into());
    }
    let ecs = parse_ec_list(get(2)).map_err(|e| e.to_string())?;
    let is_enzyme = parse_flag(get(3))?;
    let (seq, remapped) = normalize_sequence(get(5));
    let record = ProteinRecord {
        id: id.to_string(),
        name: get(1).to_string(),
        seq,
        is_enzyme,
        function_count: ecs.len().min(u8::MAX as usize) as u8,
        ecs,
        date_integrated: parse_date(get(6))?,
        date_sequence_update: parse_date(get(7))?,
    };
    record.validate()?;
    Ok((record, remapped))
}

/// Serializes records in the flat-file contract.
pub fn write_flatfile(records: &[ProteinRecord]) -> String {
    let mut out = FLATFILE_COLUMNS.join("\t");
    out.push('\n');
    for r in records {
        out.push_str(&format!(
            "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\n",
            r.id,
            r.name,
            format_ec_list(&r.ecs),
            u8::from(r.is_enzyme),
            r.function_count,
            r.seq,
            r.date_integrated.format("%Y-%m-%d"),
            r.date_sequence_update.format("%Y-%m-%d"),
        ));
    }
    out
}

pub fn write_rejects(rejects: &[Reject]) -> String {
    let mut out = String::from("line\tid\treason\n");
    for r in rejects {
        out.push_str(&format!("{}\t{}\t{}\n", r.line, r.id, r.reason));
    }
    out
}

pub fn parse_fasta(path: &Path) -> Result<Vec<(String, String)>> {
    let mut text = String::new();
    open_maybe_gzip(path)?
        .read_to_string(&mut text)
        .map_err(|e| Error::io(path, e))?;
    parse_fasta_str(&text)
}

/// Parses FASTA text. The id is the header up to the first whitespace.
pub fn parse_fasta_str(text: &str) -> Result<Vec<(String, String)>> {
    let mut entries: Vec<(String, String, usize)> = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim_end_matches('\r');
        if let Some(header) = line.strip_prefix('>') {
            let id = header.split_whitespace().next().unwrap_or("").to_string();
            if id.is_empty() {
                return Err(Error::Format {
                    file: "FASTA".into(),
                    line: i + 1,
                    message: "header without an id".into(),
                });
            }
            entries.push((id, String::new(), i + 1));
        } else if !line.trim().is_empty() {
            let Some(last) = entries.last_mut() else {
                return Err(Error::Format {
                    file: "FASTA".into(),
                    line: i + 1,
                    message: "sequence data before the first header".into(),
                });
            };
            last.1.extend(
                line.chars()
                    .filter(|c| !c.is_whitespace())
                    .map(|c| c.to_ascii_uppercase()),
            );
        }
    }
    if let Some((id, _, line)) = entries.iter().find(|e| e.1.is_empty()) {
        return Err(Error::Format {
            file: "FASTA".into(),
            line: *line,
            message: format!("empty sequence for {id}"),
        });
    }
    let mut seen = HashSet::new();
    let mut dups = BTreeSet::new();
    for (id, _, _) in &entries {
        if !seen.insert(id.as_str()) {
            dups.insert(id.clone());
        }
    }
    if !dups.is_empty() {
        return Err(Error::DuplicateIds(dups.into_iter().collect()));
    }
    Ok(entries.into_iter().map(|(id, seq, _)| (id, seq)).collect())
}

/// Per-step counts from [`preprocess`].
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PreprocessReport {
    pub raw: usize,
    /// Ids dropped because their sequence changed between records.
    pub changed_seq: usize,
    /// Records removed with those ids.
    pub changed_seq_records: usize,
    /// Records removed as sequence duplicates.
    pub dedup: usize,
    /// Records whose EC list was rewritten (repeats removed).
    pub ec_canonicalized: usize,
    /// Records whose function_count was reset from the EC list.
    pub count_fixed: usize,
    pub distinct_ec: usize,
    pub clean: usize,
}

impl PreprocessReport {
    pub fn removed(&self) -> usize {
        self.changed_seq_records + self.dedup
    }

    pub fn to_tsv(&self) -> String {
        format!(
            "step\tcount\nraw\t{}\nchanged_seq_ids\t{}\nchanged_seq_records\t{}\ndedup\t{}\nec_canonicalized\t{}\ncount_fixed\t{}\ndistinct_ec\t{}\nclean\t{}\n",
            self.raw,
            self.changed_seq,
            self.changed_seq_records,
            self.dedup,
            self.ec_canonicalized,
            self.count_fixed,
            self.distinct_ec,
            self.clean
        )
    }
}

/// Runs the preprocessing steps in order and returns the clean records,
/// the per-step report and the label dictionary over the clean records.
///
/// 1. drop every record of an id whose sequence differs between records;
/// 2. keep one record per sequence (earliest `date_integrated`, then id);
/// 3. canonicalize EC lists and trim text fields;
/// 4. and 5. assign dense labels and emit the dictionary;
/// 6. set `function_count` from the EC list.
pub fn preprocess(records: Vec<ProteinRecord>) -> (Vec<ProteinRecord>, PreprocessReport, LabelDictionary) {
    let mut report = PreprocessReport {
        raw: records.len(),
        ..Default::default()
    };

    let mut seqs_by_id: HashMap<&str, HashSet<&str>> = HashMap::new();
    for r in &records {
        seqs_by_id.entry(&r.id).or_default().insert(&r.seq);
    }
    let changed: HashSet<String> = seqs_by_id
        .into_iter()
        .filter(|(_, s)| s.len() > 1)
        .map(|(id, _)| id.to_string())
        .collect();
    report.changed_seq = changed.len();
    let before = records.len();
    let records: Vec<ProteinRecord> = records.into_iter().filter(|r| !changed.contains(&r.id)).collect();
    report.changed_seq_records = before - records.len();

    // earliest record per sequence
    let mut keeper: HashMap<&str, usize> = HashMap::new();
    for (i, r) in records.iter().enumerate() {
        keeper
            .entry(&r.seq)
            .and_modify(|k| {
                let cur = &records[*k];
                if (r.date_integrated, &r.id, i) < (cur.date_integrated, &cur.id, *k) {
                    *k = i;
                }
            })
            .or_insert(i);
    }
    let keep: HashSet<usize> = keeper.into_values().collect();
    report.dedup = records.len() - keep.len();
    let mut clean: Vec<ProteinRecord> = records
        .into_iter()
        .enumerate()
        .filter(|(i, _)| keep.contains(i))
        .map(|(_, r)| r)
        .collect();

    for r in &mut clean {
        r.id = r.id.trim().to_string();
        r.name = r.name.trim().to_string();
        let mut seen = HashSet::new();
        let before = r.ecs.len();
        r.ecs.retain(|ec| seen.insert(*ec));
        if r.ecs.len() != before {
            report.ec_canonicalized += 1;
        }
        let count = r.ecs.len() as u8;
        if r.function_count != count {
            report.count_fixed += 1;
            r.function_count = count;
        }
    }

    let dict = build_label_dictionary(&clean);
    report.distinct_ec = dict.len();
    report.clean = clean.len();
    (clean, report, dict)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Task {
    EnzymeOrNot,
    FunctionCount,
    EcNumber,
}

impl Task {
    pub const ALL: [Task; 3] = [Task::EnzymeOrNot, Task::FunctionCount, Task::EcNumber];

    pub fn short_name(&self) -> &'static str {
        match self {
            Task::EnzymeOrNot => "ds1",
            Task::FunctionCount => "ds2",
            Task::EcNumber => "ds3",
        }
    }

    pub fn enzymes_only(&self) -> bool {
        !matches!(self, Task::EnzymeOrNot)
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Task::EnzymeOrNot => "enzyme",
            Task::FunctionCount => "count",
            Task::EcNumber => "ec",
        })
    }
}

impl std::str::FromStr for Task {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "enzyme" | "ds1" | "1" => Ok(Task::EnzymeOrNot),
            "count" | "ds2" | "2" => Ok(Task::FunctionCount),
            "ec" | "ds3" | "3" => Ok(Task::EcNumber),
            other => Err(format!("unknown task {other:?} (expected enzyme, count or ec)")),
        }
    }
}

/// A preprocessed database release.
#[derive(Debug, Clone)]
pub struct Snapshot {
    pub label: String,
    /// Release date; every record is dated on or before it.
    pub date: NaiveDate,
    pub records: Vec<ProteinRecord>,
}

#[derive(Debug, Clone)]
pub struct DatasetSplit {
    pub task: Task,
    pub train: Vec<ProteinRecord>,
    pub test: Vec<ProteinRecord>,
    /// Later-snapshot records dropped because the training set holds
    /// their sequence.
    pub excluded_shared: usize,
    /// Later-snapshot records with a new sequence but no date after the cutoff.
    pub excluded_stale: usize,
}

impl DatasetSplit {
    /// Errors if any sequence appears on both sides.
    pub fn assert_no_leakage(&self) -> Result<()> {
        let train: HashSet<&str> = self.train.iter().map(|r| r.seq.as_str()).collect();
        let leaked: Vec<&str> = self
            .test
            .iter()
            .filter(|r| train.contains(r.seq.as_str()))
            .map(|r| r.id.as_str())
            .collect();
        if leaked.is_empty() {
            Ok(())
        } else {
            Err(Error::invalid(format!(
                "{} test records share a training sequence: {}",
                leaked.len(),
                leaked.join(", ")
            )))
        }
    }
}

pub fn chronological_split(train: &Snapshot, test: &Snapshot, task: Task) -> Result<DatasetSplit> {
    if test.date <= train.date {
        return Err(Error::invalid(format!(
            "snapshot {} ({}) must be later than {} ({})",
            test.label, test.date, train.label, train.date
        )));
    }
    if let Some(r) = train.records.iter().find(|r| r.date_integrated > train.date) {
        return Err(Error::invalid(format!(
            "record {} in snapshot {} is dated {} after the snapshot date {}",
            r.id, train.label, r.date_integrated, train.date
        )));
    }
    let keep = |r: &&ProteinRecord| !task.enzymes_only() || r.is_enzyme;
    let train_seqs: HashSet<&str> = train.records.iter().map(|r| r.seq.as_str()).collect();
    let train_part: Vec<ProteinRecord> = train.records.iter().filter(keep).cloned().collect();
    let mut excluded_shared = 0;
    let mut excluded_stale = 0;
    let mut test_part = Vec::new();
    for r in test.records.iter().filter(keep) {
        if train_seqs.contains(r.seq.as_str()) {
            excluded_shared += 1;
        } else if r.last_touched() <= train.date {
            excluded_stale += 1;
        } else {
            test_part.push(r.clone());
        }
    }
    let split = DatasetSplit {
        task,
        train: train_part,
        test: test_part,
        excluded_shared,
        excluded_stale,
    };
    split.assert_no_leakage()?;
    Ok(split)
}

/// Record counts per function count (1..=8), enzymes only.
pub fn function_count_partition(records: &[ProteinRecord]) -> BTreeMap<u8, usize> {
    let mut out = BTreeMap::new();
    for r in records.iter().filter(|r| r.is_enzyme) {
        *out.entry(r.function_count).or_insert(0) += 1;
    }
    out
}

/// Splits off the latest `fraction` of records (by `date_integrated`, then
/// id) as a validation set. Returns `(rest, validation)`.
pub fn holdout_latest(records: &[ProteinRecord], fraction: f64) -> (Vec<ProteinRecord>, Vec<ProteinRecord>) {
    let mut sorted: Vec<&ProteinRecord> = records.iter().collect();
    sorted.sort_by(|a, b| (a.date_integrated, &a.id).cmp(&(b.date_integrated, &b.id)));
    let n_val = ((records.len() as f64) * fraction.clamp(0.0, 1.0)).round() as usize;
    let cut = records.len() - n_val.min(records.len());
    let rest = sorted[..cut].iter().map(|r| (*r).clone()).collect();
    let val = sorted[cut..].iter().map(|r| (*r).clone()).collect();
    (rest, val)
}

/// Counts in two snapshots plus what was added and removed between them.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Delta {
    pub before: usize,
    pub after: usize,
    pub added: usize,
    pub deleted: usize,
}

impl Delta {
    pub fn difference(&self) -> i64 {
        self.after as i64 - self.before as i64
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SnapshotDiff {
    pub records: Delta,
    pub enzyme: Delta,
    pub non_enzyme: Delta,
    pub distinct_ec: Delta,
}

impl SnapshotDiff {
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("item\tbefore\tafter\tdifference\tadded\tdeleted\n");
        for (name, d) in [
            ("records", self.records),
            ("non_enzyme", self.non_enzyme),
            ("enzyme", self.enzyme),
            ("distinct_ec", self.distinct_ec),
        ] {
            out.push_str(&format!(
                "{name}\t{}\t{}\t{}\t{}\t{}\n",
                d.before,
                d.after,
                d.difference(),
                d.added,
                d.deleted
            ));
        }
        out
    }
}

/// Sequence-level comparison of two preprocessed snapshots.
pub fn snapshot_diff(a: &Snapshot, b: &Snapshot) -> SnapshotDiff {
    let by_seq =
        |s: &Snapshot| -> HashMap<String, bool> { s.records.iter().map(|r| (r.seq.clone(), r.is_enzyme)).collect() };
    let sa = by_seq(a);
    let sb = by_seq(b);
    let mut diff = SnapshotDiff::default();
    let tally = |m: &HashMap<String, bool>, enz: Option<bool>| {
        m.values().filter(|&&e| enz.is_none_or(|want| e == want)).count()
    };
    for (slot, enz) in [
        (&mut diff.records, None),
        (&mut diff.enzyme, Some(true)),
        (&mut diff.non_enzyme, Some(false)),
    ] {
        slot.before = tally(&sa, enz);
        slot.after = tally(&sb, enz);
        slot.added = sb
            .iter()
            .filter(|(s, &e)| !sa.contains_key(*s) && enz.is_none_or(|want| e == want))
            .count();
        slot.deleted = sa
            .iter()
            .filter(|(s, &e)| !sb.contains_key(*s) && enz.is_none_or(|want| e == want))
            .count();
    }
    let ecs = |s: &Snapshot| -> HashSet<_> { s.records.iter().flat_map(|r| r.ecs.iter().copied()).collect() };
    let ea = ecs(a);
    let eb = ecs(b);
    diff.distinct_ec = Delta {
        before: ea.len(),
        after: eb.len(),
        added: eb.difference(&ea).count(),
        deleted: ea.difference(&eb).count(),
    };
    diff
}
