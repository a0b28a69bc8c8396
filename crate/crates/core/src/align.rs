//! Sequence-similarity fallback: k-mer seeded candidate retrieval followed
//! by banded Smith-Waterman scoring, and label transfer from the best hit.

use std::collections::HashMap;
use std::io::BufRead;

use log::warn;
use serde::{Deserialize, Serialize};

use crate::codec::{Reader, Writer};
use crate::ec::{format_ec_list, parse_ec_list, EcNumber};
use crate::error::{Error, Result};
use crate::record::{normalize_sequence, residue_index, ProteinRecord, ALPHABET};

const MAGIC: &[u8; 4] = b"ECKI";
const VERSION: u16 = 1;

pub const MATCH: i32 = 1;
pub const MISMATCH: i32 = -1;
/// A gap of length `L` costs `GAP_OPEN + L * GAP_EXTEND`.
pub const GAP_OPEN: i32 = 11;
pub const GAP_EXTEND: i32 = 1;
/// Candidates scored with the full aligner per query.
pub const MAX_CANDIDATES: usize = 50;
pub const DEFAULT_MIN_IDENTITY: f64 = 0.4;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CatalogEntry {
    pub id: String,
    pub seq: String,
    pub is_enzyme: bool,
    pub function_count: u8,
    pub ecs: Vec<EcNumber>,
}

#[derive(Debug, Clone)]
pub struct KmerIndex {
    k: usize,
    postings: HashMap<u64, Vec<(u32, u32)>>,
    catalog: Vec<CatalogEntry>,
    /// Catalog rows too short to carry any k-mer.
    short: Vec<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hit {
    pub id: String,
    pub identity: f64,
    pub aligned_len: usize,
    pub score: f64,
    pub is_enzyme: bool,
    pub function_count: u8,
    pub ecs: Vec<EcNumber>,
}

fn encode(seq: &[u8]) -> Vec<u8> {
    seq.iter()
        .map(|&c| residue_index(c).unwrap_or_else(|| residue_index(b'X').expect("X in alphabet")) as u8)
        .collect()
}

fn kmer_codes(codes: &[u8], k: usize) -> impl Iterator<Item = (usize, u64)> + '_ {
    let base = ALPHABET.len() as u64;
    codes
        .windows(k)
        .enumerate()
        .map(move |(i, w)| (i, w.iter().fold(0u64, |acc, &c| acc * base + u64::from(c))))
}

impl KmerIndex {
    pub fn new(k: usize, catalog: Vec<CatalogEntry>) -> Result<Self> {
        if !(3..=7).contains(&k) {
            return Err(Error::invalid(format!("k-mer size must be in 3..=7, got {k}")));
        }
        let mut postings: HashMap<u64, Vec<(u32, u32)>> = HashMap::new();
        let mut short = Vec::new();
        for (r, e) in catalog.iter().enumerate() {
            if e.seq.len() < k {
                short.push(r as u32);
                continue;
            }
            for (off, code) in kmer_codes(&encode(e.seq.as_bytes()), k) {
                postings.entry(code).or_default().push((r as u32, off as u32));
            }
        }
        if !short.is_empty() {
            warn!(
                "{} indexed sequences are shorter than k={k} and carry no seeds",
                short.len()
            );
        }
        Ok(KmerIndex {
            k,
            postings,
            catalog,
            short,
        })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn catalog(&self) -> &[CatalogEntry] {
        &self.catalog
    }

    pub fn short_sequences(&self) -> impl Iterator<Item = &str> {
        self.short.iter().map(|&r| self.catalog[r as usize].id.as_str())
    }

    pub fn posting_count(&self) -> usize {
        self.postings.values().map(Vec::len).sum()
    }

    /// Postings for one k-mer as (id, offset).
    pub fn postings(&self, kmer: &str) -> Vec<(&str, usize)> {
        if kmer.len() != self.k {
            return Vec::new();
        }
        let code = kmer_codes(&encode(kmer.as_bytes()), self.k).next().map(|(_, c)| c);
        code.and_then(|c| self.postings.get(&c))
            .map(|v| {
                v.iter()
                    .map(|&(r, o)| (self.catalog[r as usize].id.as_str(), o as usize))
                    .collect()
            })
            .unwrap_or_default()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::new(MAGIC, VERSION);
        w.u8(self.k as u8);
        w.u64(self.catalog.len() as u64);
        for e in &self.catalog {
            w.str(&e.id);
            w.str(&e.seq);
            w.u8(u8::from(e.is_enzyme));
            w.u8(e.function_count);
            w.str(&format_ec_list(&e.ecs));
        }
        w.finish()
    }

    /// Postings are rebuilt from the stored catalog.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::open(bytes, MAGIC, VERSION)?;
        let k = r.u8()? as usize;
        let n = r.len()?;
        let mut catalog = Vec::with_capacity(n.min(1 << 20));
        for _ in 0..n {
            let id = r.str()?;
            let seq = r.str()?;
            let is_enzyme = match r.u8()? {
                0 => false,
                1 => true,
                x => return Err(Error::Corrupt(format!("bad enzyme flag {x}"))),
            };
            let function_count = r.u8()?;
            let ecs = parse_ec_list(&r.str()?)?;
            catalog.push(CatalogEntry {
                id,
                seq,
                is_enzyme,
                function_count,
                ecs,
            });
        }
        r.finish()?;
        KmerIndex::new(k, catalog)
    }
}

pub fn build_kmer_index(records: &[ProteinRecord], k: usize) -> Result<KmerIndex> {
    let catalog = records
        .iter()
        .map(|r| CatalogEntry {
            id: r.id.clone(),
            seq: r.seq.clone(),
            is_enzyme: r.is_enzyme,
            function_count: r.function_count,
            ecs: r.ecs.clone(),
        })
        .collect();
    KmerIndex::new(k, catalog)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Alignment {
    pub score: i32,
    pub matches: usize,
    /// Alignment columns, gaps included.
    pub length: usize,
}

impl Alignment {
    pub fn identity(&self) -> f64 {
        if self.length == 0 {
            0.0
        } else {
            self.matches as f64 / self.length as f64
        }
    }
}

/// Band half-width used for a pair of sequence lengths.
pub fn band_width(a_len: usize, b_len: usize) -> usize {
    2 * a_len.abs_diff(b_len) + 16
}

// traceback bits: low two = H source, bit 2 = E extends, bit 3 = F extends
const FROM_STOP: u8 = 0;
const FROM_DIAG: u8 = 1;
const FROM_E: u8 = 2;
const FROM_F: u8 = 3;

/// Local alignment with affine gaps restricted to cells with `|i - j| <= band`.
/// Ties: the first maximal cell in row-major order is the end point, and the
/// traceback prefers diagonal, then gap-in-a, then gap-in-b moves.
pub fn smith_waterman_banded(a: &[u8], b: &[u8], band: usize) -> Alignment {
    let (n, m) = (a.len(), b.len());
    if n == 0 || m == 0 {
        return Alignment {
            score: 0,
            matches: 0,
            length: 0,
        };
    }
    let width = 2 * band + 1;
    let idx = |i: usize, j: usize| -> Option<usize> {
        // row i (1-based), column j (1-based)
        let off = j as isize - i as isize + band as isize;
        (off >= 0 && (off as usize) < width).then(|| i * width + off as usize)
    };
    const NEG: i32 = i32::MIN / 4;
    let cells = (n + 1) * width;
    let mut h = vec![0i32; cells];
    let mut e = vec![NEG; cells]; // gap in a: move along j
    let mut f = vec![NEG; cells]; // gap in b: move along i
    let mut tb = vec![0u8; cells];
    let open = GAP_OPEN + GAP_EXTEND;
    let (mut best, mut best_at) = (0i32, (0usize, 0usize));
    for i in 1..=n {
        let lo = i.saturating_sub(band).max(1);
        let hi = (i + band).min(m);
        for j in lo..=hi {
            let c = idx(i, j).expect("in band");
            let mut bits = 0u8;
            // E: from (i, j-1)
            let mut ev = NEG;
            if let Some(l) = idx(i, j - 1).filter(|_| j > 1) {
                let ext = e[l] - GAP_EXTEND;
                let opn = h[l] - open;
                if ext > opn {
                    ev = ext;
                    bits |= 4;
                } else {
                    ev = opn;
                }
            }
            // F: from (i-1, j)
            let mut fv = NEG;
            if let Some(u) = idx(i - 1, j).filter(|_| i > 1) {
                let ext = f[u] - GAP_EXTEND;
                let opn = h[u] - open;
                if ext > opn {
                    fv = ext;
                    bits |= 8;
                } else {
                    fv = opn;
                }
            }
            let diag = if i > 1 && j > 1 {
                idx(i - 1, j - 1).map_or(0, |d| h[d])
            } else {
                0
            };
            let s = if a[i - 1] == b[j - 1] { MATCH } else { MISMATCH };
            let dv = diag + s;
            let (mut hv, mut from) = (0, FROM_STOP);
            if dv > hv {
                hv = dv;
                from = FROM_DIAG;
            }
            if ev > hv {
                hv = ev;
                from = FROM_E;
            }
            if fv > hv {
                hv = fv;
                from = FROM_F;
            }
            h[c] = hv;
            e[c] = ev;
            f[c] = fv;
            tb[c] = bits | from;
            if hv > best {
                best = hv;
                best_at = (i, j);
            }
        }
    }
    if best == 0 {
        return Alignment {
            score: 0,
            matches: 0,
            length: 0,
        };
    }
    // traceback; state 0 = H, 1 = E, 2 = F
    let (mut i, mut j) = best_at;
    let (mut matches, mut length) = (0usize, 0usize);
    let mut state = 0u8;
    loop {
        let c = idx(i, j).expect("traceback stays in band");
        match state {
            0 => match tb[c] & 3 {
                FROM_STOP => break,
                FROM_DIAG => {
                    matches += usize::from(a[i - 1] == b[j - 1]);
                    length += 1;
                    i -= 1;
                    j -= 1;
                    if i == 0 || j == 0 {
                        break;
                    }
                }
                FROM_E => state = 1,
                _ => state = 2,
            },
            1 => {
                length += 1;
                if tb[c] & 4 == 0 {
                    state = 0;
                }
                j -= 1;
            }
            _ => {
                length += 1;
                if tb[c] & 8 == 0 {
                    state = 0;
                }
                i -= 1;
            }
        }
    }
    Alignment {
        score: best,
        matches,
        length,
    }
}

pub fn smith_waterman(a: &[u8], b: &[u8]) -> Alignment {
    smith_waterman_banded(a, b, a.len().max(b.len()))
}

/// Best catalog hit for a query, if its identity reaches `min_identity`.
pub fn align_query(index: &KmerIndex, query: &str, min_identity: f64, min_seed_hits: usize) -> Option<Hit> {
    let (q, _) = normalize_sequence(query);
    if q.len() < index.k {
        return None;
    }
    let mut seen: Vec<u64> = kmer_codes(&encode(q.as_bytes()), index.k).map(|(_, c)| c).collect();
    seen.sort_unstable();
    seen.dedup();
    let mut shared: HashMap<u32, usize> = HashMap::new();
    for code in &seen {
        if let Some(post) = index.postings.get(code) {
            let mut last = u32::MAX;
            // postings are grouped by record, so one increment per record
            for &(r, _) in post {
                if r != last {
                    *shared.entry(r).or_default() += 1;
                    last = r;
                }
            }
        }
    }
    let mut cands: Vec<(u32, usize)> = shared.into_iter().filter(|&(_, c)| c >= min_seed_hits.max(1)).collect();
    cands.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
    cands.truncate(MAX_CANDIDATES);

    let mut best: Option<(Alignment, &CatalogEntry)> = None;
    for (r, _) in cands {
        let e = &index.catalog[r as usize];
        let aln = smith_waterman_banded(q.as_bytes(), e.seq.as_bytes(), band_width(q.len(), e.seq.len()));
        if aln.score <= 0 {
            continue;
        }
        let better = match &best {
            None => true,
            Some((b, be)) => aln.score > b.score || (aln.score == b.score && e.id < be.id),
        };
        if better {
            best = Some((aln, e));
        }
    }
    let (aln, e) = best?;
    (aln.identity() >= min_identity).then(|| Hit {
        id: e.id.clone(),
        identity: aln.identity(),
        aligned_len: aln.length,
        score: f64::from(aln.score),
        is_enzyme: e.is_enzyme,
        function_count: e.function_count,
        ecs: e.ecs.clone(),
    })
}

/// The hit record's labels, copied verbatim.
pub fn transfer_labels(hit: &Hit) -> (bool, u8, Vec<EcNumber>) {
    (hit.is_enzyme, hit.function_count, hit.ecs.clone())
}

/// Reads 12-column tabular alignment output (query, subject, percent
/// identity, length, mismatches, gap opens, qstart, qend, sstart, send,
/// evalue, bitscore) and keeps the best-scoring subject per query.
/// Subjects are resolved against the index catalog.
pub fn read_external_hits<R: BufRead>(reader: R, index: &KmerIndex, name: &str) -> Result<HashMap<String, Hit>> {
    let by_id: HashMap<&str, &CatalogEntry> = index.catalog.iter().map(|e| (e.id.as_str(), e)).collect();
    let mut out: HashMap<String, Hit> = HashMap::new();
    for (no, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(name, e))?;
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let bad = |message: String| Error::Format {
            file: name.to_string(),
            line: no + 1,
            message,
        };
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 12 {
            return Err(bad(format!("expected 12 columns, found {}", cols.len())));
        }
        let pident: f64 = cols[2]
            .trim()
            .parse()
            .map_err(|_| bad(format!("bad identity {:?}", cols[2])))?;
        let length: usize = cols[3]
            .trim()
            .parse()
            .map_err(|_| bad(format!("bad length {:?}", cols[3])))?;
        let score: f64 = cols[11]
            .trim()
            .parse()
            .map_err(|_| bad(format!("bad bitscore {:?}", cols[11])))?;
        if !(0.0..=100.0).contains(&pident) || !score.is_finite() {
            return Err(bad("identity or score out of range".into()));
        }
        let subject = cols[1].trim();
        let e = by_id
            .get(subject)
            .ok_or_else(|| bad(format!("subject {subject:?} is not in the training catalog")))?;
        let hit = Hit {
            id: e.id.clone(),
            identity: pident / 100.0,
            aligned_len: length,
            score,
            is_enzyme: e.is_enzyme,
            function_count: e.function_count,
            ecs: e.ecs.clone(),
        };
        let query = cols[0].trim().to_string();
        match out.get(&query) {
            Some(h) if h.score > score || (h.score == score && h.id <= hit.id) => {}
            _ => {
                out.insert(query, hit);
            }
        }
    }
    Ok(out)
}
