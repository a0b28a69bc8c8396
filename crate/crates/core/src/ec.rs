//! Enzyme Commission numbers and the dense label dictionary.

use std::cmp::Ordering;
use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::record::ProteinRecord;

/// Highest valid top-level class (7 = translocases).
pub const MAX_TOP_CLASS: u32 = 7;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum EcParseError {
    #[error("empty EC number")]
    Empty,
    #[error("EC number {text:?} has {count} components (at most 4 allowed)")]
    TooManyComponents { text: String, count: usize },
    #[error("EC number {text:?}: component {component:?} is not a positive integer or '-'")]
    BadComponent { text: String, component: String },
    #[error("EC number {text:?}: preliminary serial {component:?} is not supported")]
    Preliminary { text: String, component: String },
    #[error("EC number {text:?}: known level follows an unknown level")]
    NotPrefixComplete { text: String },
    #[error("EC number {text:?}: top class {class} outside 1..=7")]
    TopClass { text: String, class: u32 },
}

/// Four-level EC code. A zero slot means "unknown"; unknown slots only
/// ever follow known ones.
#[derive(Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct EcNumber {
    levels: [u32; 4],
}

impl EcNumber {
    /// The fully unknown code `-.-.-.-`.
    pub const UNKNOWN: EcNumber = EcNumber { levels: [0; 4] };

    /// Builds from explicit levels where `None` is unknown.
    pub fn new(levels: [Option<u32>; 4]) -> std::result::Result<Self, EcParseError> {
        let text = levels
            .iter()
            .map(|l| l.map_or("-".to_string(), |v| v.to_string()))
            .collect::<Vec<_>>()
            .join(".");
        let mut out = [0u32; 4];
        let mut seen_unknown = false;
        for (slot, level) in out.iter_mut().zip(levels) {
            match level {
                Some(0) => {
                    return Err(EcParseError::BadComponent {
                        text,
                        component: "0".into(),
                    })
                }
                Some(v) if seen_unknown => {
                    let _ = v;
                    return Err(EcParseError::NotPrefixComplete { text });
                }
                Some(v) => *slot = v,
                None => seen_unknown = true,
            }
        }
        if out[0] > MAX_TOP_CLASS {
            return Err(EcParseError::TopClass { text, class: out[0] });
        }
        Ok(EcNumber { levels: out })
    }

    pub fn levels(&self) -> [Option<u32>; 4] {
        self.levels.map(|v| if v == 0 { None } else { Some(v) })
    }

    /// Number of known leading levels, 0..=4.
    pub fn completeness_level(&self) -> usize {
        self.levels.iter().take_while(|&&v| v != 0).count()
    }

    pub fn is_complete(&self) -> bool {
        self.completeness_level() == 4
    }
}

pub fn parse_ec(text: &str) -> std::result::Result<EcNumber, EcParseError> {
    text.parse()
}

pub fn format_ec(ec: &EcNumber) -> String {
    ec.to_string()
}

/// Parses a semicolon-delimited EC list. Blank input gives an empty list.
pub fn parse_ec_list(text: &str) -> std::result::Result<Vec<EcNumber>, EcParseError> {
    text.split(';')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(parse_ec)
        .collect()
}

pub fn format_ec_list(ecs: &[EcNumber]) -> String {
    ecs.iter().map(ToString::to_string).collect::<Vec<_>>().join(";")
}

impl FromStr for EcNumber {
    type Err = EcParseError;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        let text = s.trim();
        if text.is_empty() {
            return Err(EcParseError::Empty);
        }
        let parts: Vec<&str> = text.split('.').collect();
        if parts.len() > 4 {
            return Err(EcParseError::TooManyComponents {
                text: text.to_string(),
                count: parts.len(),
            });
        }
        let mut levels = [None; 4];
        for (slot, part) in levels.iter_mut().zip(&parts) {
            let part = part.trim();
            if part == "-" {
                continue;
            }
            if part.starts_with('n') && part.len() > 1 && part[1..].bytes().all(|b| b.is_ascii_digit()) {
                return Err(EcParseError::Preliminary {
                    text: text.to_string(),
                    component: part.to_string(),
                });
            }
            if part.is_empty() || !part.bytes().all(|b| b.is_ascii_digit()) {
                return Err(EcParseError::BadComponent {
                    text: text.to_string(),
                    component: part.to_string(),
                });
            }
            match part.parse::<u32>() {
                Ok(v) if v > 0 => *slot = Some(v),
                _ => {
                    return Err(EcParseError::BadComponent {
                        text: text.to_string(),
                        component: part.to_string(),
                    })
                }
            }
        }
        EcNumber::new(levels).map_err(|e| match e {
            EcParseError::NotPrefixComplete { .. } => EcParseError::NotPrefixComplete { text: text.to_string() },
            EcParseError::TopClass { class, .. } => EcParseError::TopClass {
                text: text.to_string(),
                class,
            },
            other => other,
        })
    }
}

impl fmt::Display for EcNumber {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, &v) in self.levels.iter().enumerate() {
            if i > 0 {
                f.write_str(".")?;
            }
            if v == 0 {
                f.write_str("-")?;
            } else {
                write!(f, "{v}")?;
            }
        }
        Ok(())
    }
}

impl fmt::Debug for EcNumber {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "EC({self})")
    }
}

/// Canonical order: lexicographic on the canonical text form.
impl Ord for EcNumber {
    fn cmp(&self, other: &Self) -> Ordering {
        if self.levels == other.levels {
            return Ordering::Equal;
        }
        self.to_string().cmp(&other.to_string())
    }
}

impl PartialOrd for EcNumber {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Serialize for EcNumber {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for EcNumber {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Bijective map between EC numbers and dense labels `0..len`.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct LabelDictionary {
    ec_to_label: HashMap<EcNumber, usize>,
    label_to_ec: Vec<EcNumber>,
}

impl LabelDictionary {
    /// Labels are assigned in canonical EC order.
    pub fn from_ecs<I: IntoIterator<Item = EcNumber>>(ecs: I) -> Self {
        let distinct: BTreeSet<EcNumber> = ecs.into_iter().collect();
        let label_to_ec: Vec<EcNumber> = distinct.into_iter().collect();
        let ec_to_label = label_to_ec.iter().enumerate().map(|(i, &ec)| (ec, i)).collect();
        LabelDictionary {
            ec_to_label,
            label_to_ec,
        }
    }

    pub fn len(&self) -> usize {
        self.label_to_ec.len()
    }

    pub fn is_empty(&self) -> bool {
        self.label_to_ec.is_empty()
    }

    pub fn label(&self, ec: &EcNumber) -> Option<usize> {
        self.ec_to_label.get(ec).copied()
    }

    pub fn ec(&self, label: usize) -> Option<EcNumber> {
        self.label_to_ec.get(label).copied()
    }

    pub fn contains(&self, ec: &EcNumber) -> bool {
        self.ec_to_label.contains_key(ec)
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, EcNumber)> + '_ {
        self.label_to_ec.iter().copied().enumerate()
    }

    /// Two-column TSV (`ec`, `label`), sorted by label.
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("ec\tlabel\n");
        for (label, ec) in self.iter() {
            out.push_str(&format!("{ec}\t{label}\n"));
        }
        out
    }

    pub fn from_tsv(text: &str) -> Result<Self> {
        let mut label_to_ec = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if i == 0 && line.starts_with("ec\t") || line.trim().is_empty() {
                continue;
            }
            let mut cols = line.split('\t');
            let (Some(ec), Some(label), None) = (cols.next(), cols.next(), cols.next()) else {
                return Err(Error::Format {
                    file: "label dictionary".into(),
                    line: i + 1,
                    message: "expected two columns".into(),
                });
            };
            let label: usize = label.trim().parse().map_err(|_| Error::Format {
                file: "label dictionary".into(),
                line: i + 1,
                message: format!("bad label {label:?}"),
            })?;
            if label != label_to_ec.len() {
                return Err(Error::Format {
                    file: "label dictionary".into(),
                    line: i + 1,
                    message: format!("labels must be contiguous, expected {}", label_to_ec.len()),
                });
            }
            label_to_ec.push(parse_ec(ec)?);
        }
        let ec_to_label: HashMap<_, _> = label_to_ec.iter().enumerate().map(|(i, &e)| (e, i)).collect();
        if ec_to_label.len() != label_to_ec.len() {
            return Err(Error::invalid("label dictionary contains a repeated EC number"));
        }
        Ok(LabelDictionary {
            ec_to_label,
            label_to_ec,
        })
    }
}

/// One label per distinct EC occurring in the records.
pub fn build_label_dictionary(records: &[ProteinRecord]) -> LabelDictionary {
    LabelDictionary::from_ecs(records.iter().flat_map(|r| r.ecs.iter().copied()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ec(s: &str) -> EcNumber {
        s.parse().unwrap()
    }

    #[test]
    fn parses_partial_and_full_codes() {
        assert_eq!(ec("1.14.-.-").levels(), [Some(1), Some(14), None, None]);
        assert_eq!(ec("2.3.1.41").levels(), [Some(2), Some(3), Some(1), Some(41)]);
        assert_eq!(ec("-.-.-.-"), EcNumber::UNKNOWN);
        assert_eq!(ec("3.5.2").levels(), [Some(3), Some(5), Some(2), None]);
    }

    #[test]
    fn formats_canonically() {
        let e = EcNumber::new([Some(1), Some(14), Some(11), Some(38)]).unwrap();
        assert_eq!(format_ec(&e), "1.14.11.38");
        assert_eq!(format_ec(&EcNumber::UNKNOWN), "-.-.-.-");
        assert_eq!(ec("6.1.1.3").to_string(), "6.1.1.3");
        assert_eq!(ec(" 3.5 ").to_string(), "3.5.-.-");
    }

    #[test]
    fn completeness() {
        assert_eq!(ec("1.14.-.-").completeness_level(), 2);
        assert_eq!(EcNumber::UNKNOWN.completeness_level(), 0);
        assert_eq!(ec("2.3.1.41").completeness_level(), 4);
    }

    #[test]
    fn rejects_malformed() {
        assert!(matches!(parse_ec("1.x.1.1"), Err(EcParseError::BadComponent { component, .. }) if component == "x"));
        assert!(matches!(parse_ec("1.0.1.1"), Err(EcParseError::BadComponent { .. })));
        assert!(matches!(parse_ec("1.-1.1.1"), Err(EcParseError::BadComponent { .. })));
        assert!(matches!(parse_ec("1.1.1.n5"), Err(EcParseError::Preliminary { .. })));
        assert!(matches!(
            parse_ec("1.-.1.1"),
            Err(EcParseError::NotPrefixComplete { .. })
        ));
        assert!(matches!(
            parse_ec("8.1.1.1"),
            Err(EcParseError::TopClass { class: 8, .. })
        ));
        assert!(matches!(
            parse_ec("1.1.1.1.1"),
            Err(EcParseError::TooManyComponents { .. })
        ));
        assert!(matches!(parse_ec(""), Err(EcParseError::Empty)));
        assert!(matches!(parse_ec("1..1"), Err(EcParseError::BadComponent { .. })));
    }

    #[test]
    fn list_delimiter() {
        let v = parse_ec_list("1.1.1.1; 2.3.1.41").unwrap();
        assert_eq!(v, vec![ec("1.1.1.1"), ec("2.3.1.41")]);
        assert!(parse_ec_list("  ").unwrap().is_empty());
        assert_eq!(format_ec_list(&v), "1.1.1.1;2.3.1.41");
    }

    #[test]
    fn dictionary_is_lexicographic() {
        let d = LabelDictionary::from_ecs([ec("1.1.1.2"), ec("1.1.1.1"), ec("1.1.1.2")]);
        assert_eq!(d.len(), 2);
        assert_eq!(d.label(&ec("1.1.1.1")), Some(0));
        assert_eq!(d.ec(1), Some(ec("1.1.1.2")));
        // "1.10" sorts before "1.2" textually
        let d = LabelDictionary::from_ecs([ec("1.2.1.1"), ec("1.10.3.2")]);
        assert_eq!(d.ec(0), Some(ec("1.10.3.2")));
        assert!(build_label_dictionary(&[]).is_empty());
    }

    #[test]
    fn dictionary_tsv_round_trip() {
        let d = LabelDictionary::from_ecs([ec("1.14.-.-"), ec("2.3.1.41"), ec("6.1.1.3")]);
        let text = d.to_tsv();
        assert_eq!(text, "ec\tlabel\n1.14.-.-\t0\n2.3.1.41\t1\n6.1.1.3\t2\n");
        assert_eq!(LabelDictionary::from_tsv(&text).unwrap(), d);
        assert!(LabelDictionary::from_tsv("ec\tlabel\n1.1.1.1\t1\n").is_err());
    }

    fn level_pattern() -> impl Strategy<Value = (usize, [u32; 4], usize)> {
        (0usize..=4, prop::array::uniform4(1u32..500), 1usize..=4)
    }

    proptest! {
        #[test]
        fn round_trip_and_prefix_completeness((known, vals, width) in level_pattern()) {
            let width = width.max(known);
            let parts: Vec<String> = (0..width)
                .map(|i| if i < known {
                    if i == 0 { (vals[0] % 7 + 1).to_string() } else { vals[i].to_string() }
                } else { "-".to_string() })
                .collect();
            let text = parts.join(".");
            let parsed = parse_ec(&text).unwrap();
            prop_assert_eq!(parsed.completeness_level(), known);
            let mut canonical = parts.clone();
            canonical.resize(4, "-".to_string());
            prop_assert_eq!(format_ec(&parsed), canonical.join("."));
            let lv = parsed.levels();
            for i in 0..4 {
                if lv[i].is_none() {
                    prop_assert!(lv[i..].iter().all(Option::is_none));
                }
            }
        }

        #[test]
        fn dictionary_bijective(codes in prop::collection::vec((1u32..=7, 1u32..30, 1u32..30), 0..60)) {
            let ecs: Vec<EcNumber> = codes.iter()
                .map(|&(a, b, c)| EcNumber::new([Some(a), Some(b), Some(c), None]).unwrap())
                .collect();
            let d = LabelDictionary::from_ecs(ecs.iter().copied());
            for e in &ecs {
                prop_assert_eq!(d.ec(d.label(e).unwrap()), Some(*e));
            }
            for (l, e) in d.iter() {
                prop_assert_eq!(d.label(&e), Some(l));
            }
            prop_assert_eq!(LabelDictionary::from_tsv(&d.to_tsv()).unwrap(), d);
        }
    }
}
