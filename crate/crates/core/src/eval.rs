//! Classification metrics with unclassified-sample accounting.
//!
//! Tools that abstain contribute UP (unclassified positive) and UN
//! (unclassified negative) counts, which enlarge the accuracy and recall
//! denominators.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::path::Path;

use serde::{Serialize, Serializer};

use crate::dataset::Task;
use crate::ec::{format_ec_list, parse_ec, parse_ec_list, EcNumber, LabelDictionary};
use crate::error::{Error, Result};
use crate::record::{Prediction, ProteinRecord, Source};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    pub fn_: u64,
    pub up: u64,
    pub un: u64,
}

impl ConfusionCounts {
    pub fn new(tp: u64, fp: u64, tn: u64, fn_: u64, up: u64, un: u64) -> Self {
        ConfusionCounts {
            tp,
            fp,
            tn,
            fn_,
            up,
            un,
        }
    }

    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.tn + self.fn_ + self.up + self.un
    }
}

/// A ratio that may be undefined because its denominator is zero.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Metric {
    Value(f64),
    Undefined,
}

impl Metric {
    fn ratio(num: u64, den: u64) -> Metric {
        if den == 0 {
            Metric::Undefined
        } else {
            Metric::Value(num as f64 / den as f64)
        }
    }

    pub fn value(&self) -> Option<f64> {
        match *self {
            Metric::Value(v) => Some(v),
            Metric::Undefined => None,
        }
    }

    pub fn value_or_zero(&self) -> f64 {
        self.value().unwrap_or(0.0)
    }

    pub fn is_defined(&self) -> bool {
        matches!(self, Metric::Value(_))
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Metric::Value(v) => write!(f, "{v:.4}"),
            Metric::Undefined => f.write_str("NA"),
        }
    }
}

impl Serialize for Metric {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Metric::Value(v) => s.serialize_f64(*v),
            Metric::Undefined => s.serialize_none(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MetricReport {
    pub acc: Metric,
    pub ppv: Metric,
    pub npv: Metric,
    pub recall: Metric,
    pub f1: Metric,
}

pub fn binary_metrics(c: &ConfusionCounts) -> MetricReport {
    let acc = Metric::ratio(c.tp + c.tn, c.total());
    let ppv = Metric::ratio(c.tp, c.tp + c.fp);
    let npv = Metric::ratio(c.tn, c.tn + c.fn_);
    let recall = Metric::ratio(c.tp, c.tp + c.fn_ + c.up);
    let f1 = match (ppv, recall) {
        (Metric::Value(p), Metric::Value(r)) if p + r > 0.0 => Metric::Value(2.0 * p * r / (p + r)),
        _ => Metric::Undefined,
    };
    MetricReport {
        acc,
        ppv,
        npv,
        recall,
        f1,
    }
}

/// Unweighted means over per-class one-vs-all metrics. Undefined
/// per-class values count as 0.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MacroReport {
    pub m_acc: f64,
    pub m_pr: f64,
    pub m_recall: f64,
    /// Mean of per-class F1.
    pub f1_per_class: f64,
    /// Harmonic mean of `m_pr` and `m_recall`.
    pub f1_harmonic: f64,
}

pub fn macro_metrics(per_class: &[ConfusionCounts]) -> Result<MacroReport> {
    if per_class.is_empty() {
        return Err(Error::invalid("macro metrics need at least one class"));
    }
    let n = per_class.len() as f64;
    let reports: Vec<MetricReport> = per_class.iter().map(binary_metrics).collect();
    let mean = |f: fn(&MetricReport) -> Metric| reports.iter().map(|r| f(r).value_or_zero()).sum::<f64>() / n;
    let m_acc = mean(|r| r.acc);
    let m_pr = mean(|r| r.ppv);
    let m_recall = mean(|r| r.recall);
    let f1_per_class = mean(|r| r.f1);
    let f1_harmonic = if m_pr + m_recall > 0.0 {
        2.0 * m_pr * m_recall / (m_pr + m_recall)
    } else {
        0.0
    };
    Ok(MacroReport {
        m_acc,
        m_pr,
        m_recall,
        f1_per_class,
        f1_harmonic,
    })
}

/// One-vs-all counts for `class` from aligned label vectors.
pub fn one_vs_all_counts(gold: &[usize], pred: &[usize], class: usize) -> ConfusionCounts {
    let mut c = ConfusionCounts::default();
    for (&g, &p) in gold.iter().zip(pred) {
        match (g == class, p == class) {
            (true, true) => c.tp += 1,
            (false, true) => c.fp += 1,
            (true, false) => c.fn_ += 1,
            (false, false) => c.tn += 1,
        }
    }
    c
}

/// Micro-averaged set-overlap counts for multi-label EC prediction.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct MicroReport {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl MicroReport {
    fn from_counts(tp: u64, fp: u64, fn_: u64) -> Self {
        let ratio = |a: u64, b: u64| if b == 0 { 0.0 } else { a as f64 / b as f64 };
        let precision = ratio(tp, tp + fp);
        let recall = ratio(tp, tp + fn_);
        let f1 = ratio(2 * tp, 2 * tp + fp + fn_);
        MicroReport {
            tp,
            fp,
            fn_,
            precision,
            recall,
            f1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TaskReport {
    pub task: Task,
    /// Records scored after exclusions.
    pub n: usize,
    /// Gold records dropped because they carry an EC absent from the
    /// training dictionary.
    pub excluded_unseen: usize,
    pub abstained: usize,
    pub accuracy: f64,
    pub binary: Option<(ConfusionCounts, MetricReport)>,
    pub macro_report: Option<MacroReport>,
    pub micro: Option<MicroReport>,
    pub per_class: Vec<(String, ConfusionCounts)>,
}

impl TaskReport {
    /// The headline F1: binary F1 for task 1, per-class macro F1 for task
    /// 2, micro F1 over EC assignments for task 3.
    pub fn headline_f1(&self) -> f64 {
        match self.task {
            Task::EnzymeOrNot => self.binary.map(|b| b.1.f1.value_or_zero()).unwrap_or(0.0),
            Task::FunctionCount => self.macro_report.map(|m| m.f1_per_class).unwrap_or(0.0),
            Task::EcNumber => self.micro.map(|m| m.f1).unwrap_or(0.0),
        }
    }

    pub fn to_tsv(&self) -> String {
        let mut out = String::from("metric\tvalue\n");
        let mut row = |k: &str, v: String| out.push_str(&format!("{k}\t{v}\n"));
        row("task", self.task.to_string());
        row("n", self.n.to_string());
        row("excluded_unseen", self.excluded_unseen.to_string());
        row("abstained", self.abstained.to_string());
        row("accuracy", format!("{:.4}", self.accuracy));
        if let Some((c, m)) = &self.binary {
            for (k, v) in [
                ("tp", c.tp),
                ("fp", c.fp),
                ("fn", c.fn_),
                ("tn", c.tn),
                ("up", c.up),
                ("un", c.un),
            ] {
                row(k, v.to_string());
            }
            for (k, v) in [
                ("acc", m.acc),
                ("ppv", m.ppv),
                ("npv", m.npv),
                ("recall", m.recall),
                ("f1", m.f1),
            ] {
                row(k, v.to_string());
            }
        }
        if let Some(m) = &self.macro_report {
            row("macro_acc", format!("{:.4}", m.m_acc));
            row("macro_precision", format!("{:.4}", m.m_pr));
            row("macro_recall", format!("{:.4}", m.m_recall));
            row("macro_f1_per_class", format!("{:.4}", m.f1_per_class));
            row("macro_f1_harmonic", format!("{:.4}", m.f1_harmonic));
        }
        if let Some(m) = &self.micro {
            row("micro_precision", format!("{:.4}", m.precision));
            row("micro_recall", format!("{:.4}", m.recall));
            row("micro_f1", format!("{:.4}", m.f1));
        }
        out
    }
}

impl fmt::Display for TaskReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "task {}  n={}  abstained={}  excluded_unseen={}",
            self.task, self.n, self.abstained, self.excluded_unseen
        )?;
        writeln!(f, "  accuracy            {:.4}", self.accuracy)?;
        if let Some((c, m)) = &self.binary {
            writeln!(f, "  ACC    PPV    NPV    Recall F1     | TP FP FN TN UP UN")?;
            writeln!(
                f,
                "  {} {} {} {} {} | {} {} {} {} {} {}",
                m.acc, m.ppv, m.npv, m.recall, m.f1, c.tp, c.fp, c.fn_, c.tn, c.up, c.un
            )?;
        }
        if let Some(m) = &self.macro_report {
            writeln!(f, "  macro accuracy      {:.4}", m.m_acc)?;
            writeln!(f, "  macro precision     {:.4}", m.m_pr)?;
            writeln!(f, "  macro recall        {:.4}", m.m_recall)?;
            writeln!(f, "  macro F1 (class)    {:.4}", m.f1_per_class)?;
            writeln!(f, "  macro F1 (harmonic) {:.4}", m.f1_harmonic)?;
        }
        if let Some(m) = &self.micro {
            writeln!(f, "  micro precision     {:.4}", m.precision)?;
            writeln!(f, "  micro recall        {:.4}", m.recall)?;
            writeln!(f, "  micro F1            {:.4}", m.f1)?;
        }
        Ok(())
    }
}

/// Scores predictions against gold records for one task.
///
/// Every gold id needs a prediction and every prediction a gold record.
/// For the EC task, `dict` (the training label dictionary) enables the
/// unseen-label exclusion.
pub fn evaluate_task(
    preds: &[Prediction],
    gold: &[ProteinRecord],
    task: Task,
    dict: Option<&LabelDictionary>,
) -> Result<TaskReport> {
    let by_id: HashMap<&str, &Prediction> = preds.iter().map(|p| (p.id.as_str(), p)).collect();
    if by_id.len() != preds.len() {
        return Err(Error::invalid("duplicate ids among predictions"));
    }
    let gold_ids: BTreeSet<&str> = gold.iter().map(|g| g.id.as_str()).collect();
    if let Some(extra) = preds.iter().find(|p| !gold_ids.contains(p.id.as_str())) {
        return Err(Error::invalid(format!("prediction for unknown id {}", extra.id)));
    }
    let mut pairs = Vec::with_capacity(gold.len());
    for g in gold {
        let p = by_id
            .get(g.id.as_str())
            .ok_or_else(|| Error::invalid(format!("no prediction for {}", g.id)))?;
        pairs.push((g, *p));
    }
    match task {
        Task::EnzymeOrNot => Ok(eval_enzyme(&pairs)),
        Task::FunctionCount => eval_count(&pairs),
        Task::EcNumber => eval_ec(&pairs, dict),
    }
}

fn eval_enzyme(pairs: &[(&ProteinRecord, &Prediction)]) -> TaskReport {
    let mut c = ConfusionCounts::default();
    let mut abstained = 0;
    for (g, p) in pairs {
        match (g.is_enzyme, p.is_enzyme) {
            (true, Some(true)) => c.tp += 1,
            (false, Some(true)) => c.fp += 1,
            (false, Some(false)) => c.tn += 1,
            (true, Some(false)) => c.fn_ += 1,
            (true, None) => c.up += 1,
            (false, None) => c.un += 1,
        }
        abstained += usize::from(p.is_enzyme.is_none());
    }
    let m = binary_metrics(&c);
    TaskReport {
        task: Task::EnzymeOrNot,
        n: pairs.len(),
        excluded_unseen: 0,
        abstained,
        accuracy: m.acc.value_or_zero(),
        binary: Some((c, m)),
        macro_report: None,
        micro: None,
        per_class: Vec::new(),
    }
}

fn eval_count(pairs: &[(&ProteinRecord, &Prediction)]) -> Result<TaskReport> {
    let mut classes: BTreeSet<u8> = BTreeSet::new();
    for (g, p) in pairs {
        classes.insert(g.function_count);
        if p.is_enzyme.is_some() {
            classes.insert(p.function_count);
        }
    }
    let mut per: BTreeMap<u8, ConfusionCounts> = classes.iter().map(|&c| (c, ConfusionCounts::default())).collect();
    let mut correct = 0;
    let mut abstained = 0;
    for (g, p) in pairs {
        let pred = p.is_enzyme.map(|_| p.function_count);
        abstained += usize::from(pred.is_none());
        correct += usize::from(pred == Some(g.function_count));
        for (&class, c) in per.iter_mut() {
            let is_gold = g.function_count == class;
            match pred {
                None if is_gold => c.up += 1,
                None => c.un += 1,
                Some(pc) => match (is_gold, pc == class) {
                    (true, true) => c.tp += 1,
                    (false, true) => c.fp += 1,
                    (true, false) => c.fn_ += 1,
                    (false, false) => c.tn += 1,
                },
            }
        }
    }
    let per_class: Vec<(String, ConfusionCounts)> = per.into_iter().map(|(k, c)| (k.to_string(), c)).collect();
    let macro_report = if per_class.is_empty() {
        None
    } else {
        Some(macro_metrics(&per_class.iter().map(|x| x.1).collect::<Vec<_>>())?)
    };
    Ok(TaskReport {
        task: Task::FunctionCount,
        n: pairs.len(),
        excluded_unseen: 0,
        abstained,
        accuracy: ratio(correct, pairs.len()),
        binary: None,
        macro_report,
        micro: None,
        per_class,
    })
}

fn ratio(a: usize, b: usize) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

fn eval_ec(pairs: &[(&ProteinRecord, &Prediction)], dict: Option<&LabelDictionary>) -> Result<TaskReport> {
    let kept: Vec<_> = pairs
        .iter()
        .filter(|(g, _)| dict.is_none_or(|d| g.ecs.iter().all(|e| d.contains(e))))
        .collect();
    let excluded_unseen = pairs.len() - kept.len();

    let mut classes: BTreeSet<EcNumber> = BTreeSet::new();
    for (g, p) in &kept {
        classes.extend(g.ecs.iter().copied());
        classes.extend(p.ecs());
    }
    let mut per: BTreeMap<EcNumber, ConfusionCounts> =
        classes.iter().map(|&c| (c, ConfusionCounts::default())).collect();
    let (mut tp, mut fp, mut fn_) = (0u64, 0u64, 0u64);
    let mut exact = 0;
    let mut abstained = 0;
    for (g, p) in &kept {
        let gold: BTreeSet<EcNumber> = g.ecs.iter().copied().collect();
        let abstain = p.is_enzyme.is_none();
        abstained += usize::from(abstain);
        let pred: BTreeSet<EcNumber> = if abstain { BTreeSet::new() } else { p.ecs().collect() };
        if !abstain && gold == pred {
            exact += 1;
        }
        let hit = gold.intersection(&pred).count() as u64;
        tp += hit;
        fp += pred.len() as u64 - hit;
        fn_ += gold.len() as u64 - hit;
        for (ec, c) in per.iter_mut() {
            let in_gold = gold.contains(ec);
            if abstain {
                if in_gold {
                    c.up += 1;
                } else {
                    c.un += 1;
                }
                continue;
            }
            match (in_gold, pred.contains(ec)) {
                (true, true) => c.tp += 1,
                (false, true) => c.fp += 1,
                (true, false) => c.fn_ += 1,
                (false, false) => c.tn += 1,
            }
        }
    }
    let per_class: Vec<(String, ConfusionCounts)> = per.into_iter().map(|(k, c)| (k.to_string(), c)).collect();
    let macro_report = if per_class.is_empty() {
        None
    } else {
        Some(macro_metrics(&per_class.iter().map(|x| x.1).collect::<Vec<_>>())?)
    };
    Ok(TaskReport {
        task: Task::EcNumber,
        n: kept.len(),
        excluded_unseen,
        abstained,
        accuracy: ratio(exact, kept.len()),
        binary: None,
        macro_report,
        micro: Some(MicroReport::from_counts(tp, fp, fn_)),
        per_class,
    })
}

pub const PREDICTION_HEADER: &str = "id\tis_enzyme\tfunction_count\tecs\tscores\tsource\terror";

/// One output row; scores use the shortest round-trip float form.
pub fn format_prediction_row(p: &Prediction) -> String {
    let flag = match p.is_enzyme {
        Some(true) => "1",
        Some(false) => "0",
        None => "",
    };
    let ecs: Vec<EcNumber> = p.ecs().collect();
    let scores: Vec<String> = p.ranked_ecs.iter().map(|(_, s)| format!("{s}")).collect();
    format!(
        "{}\t{}\t{}\t{}\t{}\t{}\t",
        p.id,
        flag,
        p.function_count,
        format_ec_list(&ecs),
        scores.join(";"),
        p.source
    )
}

pub fn format_error_row(id: &str, message: &str) -> String {
    let clean: String = message
        .chars()
        .map(|c| if c == '\t' || c == '\n' { ' ' } else { c })
        .collect();
    format!("{id}\t\t\t\t\t\t{clean}")
}

pub fn write_predictions(preds: &[Prediction]) -> String {
    let mut out = String::from(PREDICTION_HEADER);
    out.push('\n');
    for p in preds {
        out.push_str(&format_prediction_row(p));
        out.push('\n');
    }
    out
}

/// Reads either this tool's prediction output or the three-column
/// external format (`id`, enzyme flag or blank, semicolon EC list or
/// blank). Blank flags are abstentions; error rows become abstentions.
pub fn read_predictions(text: &str) -> Result<Vec<Prediction>> {
    let mut out = Vec::new();
    let mut native = false;
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        if i == 0 && line.starts_with("id\t") {
            native = line == PREDICTION_HEADER;
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        let bad = |msg: String| Error::Format {
            file: "predictions".into(),
            line: line_no,
            message: msg,
        };
        let id = fields[0].trim().to_string();
        if id.is_empty() {
            return Err(bad("empty id".into()));
        }
        let field = |k: usize| fields.get(k).map(|s| s.trim()).unwrap_or("");
        let flag = match field(1) {
            "" => None,
            "1" | "true" => Some(true),
            "0" | "false" => Some(false),
            other => return Err(bad(format!("bad enzyme flag {other:?}"))),
        };
        if native {
            if !field(6).is_empty() {
                out.push(Prediction::abstain(id, Source::Agents));
                continue;
            }
            let ecs: Vec<EcNumber> = field(3)
                .split(';')
                .filter(|s| !s.trim().is_empty())
                .map(|s| parse_ec(s).map_err(|e| bad(e.to_string())))
                .collect::<Result<_>>()?;
            let scores: Vec<f64> = field(4)
                .split(';')
                .filter(|s| !s.trim().is_empty())
                .map(|s| s.trim().parse::<f64>().map_err(|_| bad(format!("bad score {s:?}"))))
                .collect::<Result<_>>()?;
            if scores.len() != ecs.len() {
                return Err(bad("score count differs from EC count".into()));
            }
            let count = if field(2).is_empty() {
                0
            } else {
                field(2)
                    .parse()
                    .map_err(|_| bad(format!("bad function count {:?}", field(2))))?
            };
            out.push(Prediction {
                id,
                is_enzyme: flag,
                function_count: count,
                ranked_ecs: ecs.into_iter().zip(scores).collect(),
                source: field(5).parse().map_err(bad)?,
            });
        } else {
            let ecs = parse_ec_list(field(2)).map_err(|e| bad(e.to_string()))?;
            let is_enzyme = match flag {
                None if !ecs.is_empty() => Some(true),
                f => f,
            };
            out.push(Prediction {
                id,
                is_enzyme,
                function_count: ecs.len() as u8,
                ranked_ecs: ecs.into_iter().map(|e| (e, 1.0)).collect(),
                source: Source::External,
            });
        }
    }
    Ok(out)
}

pub fn load_external_predictions(path: &Path) -> Result<Vec<Prediction>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    read_predictions(&text)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use chrono::NaiveDate;

    fn close(m: Metric, want: f64) {
        assert_abs_diff_eq!(m.value().unwrap(), want, epsilon = 1e-4);
    }

    #[test]
    fn all_zero_counts_are_undefined() {
        let m = binary_metrics(&ConfusionCounts::default());
        for v in [m.acc, m.ppv, m.npv, m.recall, m.f1] {
            assert_eq!(v, Metric::Undefined);
        }
    }

    #[test]
    fn abstentions_enter_recall_and_accuracy() {
        let c = ConfusionCounts::new(6, 2, 5, 1, 3, 4);
        let m = binary_metrics(&c);
        assert_eq!(m.recall, Metric::Value(6.0 / 10.0));
        assert_eq!(m.acc, Metric::Value(11.0 / 21.0));
        assert_eq!(m.ppv, Metric::Value(6.0 / 8.0));
        assert_eq!(m.npv, Metric::Value(5.0 / 6.0));
    }

    #[test]
    fn macro_of_one_class_is_binary() {
        let c = ConfusionCounts::new(3185, 159, 4295, 394, 0, 0);
        let b = binary_metrics(&c);
        let m = macro_metrics(&[c]).unwrap();
        assert_eq!(m.m_acc, b.acc.value().unwrap());
        assert_eq!(m.m_pr, b.ppv.value().unwrap());
        assert_eq!(m.m_recall, b.recall.value().unwrap());
        assert_eq!(m.f1_per_class, b.f1.value().unwrap());
        assert!(macro_metrics(&[]).is_err());
    }

    #[test]
    fn macro_f1_per_class_mean() {
        let perfect = ConfusionCounts::new(5, 0, 5, 0, 0, 0);
        let useless = ConfusionCounts::new(0, 5, 0, 5, 0, 0);
        let m = macro_metrics(&[perfect, useless]).unwrap();
        assert_eq!(m.f1_per_class, 0.5);
    }

    #[test]
    fn three_class_hand_computed() {
        // gold: a a a b b c ; pred: a a b b c c  (a=0, b=1, c=2)
        let gold = [0, 0, 0, 1, 1, 2];
        let pred = [0, 0, 1, 1, 2, 2];
        let per: Vec<_> = (0..3).map(|k| one_vs_all_counts(&gold, &pred, k)).collect();
        assert_eq!(per[0], ConfusionCounts::new(2, 0, 3, 1, 0, 0));
        assert_eq!(per[1], ConfusionCounts::new(1, 1, 3, 1, 0, 0));
        assert_eq!(per[2], ConfusionCounts::new(1, 1, 4, 0, 0, 0));
        let m = macro_metrics(&per).unwrap();
        // precision: 1, 1/2, 1/2 ; recall: 2/3, 1/2, 1 ; f1: 0.8, 0.5, 2/3
        assert_abs_diff_eq!(m.m_pr, (1.0 + 0.5 + 0.5) / 3.0, epsilon = 1e-12);
        assert_abs_diff_eq!(m.m_recall, (2.0 / 3.0 + 0.5 + 1.0) / 3.0, epsilon = 1e-12);
        assert_abs_diff_eq!(m.f1_per_class, (0.8 + 0.5 + 2.0 / 3.0) / 3.0, epsilon = 1e-12);
        assert_abs_diff_eq!(m.m_acc, (5.0 / 6.0 + 4.0 / 6.0 + 5.0 / 6.0) / 3.0, epsilon = 1e-12);
        let p = m.m_pr;
        let r = m.m_recall;
        assert_abs_diff_eq!(m.f1_harmonic, 2.0 * p * r / (p + r), epsilon = 1e-12);
    }

    #[test]
    fn table_rows_reproduce() {
        let m = binary_metrics(&ConfusionCounts::new(2962, 192, 3605, 342, 0, 0));
        close(m.acc, 0.9248);
        close(m.ppv, 0.9391);
        close(m.npv, 0.9134);
        close(m.recall, 0.8965);
        close(m.f1, 0.9173);
    }

    fn gold(id: &str, ecs: &str) -> ProteinRecord {
        let ecs = parse_ec_list(ecs).unwrap();
        let d = NaiveDate::from_ymd_opt(2019, 1, 1).unwrap();
        ProteinRecord {
            id: id.into(),
            name: String::new(),
            seq: "MKV".into(),
            is_enzyme: !ecs.is_empty(),
            function_count: ecs.len() as u8,
            ecs,
            date_integrated: d,
            date_sequence_update: d,
        }
    }

    fn pred_of(g: &ProteinRecord) -> Prediction {
        Prediction {
            id: g.id.clone(),
            is_enzyme: Some(g.is_enzyme),
            function_count: g.function_count,
            ranked_ecs: g.ecs.iter().map(|&e| (e, 1.0)).collect(),
            source: Source::Agents,
        }
    }

    #[test]
    fn perfect_predictions_score_one() {
        let g = vec![gold("a", "1.1.1.1"), gold("b", ""), gold("c", "2.3.1.41;1.1.1.1")];
        let p: Vec<_> = g.iter().map(pred_of).collect();
        let r1 = evaluate_task(&p, &g, Task::EnzymeOrNot, None).unwrap();
        assert_eq!(r1.binary.unwrap().1.f1, Metric::Value(1.0));
        assert_eq!(r1.accuracy, 1.0);
        let r3 = evaluate_task(&p, &g, Task::EcNumber, None).unwrap();
        assert_eq!(r3.accuracy, 1.0);
        assert_eq!(r3.micro.unwrap().f1, 1.0);
        let enz: Vec<_> = g.iter().filter(|r| r.is_enzyme).cloned().collect();
        let pe: Vec<_> = enz.iter().map(pred_of).collect();
        let r2 = evaluate_task(&pe, &enz, Task::FunctionCount, None).unwrap();
        assert_eq!(r2.accuracy, 1.0);
        assert_eq!(r2.macro_report.unwrap().f1_per_class, 1.0);
    }

    #[test]
    fn unseen_ec_records_are_excluded() {
        let g = vec![gold("a", "1.1.1.1"), gold("b", "7.7.7.7")];
        let dict = LabelDictionary::from_ecs(["1.1.1.1".parse().unwrap()]);
        let p: Vec<_> = g.iter().map(pred_of).collect();
        let r = evaluate_task(&p, &g, Task::EcNumber, Some(&dict)).unwrap();
        assert_eq!(r.excluded_unseen, 1);
        assert_eq!(r.n, 1);
    }

    #[test]
    fn multifunctional_needs_set_equality() {
        let g = vec![gold("a", "1.1.1.1;2.3.1.41")];
        let mut p = pred_of(&g[0]);
        p.ranked_ecs.truncate(1);
        let r = evaluate_task(&[p], &g, Task::EcNumber, None).unwrap();
        assert_eq!(r.accuracy, 0.0);
        let micro = r.micro.unwrap();
        assert_eq!((micro.tp, micro.fp, micro.fn_), (1, 0, 1));
    }

    #[test]
    fn id_mismatch_is_an_error() {
        let g = vec![gold("a", "1.1.1.1")];
        let mut p = pred_of(&g[0]);
        p.id = "zzz".into();
        assert!(evaluate_task(&[p], &g, Task::EnzymeOrNot, None).is_err());
        assert!(evaluate_task(&[], &g, Task::EnzymeOrNot, None).is_err());
    }

    #[test]
    fn external_rows() {
        let p = read_predictions("P1\t\t\nP2\t1\t1.1.1.1;2.3.1.41\nP3\t0\t\n").unwrap();
        assert_eq!(p[0].is_enzyme, None);
        assert_eq!(p[1].ranked_ecs.len(), 2);
        assert_eq!(p[1].function_count, 2);
        assert_eq!(p[2].is_enzyme, Some(false));
        assert!(read_predictions("P1\tmaybe\t\n").is_err());
    }

    #[test]
    fn writer_reader_round_trip() {
        let preds = vec![
            Prediction {
                id: "Q1".into(),
                is_enzyme: Some(true),
                function_count: 2,
                ranked_ecs: vec![
                    ("1.14.11.38".parse().unwrap(), 0.912345678901),
                    ("1.-.-.-".parse().unwrap(), 0.1),
                ],
                source: Source::Agents,
            },
            Prediction {
                id: "Q2".into(),
                is_enzyme: Some(false),
                function_count: 0,
                ranked_ecs: vec![],
                source: Source::Alignment,
            },
            Prediction::abstain("Q3", Source::Agents),
        ];
        let text = write_predictions(&preds);
        assert_eq!(read_predictions(&text).unwrap(), preds);
        let err_row = format!(
            "{PREDICTION_HEADER}\n{}\n",
            format_error_row("Q4", "missing\tembedding")
        );
        assert_eq!(
            read_predictions(&err_row).unwrap(),
            vec![Prediction::abstain("Q4", Source::Agents)]
        );
    }
}
