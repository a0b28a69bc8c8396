//! Rule-based combination of agent outputs and the alignment fallback,
//! plus greedy tuning of the rule parameters on a validation set.

use std::collections::{BTreeSet, HashMap};
use std::fmt;

use log::info;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::agents::{Mode, RECOMMENDATION_LIMIT};
use crate::align::{transfer_labels, Hit};
use crate::ec::EcNumber;
use crate::error::{Error, Result};
use crate::record::{Prediction, ProteinRecord, Source};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Alignment,
    Agents,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Stage::Alignment => "alignment",
            Stage::Agents => "agents",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntegrationPolicy {
    /// Alignment hits below this identity are ignored.
    pub alignment_min_identity: f64,
    /// Stages consulted in order; a stage may be left out.
    pub precedence: Vec<Stage>,
    /// Minimum non-enzyme confidence for the enzyme classifier to veto.
    pub agent1_threshold: f64,
    /// Cap the EC list at the predicted function count (prediction mode);
    /// when off, only the top EC is returned.
    pub use_count_hint: bool,
}

impl Default for IntegrationPolicy {
    fn default() -> Self {
        IntegrationPolicy {
            alignment_min_identity: crate::align::DEFAULT_MIN_IDENTITY,
            precedence: vec![Stage::Alignment, Stage::Agents],
            agent1_threshold: 0.5,
            use_count_hint: true,
        }
    }
}

impl IntegrationPolicy {
    pub fn validate(&self) -> Result<()> {
        if self.precedence.is_empty() {
            return Err(Error::invalid("precedence must name at least one stage"));
        }
        let distinct: BTreeSet<_> = self.precedence.iter().collect();
        if distinct.len() != self.precedence.len() {
            return Err(Error::invalid("precedence lists a stage twice"));
        }
        for (name, v) in [
            ("alignment_min_identity", self.alignment_min_identity),
            ("agent1_threshold", self.agent1_threshold),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::invalid(format!("{name} must be in [0, 1], got {v}")));
            }
        }
        Ok(())
    }
}

impl fmt::Display for IntegrationPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let order: Vec<String> = self.precedence.iter().map(Stage::to_string).collect();
        write!(
            f,
            "order={} identity>={} agent1>={} count_hint={}",
            order.join(">"),
            self.alignment_min_identity,
            self.agent1_threshold,
            self.use_count_hint
        )
    }
}

/// Everything the integrator consumes for one query.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evidence {
    pub id: String,
    /// Enzyme call and the confidence of that call.
    pub agent1: (bool, f64),
    pub function_count: u8,
    /// EC ranking in recommendation depth, best first.
    pub ranked: Vec<(EcNumber, f64)>,
    /// Best alignment hit regardless of identity.
    pub hit: Option<Hit>,
}

fn agents_prediction(ev: &Evidence, policy: &IntegrationPolicy, mode: Mode) -> Prediction {
    let (enzyme, conf) = ev.agent1;
    if !enzyme && conf >= policy.agent1_threshold {
        return Prediction {
            id: ev.id.clone(),
            is_enzyme: Some(false),
            function_count: 0,
            ranked_ecs: Vec::new(),
            source: Source::Agents,
        };
    }
    let count = ev.function_count.max(1);
    let take = match mode {
        Mode::Prediction if policy.use_count_hint => count as usize,
        Mode::Prediction => 1,
        Mode::Recommendation => RECOMMENDATION_LIMIT,
    };
    Prediction {
        id: ev.id.clone(),
        is_enzyme: Some(true),
        function_count: if mode == Mode::Prediction && !policy.use_count_hint {
            1
        } else {
            count
        },
        ranked_ecs: ev.ranked.iter().take(take).copied().collect(),
        source: Source::Agents,
    }
}

/// Applies the stages in precedence order. Alignment resolves a query when
/// its hit reaches the identity threshold; agents resolve it unless they call
/// it an enzyme without any EC and a later stage remains. With no resolving
/// stage the result is the last agents answer, or an abstention.
pub fn integrate(ev: &Evidence, policy: &IntegrationPolicy, mode: Mode) -> Prediction {
    let mut fallback: Option<Prediction> = None;
    for (i, stage) in policy.precedence.iter().enumerate() {
        match stage {
            Stage::Alignment => {
                if let Some(hit) = ev.hit.as_ref().filter(|h| h.identity >= policy.alignment_min_identity) {
                    let (is_enzyme, function_count, ecs) = transfer_labels(hit);
                    return Prediction {
                        id: ev.id.clone(),
                        is_enzyme: Some(is_enzyme),
                        function_count,
                        ranked_ecs: ecs.into_iter().map(|ec| (ec, 1.0)).collect(),
                        source: Source::Alignment,
                    };
                }
            }
            Stage::Agents => {
                let p = agents_prediction(ev, policy, mode);
                let last = i + 1 == policy.precedence.len();
                if last || p.is_enzyme == Some(false) || !p.ranked_ecs.is_empty() {
                    return p;
                }
                fallback = Some(p);
            }
        }
    }
    fallback.unwrap_or_else(|| Prediction::abstain(ev.id.clone(), Source::Alignment))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Objective {
    /// Micro-averaged F1 over (query, EC) pairs, exact four-level match.
    #[default]
    EcMicroF1,
    /// Fraction of queries whose EC set matches exactly.
    EcExactMatch,
    /// F1 of the enzyme call; abstentions count as misses.
    EnzymeF1,
}

/// Objective value of `preds` against `gold` (matched by id).
pub fn score_objective(preds: &[Prediction], gold: &[ProteinRecord], objective: Objective) -> Result<f64> {
    if gold.is_empty() {
        return Err(Error::invalid("empty validation set"));
    }
    let by_id: HashMap<&str, &Prediction> = preds.iter().map(|p| (p.id.as_str(), p)).collect();
    let (mut tp, mut fp, mut fn_, mut exact) = (0usize, 0usize, 0usize, 0usize);
    for g in gold {
        let p = by_id
            .get(g.id.as_str())
            .ok_or_else(|| Error::invalid(format!("no prediction for {}", g.id)))?;
        match objective {
            Objective::EnzymeF1 => match (p.is_enzyme, g.is_enzyme) {
                (Some(true), true) => tp += 1,
                (Some(true), false) => fp += 1,
                (_, true) => fn_ += 1,
                _ => {}
            },
            _ => {
                let gs: BTreeSet<EcNumber> = g.ecs.iter().copied().collect();
                let ps: BTreeSet<EcNumber> = if p.is_enzyme == Some(true) {
                    p.ecs().collect()
                } else {
                    BTreeSet::new()
                };
                let hit = gs.intersection(&ps).count();
                tp += hit;
                fp += ps.len() - hit;
                fn_ += gs.len() - hit;
                exact += usize::from(gs == ps);
            }
        }
    }
    Ok(match objective {
        Objective::EcExactMatch => exact as f64 / gold.len() as f64,
        _ => {
            let denom = 2 * tp + fp + fn_;
            if denom == 0 {
                0.0
            } else {
                2.0 * tp as f64 / denom as f64
            }
        }
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuneGrid {
    pub identities: Vec<f64>,
    pub agent1_thresholds: Vec<f64>,
    pub precedences: Vec<Vec<Stage>>,
    pub use_count_hint: Vec<bool>,
}

impl Default for TuneGrid {
    fn default() -> Self {
        TuneGrid {
            identities: vec![0.4, 0.6, 0.9, 1.0],
            agent1_thresholds: vec![0.5, 0.7, 0.9],
            precedences: vec![
                vec![Stage::Alignment, Stage::Agents],
                vec![Stage::Agents, Stage::Alignment],
                vec![Stage::Alignment],
                vec![Stage::Agents],
            ],
            use_count_hint: vec![true],
        }
    }
}

impl TuneGrid {
    /// A grid holding exactly one policy.
    pub fn single(policy: &IntegrationPolicy) -> Self {
        TuneGrid {
            identities: vec![policy.alignment_min_identity],
            agent1_thresholds: vec![policy.agent1_threshold],
            precedences: vec![policy.precedence.clone()],
            use_count_hint: vec![policy.use_count_hint],
        }
    }

    fn dims(&self) -> [usize; 4] {
        [
            self.identities.len(),
            self.agent1_thresholds.len(),
            self.precedences.len(),
            self.use_count_hint.len(),
        ]
    }

    fn policy(&self, at: [usize; 4]) -> IntegrationPolicy {
        IntegrationPolicy {
            alignment_min_identity: self.identities[at[0]],
            agent1_threshold: self.agent1_thresholds[at[1]],
            precedence: self.precedences[at[2]].clone(),
            use_count_hint: self.use_count_hint[at[3]],
        }
    }

    /// All grid coordinates in row-major order.
    fn points(&self) -> Vec<[usize; 4]> {
        let d = self.dims();
        let mut out = Vec::new();
        for a in 0..d[0] {
            for b in 0..d[1] {
                for c in 0..d[2] {
                    for e in 0..d[3] {
                        out.push([a, b, c, e]);
                    }
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuneResult {
    pub policy: IntegrationPolicy,
    pub objective: f64,
    /// Every grid policy with its objective, in grid order.
    pub scoreboard: Vec<(IntegrationPolicy, f64)>,
    /// Objective after each accepted greedy move, starting point first.
    pub trajectory: Vec<f64>,
}

/// Scores every grid policy, then refines coordinate-wise from the best
/// single-stage policy, accepting only strict improvements, until no field
/// change helps. Deterministic given the grid order.
pub fn greedy_tune(
    evidence: &[Evidence],
    gold: &[ProteinRecord],
    grid: &TuneGrid,
    objective: Objective,
    mode: Mode,
) -> Result<TuneResult> {
    if gold.is_empty() || evidence.is_empty() {
        return Err(Error::invalid("empty validation set"));
    }
    let dims = grid.dims();
    if dims.contains(&0) {
        return Err(Error::invalid("tuning grid has an empty axis"));
    }
    let points = grid.points();
    let scores: Vec<f64> = points
        .par_iter()
        .map(|&at| {
            let policy = grid.policy(at);
            policy.validate()?;
            let preds: Vec<Prediction> = evidence.iter().map(|e| integrate(e, &policy, mode)).collect();
            score_objective(&preds, gold, objective)
        })
        .collect::<Result<_>>()?;
    let lookup: HashMap<[usize; 4], f64> = points.iter().copied().zip(scores.iter().copied()).collect();

    // start from the best single-stage policy (first one in grid order on ties)
    let mut start: Option<([usize; 4], f64)> = None;
    for (&at, &s) in points.iter().zip(&scores) {
        if grid.precedences[at[2]].len() == 1 && start.is_none_or(|(_, b)| s > b) {
            start = Some((at, s));
        }
    }
    let (mut cur, mut best) = start.unwrap_or((points[0], scores[0]));
    let mut trajectory = vec![best];
    loop {
        let mut moved = false;
        for field in 0..4 {
            for v in 0..dims[field] {
                let mut cand = cur;
                cand[field] = v;
                let s = lookup[&cand];
                if s > best {
                    assert!(
                        s >= *trajectory.last().expect("non-empty"),
                        "tuning objective decreased"
                    );
                    best = s;
                    cur = cand;
                    trajectory.push(s);
                    moved = true;
                }
            }
        }
        if !moved {
            break;
        }
    }
    let policy = grid.policy(cur);
    info!(
        "tuned policy {policy} objective {best:.4} after {} moves",
        trajectory.len() - 1
    );
    Ok(TuneResult {
        policy,
        objective: best,
        scoreboard: points.iter().map(|&at| grid.policy(at)).zip(scores).collect(),
        trajectory,
    })
}
