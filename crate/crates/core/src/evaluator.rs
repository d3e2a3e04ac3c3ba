//! Strict entity and relation matching, micro/macro F1 and the
//! RadGraph-1 intersection protocol.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::corpus::Dataset;
use crate::schema::{prune_to_radgraph1, Entity, EntityType, Group, RelationKind, ReportGraph};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum EvalError {
    #[error("document mismatch for {doc_id}: {reason}")]
    DocMismatch { doc_id: String, reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EvalMode {
    Radgraph2,
    Radgraph1Common,
}

impl EvalMode {
    pub fn as_str(self) -> &'static str {
        match self {
            EvalMode::Radgraph2 => "radgraph2",
            EvalMode::Radgraph1Common => "radgraph1-common",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "radgraph2" => Some(EvalMode::Radgraph2),
            "radgraph1-common" => Some(EvalMode::Radgraph1Common),
            _ => None,
        }
    }
}

/// Key under which entity counts are reported. Matching is always strict on
/// the leaf label; `Group` only merges the reporting rows of ANAT and CHAN.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Granularity {
    #[default]
    Leaf,
    Group,
}

impl Granularity {
    pub fn key(self, label: EntityType) -> &'static str {
        match (self, label.group()) {
            (Granularity::Group, Group::Anat) => "ANAT",
            (Granularity::Group, Group::Chan) => "CHAN",
            _ => label.as_str(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Counts {
    pub tp: usize,
    pub pred: usize,
    pub gold: usize,
}

impl Counts {
    pub fn add(&mut self, other: Counts) {
        self.tp += other.tp;
        self.pred += other.pred;
        self.gold += other.gold;
    }

    pub fn fp(&self) -> usize {
        self.pred - self.tp
    }

    pub fn fn_(&self) -> usize {
        self.gold - self.tp
    }

    pub fn score(&self) -> TypeScore {
        let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
        let precision = ratio(self.tp, self.pred);
        let recall = ratio(self.tp, self.gold);
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        TypeScore {
            tp: self.tp,
            pred: self.pred,
            gold: self.gold,
            precision,
            recall,
            f1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TypeScore {
    pub tp: usize,
    pub pred: usize,
    pub gold: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Counts for one report (or a merge of several).
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ReportCounts {
    pub entities: BTreeMap<EntityType, Counts>,
    pub relations: BTreeMap<RelationKind, Counts>,
}

impl ReportCounts {
    pub fn merge(&mut self, other: &ReportCounts) {
        for (k, c) in &other.entities {
            self.entities.entry(*k).or_default().add(*c);
        }
        for (k, c) in &other.relations {
            self.relations.entry(*k).or_default().add(*c);
        }
    }
}

fn check_aligned(gold: &ReportGraph, pred: &ReportGraph) -> Result<(), EvalError> {
    if gold.doc_id != pred.doc_id {
        return Err(EvalError::DocMismatch {
            doc_id: gold.doc_id.clone(),
            reason: format!("paired with {}", pred.doc_id),
        });
    }
    if gold.tokens != pred.tokens {
        return Err(EvalError::DocMismatch {
            doc_id: gold.doc_id.clone(),
            reason: "token sequences differ".into(),
        });
    }
    Ok(())
}

type EntityKey = (usize, usize, EntityType);

fn entity_key(e: &Entity) -> EntityKey {
    (e.start_ix, e.end_ix, e.label)
}

/// Multiset intersection size per class: each key matches at most
/// min(gold copies, predicted copies) times.
fn count_multiset<K: Ord + Clone, C: Ord + Copy>(
    gold: impl IntoIterator<Item = (K, C)>,
    pred: impl IntoIterator<Item = (K, C)>,
) -> BTreeMap<C, Counts> {
    let mut g: BTreeMap<K, usize> = BTreeMap::new();
    let mut out: BTreeMap<C, Counts> = BTreeMap::new();
    for (k, c) in gold {
        *g.entry(k).or_default() += 1;
        out.entry(c).or_default().gold += 1;
    }
    for (k, c) in pred {
        let slot = out.entry(c).or_default();
        slot.pred += 1;
        if let Some(n) = g.get_mut(&k).filter(|n| **n > 0) {
            *n -= 1;
            slot.tp += 1;
        }
    }
    out
}

pub fn match_entities(
    gold: &ReportGraph,
    pred: &ReportGraph,
) -> Result<BTreeMap<EntityType, Counts>, EvalError> {
    check_aligned(gold, pred)?;
    let keyed = |g: &ReportGraph| {
        g.entities
            .values()
            .map(|e| (entity_key(e), e.label))
            .collect::<Vec<_>>()
    };
    Ok(count_multiset(keyed(gold), keyed(pred)))
}

/// Relations whose endpoints are missing from the graph are ignored.
pub fn match_relations(
    gold: &ReportGraph,
    pred: &ReportGraph,
) -> Result<BTreeMap<RelationKind, Counts>, EvalError> {
    check_aligned(gold, pred)?;
    let keyed = |g: &ReportGraph| {
        g.relations
            .iter()
            .filter_map(|r| {
                let s = g.entities.get(&r.source_id)?;
                let t = g.entities.get(&r.target_id)?;
                Some(((entity_key(s), entity_key(t), r.kind), r.kind))
            })
            .collect::<Vec<_>>()
    };
    Ok(count_multiset(keyed(gold), keyed(pred)))
}

pub fn match_report(gold: &ReportGraph, pred: &ReportGraph) -> Result<ReportCounts, EvalError> {
    Ok(ReportCounts {
        entities: match_entities(gold, pred)?,
        relations: match_relations(gold, pred)?,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalScores {
    pub entity_f1_micro: f64,
    pub entity_f1_macro: f64,
    pub relation_f1_micro: f64,
    pub relation_f1_macro: f64,
    pub entity_micro: TypeScore,
    pub relation_micro: TypeScore,
    pub per_type: PerType,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub per_source: BTreeMap<String, EvalScores>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerType {
    pub entities: BTreeMap<String, TypeScore>,
    pub relations: BTreeMap<String, TypeScore>,
}

fn summarize(counts: BTreeMap<String, Counts>) -> (TypeScore, f64, BTreeMap<String, TypeScore>) {
    let mut pooled = Counts::default();
    let mut per_type = BTreeMap::new();
    let mut f1s = Vec::new();
    for (k, c) in counts {
        pooled.add(c);
        let s = c.score();
        if c.gold > 0 || c.pred > 0 {
            f1s.push(s.f1);
            per_type.insert(k, s);
        }
    }
    let macro_f1 = if f1s.is_empty() {
        0.0
    } else {
        f1s.iter().sum::<f64>() / f1s.len() as f64
    };
    (pooled.score(), macro_f1, per_type)
}

/// Micro scores over pooled counts; macro is the unweighted mean of per-type
/// F1 over types that occur in gold or predictions.
pub fn aggregate<'a>(
    counts: impl IntoIterator<Item = &'a ReportCounts>,
    granularity: Granularity,
) -> EvalScores {
    let mut total = ReportCounts::default();
    for c in counts {
        total.merge(c);
    }
    let mut ent: BTreeMap<String, Counts> = BTreeMap::new();
    for (label, c) in &total.entities {
        ent.entry(granularity.key(*label).to_string())
            .or_default()
            .add(*c);
    }
    let rel: BTreeMap<String, Counts> = total
        .relations
        .iter()
        .map(|(k, c)| (k.as_str().to_string(), *c))
        .collect();
    let (entity_micro, entity_f1_macro, entities) = summarize(ent);
    let (relation_micro, relation_f1_macro, relations) = summarize(rel);
    EvalScores {
        entity_f1_micro: entity_micro.f1,
        entity_f1_macro,
        relation_f1_micro: relation_micro.f1,
        relation_f1_macro,
        entity_micro,
        relation_micro,
        per_type: PerType {
            entities,
            relations,
        },
        per_source: BTreeMap::new(),
    }
}

/// Pairs every gold report with the prediction of the same doc id.
fn align<'a>(
    gold: &'a Dataset,
    pred: &'a Dataset,
) -> Result<Vec<(&'a ReportGraph, &'a ReportGraph)>, EvalError> {
    let mut pairs = Vec::with_capacity(gold.len());
    for g in gold.reports() {
        let p = pred.get(&g.doc_id).ok_or_else(|| EvalError::DocMismatch {
            doc_id: g.doc_id.clone(),
            reason: "missing from predictions".into(),
        })?;
        pairs.push((g, p));
    }
    if let Some(extra) = pred
        .reports()
        .iter()
        .find(|p| gold.get(&p.doc_id).is_none())
    {
        return Err(EvalError::DocMismatch {
            doc_id: extra.doc_id.clone(),
            reason: "missing from gold".into(),
        });
    }
    Ok(pairs)
}

/// Scores `pred` against `gold`; in `Radgraph1Common` both sides are pruned
/// to the labels shared with RadGraph-1 first. Sources are also scored
/// separately when more than one is present.
pub fn evaluate_intersection(
    gold: &Dataset,
    pred: &Dataset,
    mode: EvalMode,
    granularity: Granularity,
) -> Result<EvalScores, EvalError> {
    let mut per_report = Vec::new();
    for (g, p) in align(gold, pred)? {
        let counts = match mode {
            EvalMode::Radgraph2 => match_report(g, p)?,
            EvalMode::Radgraph1Common => {
                match_report(&prune_to_radgraph1(g), &prune_to_radgraph1(p))?
            }
        };
        per_report.push((g.source, counts));
    }
    let mut scores = aggregate(per_report.iter().map(|(_, c)| c), granularity);
    let mut sources: Vec<_> = per_report.iter().map(|(s, _)| *s).collect();
    sources.sort();
    sources.dedup();
    if sources.len() > 1 {
        for s in sources {
            let sub = aggregate(
                per_report.iter().filter(|(x, _)| *x == s).map(|(_, c)| c),
                granularity,
            );
            scores.per_source.insert(s.as_str().to_string(), sub);
        }
    }
    Ok(scores)
}

fn table_rows(
    out: &mut String,
    title: &str,
    rows: &BTreeMap<String, TypeScore>,
    micro: &TypeScore,
    macro_f1: f64,
) {
    let _ = writeln!(
        out,
        "{:<16} {:>6} {:>6} {:>6} {:>9} {:>7} {:>6}",
        title, "tp", "pred", "gold", "precision", "recall", "f1"
    );
    let mut line = |name: &str, s: &TypeScore| {
        let _ = writeln!(
            out,
            "{:<16} {:>6} {:>6} {:>6} {:>9.3} {:>7.3} {:>6.3}",
            name, s.tp, s.pred, s.gold, s.precision, s.recall, s.f1
        );
    };
    for (k, s) in rows {
        line(k, s);
    }
    line("micro", micro);
    let _ = writeln!(out, "{:<16} {:>45.3}", "macro f1", macro_f1);
}

impl EvalScores {
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        self.write_table(&mut out);
        for (source, s) in &self.per_source {
            let _ = writeln!(out, "\n[{source}]");
            s.write_table(&mut out);
        }
        out
    }

    fn write_table(&self, out: &mut String) {
        table_rows(
            out,
            "entity",
            &self.per_type.entities,
            &self.entity_micro,
            self.entity_f1_macro,
        );
        out.push('\n');
        table_rows(
            out,
            "relation",
            &self.per_type.relations,
            &self.relation_micro,
            self.relation_f1_macro,
        );
    }
}
