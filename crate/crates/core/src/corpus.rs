//! Report tokenization, dataset loading, label statistics and
//! inter-annotator agreement.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde_json::{json, Value};
use thiserror::Error;

use crate::schema::{
    parse_annotations, validate_graph, write_annotations, EntityType, FormatError, RelationKind,
    ReportGraph, Source, Split,
};

/// Characters split off the words they are attached to.
pub const PUNCTUATION: [char; 8] = ['.', ',', ';', ':', '?', '!', '(', ')'];

fn is_punct(c: char) -> bool {
    PUNCTUATION.contains(&c)
}

/// Whitespace tokenization with `. , ; : ? ! ( )` emitted as separate tokens.
/// Hyphens never split a token.
pub fn tokenize(text: &str) -> Vec<String> {
    let mut tokens = Vec::new();
    for chunk in text.split_whitespace() {
        let mut word = String::new();
        for c in chunk.chars() {
            if is_punct(c) {
                if !word.is_empty() {
                    tokens.push(std::mem::take(&mut word));
                }
                tokens.push(c.to_string());
            } else {
                word.push(c);
            }
        }
        if !word.is_empty() {
            tokens.push(word);
        }
    }
    tokens
}

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("cannot read {path}: {source}")]
    FileUnreadable {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("invalid JSON: {0}")]
    InvalidJson(serde_json::Error),
    #[error("{doc_id}: malformed record: {reason}")]
    MalformedRecord { doc_id: String, reason: String },
    #[error("{doc_id}: validation failed [{rule}]: {message}")]
    ValidationError {
        doc_id: String,
        rule: String,
        message: String,
    },
    #[error("duplicate doc_id {0}")]
    DuplicateDoc(String),
    #[error("{doc_id}: token {token} covered by both {first} and {second}")]
    OverlapConflict {
        doc_id: String,
        token: usize,
        first: EntityType,
        second: EntityType,
    },
}

impl From<FormatError> for CorpusError {
    fn from(e: FormatError) -> Self {
        match e {
            FormatError::Json(e) => CorpusError::InvalidJson(e),
            FormatError::Malformed { doc_id, reason } => {
                CorpusError::MalformedRecord { doc_id, reason }
            }
            FormatError::Invalid {
                doc_id,
                rule,
                message,
            } => CorpusError::ValidationError {
                doc_id,
                rule: rule.to_string(),
                message,
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Dataset {
    reports: Vec<ReportGraph>,
    partitions: BTreeMap<Split, Vec<String>>,
}

impl Dataset {
    /// Builds a dataset without validating graph contents.
    pub fn new(reports: Vec<ReportGraph>) -> Result<Self, CorpusError> {
        let mut seen = BTreeSet::new();
        let mut partitions: BTreeMap<Split, Vec<String>> = BTreeMap::new();
        for r in &reports {
            if !seen.insert(r.doc_id.as_str()) {
                return Err(CorpusError::DuplicateDoc(r.doc_id.clone()));
            }
            partitions
                .entry(r.split)
                .or_default()
                .push(r.doc_id.clone());
        }
        Ok(Self {
            reports,
            partitions,
        })
    }

    /// Parses the annotation format and rejects graphs with structural errors.
    pub fn from_json(json: &str) -> Result<Self, CorpusError> {
        let reports = parse_annotations(json)?;
        for r in &reports {
            if let Some(v) = validate_graph(r)
                .into_iter()
                .find(|v| v.rule.is_structural())
            {
                return Err(CorpusError::ValidationError {
                    doc_id: r.doc_id.clone(),
                    rule: v.rule.id().to_string(),
                    message: format!("{}: {}", v.subject, v.message),
                });
            }
        }
        Self::new(reports)
    }

    pub fn to_json(&self) -> String {
        write_annotations(&self.reports)
    }

    pub fn reports(&self) -> &[ReportGraph] {
        &self.reports
    }

    pub fn into_reports(self) -> Vec<ReportGraph> {
        self.reports
    }

    pub fn partitions(&self) -> &BTreeMap<Split, Vec<String>> {
        &self.partitions
    }

    pub fn len(&self) -> usize {
        self.reports.len()
    }

    pub fn is_empty(&self) -> bool {
        self.reports.is_empty()
    }

    pub fn get(&self, doc_id: &str) -> Option<&ReportGraph> {
        self.reports.iter().find(|r| r.doc_id == doc_id)
    }

    /// Reports of the given partitions, in dataset order.
    pub fn subset(&self, splits: &[Split]) -> Dataset {
        Self::new(
            self.reports
                .iter()
                .filter(|r| splits.contains(&r.split))
                .cloned()
                .collect(),
        )
        .expect("subset of unique ids is unique")
    }

    pub fn map_reports(&self, f: impl Fn(&ReportGraph) -> ReportGraph) -> Dataset {
        Self::new(self.reports.iter().map(f).collect()).expect("doc ids unchanged")
    }

    pub fn merge(parts: impl IntoIterator<Item = Dataset>) -> Result<Dataset, CorpusError> {
        Self::new(parts.into_iter().flat_map(|d| d.reports).collect())
    }
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<Dataset, CorpusError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| CorpusError::FileUnreadable {
        path: path.to_path_buf(),
        source,
    })?;
    Dataset::from_json(&text)
}

/// Row labels of the entity block; `ANAT` aggregates its whole subtree.
pub const ENTITY_ROWS: [&str; 12] = [
    "ANAT",
    "OBS-DP",
    "OBS-U",
    "OBS-DA",
    "CHAN-NC",
    "CHAN-CON-AP",
    "CHAN-CON-WOR",
    "CHAN-CON-IMP",
    "CHAN-CON-RES",
    "CHAN-DEV-AP",
    "CHAN-DEV-PLACE",
    "CHAN-DEV-DISA",
];

fn entity_row(t: EntityType) -> usize {
    EntityType::ALL.iter().position(|x| *x == t).unwrap()
}

fn relation_row(k: RelationKind) -> usize {
    RelationKind::ALL.iter().position(|x| *x == k).unwrap()
}

fn percent(count: usize, total: usize) -> f64 {
    if total == 0 {
        0.0
    } else {
        100.0 * count as f64 / total as f64
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StatsColumn {
    pub split: Split,
    pub source: Source,
    pub reports: usize,
    pub entities: [usize; 12],
    pub relations: [usize; 3],
}

impl StatsColumn {
    fn new(split: Split, source: Source) -> Self {
        Self {
            split,
            source,
            reports: 0,
            entities: [0; 12],
            relations: [0; 3],
        }
    }

    pub fn name(&self) -> String {
        format!("{} {}", self.source, self.split)
    }

    pub fn entity_total(&self) -> usize {
        self.entities.iter().sum()
    }

    pub fn relation_total(&self) -> usize {
        self.relations.iter().sum()
    }

    pub fn entity_percent(&self, row: usize) -> f64 {
        percent(self.entities[row], self.entity_total())
    }

    pub fn relation_percent(&self, row: usize) -> f64 {
        percent(self.relations[row], self.relation_total())
    }

    pub fn count(&self, label: &str) -> Option<usize> {
        if let Some(i) = ENTITY_ROWS.iter().position(|r| *r == label) {
            return Some(self.entities[i]);
        }
        RelationKind::parse(label).map(|k| self.relations[relation_row(k)])
    }

    fn add(&mut self, r: &ReportGraph) {
        self.reports += 1;
        for e in r.entities.values() {
            self.entities[entity_row(e.label)] += 1;
        }
        for rel in &r.relations {
            self.relations[relation_row(rel.kind)] += 1;
        }
    }
}

/// Label counts per (split, source) column.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct LabelStats {
    pub columns: Vec<StatsColumn>,
}

impl LabelStats {
    pub fn column(&self, split: Split, source: Source) -> Option<&StatsColumn> {
        self.columns
            .iter()
            .find(|c| c.split == split && c.source == source)
    }

    /// Aligned text table, one decimal place per percentage.
    pub fn to_table(&self) -> String {
        let headers: Vec<String> = self.columns.iter().map(StatsColumn::name).collect();
        let mut rows: Vec<(String, Vec<String>)> = Vec::new();
        let cell = |count: usize, pct: f64| format!("{count} ({pct:.1})");
        for (i, label) in ENTITY_ROWS.iter().enumerate() {
            rows.push((
                label.to_string(),
                self.columns
                    .iter()
                    .map(|c| cell(c.entities[i], c.entity_percent(i)))
                    .collect(),
            ));
        }
        rows.push((
            "Total Entities".into(),
            self.columns
                .iter()
                .map(|c| {
                    cell(
                        c.entity_total(),
                        if c.entity_total() > 0 { 100.0 } else { 0.0 },
                    )
                })
                .collect(),
        ));
        for (i, kind) in RelationKind::ALL.iter().enumerate() {
            rows.push((
                kind.to_string(),
                self.columns
                    .iter()
                    .map(|c| cell(c.relations[i], c.relation_percent(i)))
                    .collect(),
            ));
        }
        rows.push((
            "Total Relations".into(),
            self.columns
                .iter()
                .map(|c| {
                    cell(
                        c.relation_total(),
                        if c.relation_total() > 0 { 100.0 } else { 0.0 },
                    )
                })
                .collect(),
        ));

        let label_w = rows.iter().map(|r| r.0.len()).max().unwrap_or(0).max(5);
        let widths: Vec<usize> = headers
            .iter()
            .enumerate()
            .map(|(j, h)| {
                rows.iter()
                    .map(|r| r.1[j].len())
                    .max()
                    .unwrap_or(0)
                    .max(h.len())
            })
            .collect();
        let mut out = String::new();
        let _ = write!(out, "{:<label_w$}", "Label");
        for (h, w) in headers.iter().zip(&widths) {
            let _ = write!(out, "  {h:>w$}");
        }
        out.push('\n');
        for (label, cells) in &rows {
            let _ = write!(out, "{label:<label_w$}");
            for (c, w) in cells.iter().zip(&widths) {
                let _ = write!(out, "  {c:>w$}");
            }
            out.push('\n');
        }
        out
    }

    pub fn to_json(&self) -> Value {
        let columns: Vec<Value> = self
            .columns
            .iter()
            .map(|c| {
                let entities: serde_json::Map<String, Value> = ENTITY_ROWS
                    .iter()
                    .enumerate()
                    .map(|(i, l)| {
                        (
                            l.to_string(),
                            json!({"count": c.entities[i], "percent": c.entity_percent(i)}),
                        )
                    })
                    .collect();
                let relations: serde_json::Map<String, Value> = RelationKind::ALL
                    .iter()
                    .enumerate()
                    .map(|(i, k)| {
                        (
                            k.to_string(),
                            json!({"count": c.relations[i], "percent": c.relation_percent(i)}),
                        )
                    })
                    .collect();
                json!({
                    "split": c.split.as_str(),
                    "source": c.source.as_str(),
                    "reports": c.reports,
                    "entities": entities,
                    "total_entities": c.entity_total(),
                    "relations": relations,
                    "total_relations": c.relation_total(),
                })
            })
            .collect();
        json!({ "columns": columns })
    }
}

/// Counts per entity row and relation kind for every (split, source) pair
/// present in the dataset, in split-then-source order.
pub fn label_statistics(ds: &Dataset) -> LabelStats {
    let mut columns: BTreeMap<(Split, Source), StatsColumn> = BTreeMap::new();
    for r in ds.reports() {
        columns
            .entry((r.split, r.source))
            .or_insert_with(|| StatsColumn::new(r.split, r.source))
            .add(r);
    }
    LabelStats {
        columns: columns.into_values().collect(),
    }
}

/// Per-token leaf labels of one report; `None` marks tokens outside every entity.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenLabeling {
    pub doc_id: String,
    pub labels: Vec<Option<EntityType>>,
}

impl TokenLabeling {
    pub fn label_name(label: Option<EntityType>) -> &'static str {
        label.map_or("NONE", EntityType::as_str)
    }
}

/// Projects entities onto tokens. Overlapping entities must agree on label.
pub fn to_token_labeling(graph: &ReportGraph) -> Result<TokenLabeling, CorpusError> {
    let mut labels: Vec<Option<EntityType>> = vec![None; graph.tokens.len()];
    for id in graph.sorted_entity_ids() {
        let e = &graph.entities[id];
        let end = e.end_ix.min(graph.tokens.len().saturating_sub(1));
        for (token, slot) in labels.iter_mut().enumerate().take(end + 1).skip(e.start_ix) {
            match *slot {
                Some(prev) if prev != e.label => {
                    return Err(CorpusError::OverlapConflict {
                        doc_id: graph.doc_id.clone(),
                        token,
                        first: prev,
                        second: e.label,
                    })
                }
                _ => *slot = Some(e.label),
            }
        }
    }
    Ok(TokenLabeling {
        doc_id: graph.doc_id.clone(),
        labels,
    })
}

#[derive(Debug, Error, PartialEq)]
pub enum KappaError {
    #[error("labelings differ in length ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("no items to compare")]
    Empty,
    #[error("annotation sets cover different documents: {0}")]
    DocMismatch(String),
}

/// Cohen's kappa over two parallel label sequences. Returns exactly 1 when
/// the sequences agree everywhere, including the degenerate single-label case.
pub fn kappa<T: Ord>(a: &[T], b: &[T]) -> Result<f64, KappaError> {
    if a.len() != b.len() {
        return Err(KappaError::LengthMismatch(a.len(), b.len()));
    }
    if a.is_empty() {
        return Err(KappaError::Empty);
    }
    let n = a.len() as f64;
    let agree = a.iter().zip(b).filter(|(x, y)| x == y).count();
    if agree == a.len() {
        return Ok(1.0);
    }
    let mut marginals: BTreeMap<&T, (usize, usize)> = BTreeMap::new();
    for (x, y) in a.iter().zip(b) {
        marginals.entry(x).or_default().0 += 1;
        marginals.entry(y).or_default().1 += 1;
    }
    let p_o = agree as f64 / n;
    let p_e: f64 = marginals
        .values()
        .map(|(ca, cb)| (*ca as f64 / n) * (*cb as f64 / n))
        .sum();
    Ok((p_o - p_e) / (1.0 - p_e))
}

pub fn cohens_kappa(a: &TokenLabeling, b: &TokenLabeling) -> Result<f64, KappaError> {
    if a.doc_id != b.doc_id {
        return Err(KappaError::DocMismatch(format!(
            "{} vs {}",
            a.doc_id, b.doc_id
        )));
    }
    kappa(&a.labels, &b.labels)
}

/// Token-level kappa pooled over every report of two annotations of the same documents.
pub fn corpus_kappa(a: &Dataset, b: &Dataset) -> Result<f64, CorpusKappaError> {
    let ids_a: BTreeSet<&str> = a.reports().iter().map(|r| r.doc_id.as_str()).collect();
    let ids_b: BTreeSet<&str> = b.reports().iter().map(|r| r.doc_id.as_str()).collect();
    if ids_a != ids_b {
        let diff: Vec<&str> = ids_a.symmetric_difference(&ids_b).copied().collect();
        return Err(KappaError::DocMismatch(diff.join(", ")).into());
    }
    let mut la = Vec::new();
    let mut lb = Vec::new();
    for id in ids_a {
        let ta = to_token_labeling(a.get(id).unwrap())?;
        let tb = to_token_labeling(b.get(id).unwrap())?;
        if ta.labels.len() != tb.labels.len() {
            return Err(KappaError::LengthMismatch(ta.labels.len(), tb.labels.len()).into());
        }
        la.extend(ta.labels);
        lb.extend(tb.labels);
    }
    Ok(kappa(&la, &lb)?)
}

#[derive(Debug, Error)]
pub enum CorpusKappaError {
    #[error(transparent)]
    Kappa(#[from] KappaError),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
}
