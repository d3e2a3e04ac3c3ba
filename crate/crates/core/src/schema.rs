//! Report-graph data model: typed entity spans, typed directed relations,
//! schema validation and the projection onto the original label set.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Group {
    Anat,
    Obs,
    Chan,
}

impl Group {
    pub const ALL: [Group; 3] = [Group::Anat, Group::Obs, Group::Chan];

    pub fn as_str(self) -> &'static str {
        match self {
            Group::Anat => "ANAT",
            Group::Obs => "OBS",
            Group::Chan => "CHAN",
        }
    }
}

impl fmt::Display for Group {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One of the twelve leaf entity labels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum EntityType {
    AnatDp,
    ObsDp,
    ObsU,
    ObsDa,
    ChanNc,
    ChanConAp,
    ChanConWor,
    ChanConImp,
    ChanConRes,
    ChanDevAp,
    ChanDevPlace,
    ChanDevDisa,
}

impl EntityType {
    pub const ALL: [EntityType; 12] = [
        EntityType::AnatDp,
        EntityType::ObsDp,
        EntityType::ObsU,
        EntityType::ObsDa,
        EntityType::ChanNc,
        EntityType::ChanConAp,
        EntityType::ChanConWor,
        EntityType::ChanConImp,
        EntityType::ChanConRes,
        EntityType::ChanDevAp,
        EntityType::ChanDevPlace,
        EntityType::ChanDevDisa,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            EntityType::AnatDp => "ANAT-DP",
            EntityType::ObsDp => "OBS-DP",
            EntityType::ObsU => "OBS-U",
            EntityType::ObsDa => "OBS-DA",
            EntityType::ChanNc => "CHAN-NC",
            EntityType::ChanConAp => "CHAN-CON-AP",
            EntityType::ChanConWor => "CHAN-CON-WOR",
            EntityType::ChanConImp => "CHAN-CON-IMP",
            EntityType::ChanConRes => "CHAN-CON-RES",
            EntityType::ChanDevAp => "CHAN-DEV-AP",
            EntityType::ChanDevPlace => "CHAN-DEV-PLACE",
            EntityType::ChanDevDisa => "CHAN-DEV-DISA",
        }
    }

    /// Depth-1 ancestor in the full taxonomy.
    pub fn group(self) -> Group {
        match self {
            EntityType::AnatDp => Group::Anat,
            EntityType::ObsDp | EntityType::ObsU | EntityType::ObsDa => Group::Obs,
            _ => Group::Chan,
        }
    }

    /// Accepts canonical labels plus the short aliases used in the
    /// annotation guidelines (`CHAN-IMP`, `CHAN-WOR`).
    pub fn parse(label: &str) -> Option<Self> {
        let label = label.trim();
        match label {
            "CHAN-IMP" => return Some(EntityType::ChanConImp),
            "CHAN-WOR" => return Some(EntityType::ChanConWor),
            _ => {}
        }
        Self::ALL.into_iter().find(|t| t.as_str() == label)
    }
}

impl fmt::Display for EntityType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for EntityType {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::parse(s).ok_or_else(|| format!("unknown entity label {s:?}"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum RelationKind {
    Modify,
    LocatedAt,
    SuggestiveOf,
}

impl RelationKind {
    pub const ALL: [RelationKind; 3] = [
        RelationKind::Modify,
        RelationKind::LocatedAt,
        RelationKind::SuggestiveOf,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            RelationKind::Modify => "modify",
            RelationKind::LocatedAt => "located_at",
            RelationKind::SuggestiveOf => "suggestive_of",
        }
    }

    pub fn parse(kind: &str) -> Option<Self> {
        match kind.trim() {
            "modify" | "modifies" => Some(RelationKind::Modify),
            "located_at" => Some(RelationKind::LocatedAt),
            "suggestive_of" => Some(RelationKind::SuggestiveOf),
            _ => None,
        }
    }
}

impl fmt::Display for RelationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Split {
    Train,
    Validation,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Validation, Split::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Validation => "validation",
            Split::Test => "test",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "train" => Some(Split::Train),
            "validation" | "dev" | "val" => Some(Split::Validation),
            "test" => Some(Split::Test),
            _ => None,
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Source {
    MimicCxr,
    CheXpert,
    Synthetic,
}

impl Source {
    pub const ALL: [Source; 3] = [Source::MimicCxr, Source::CheXpert, Source::Synthetic];

    pub fn as_str(self) -> &'static str {
        match self {
            Source::MimicCxr => "MIMIC-CXR",
            Source::CheXpert => "CheXpert",
            Source::Synthetic => "synthetic",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "mimic-cxr" | "mimic_cxr" | "mimic" => Some(Source::MimicCxr),
            "chexpert" => Some(Source::CheXpert),
            "synthetic" => Some(Source::Synthetic),
            _ => None,
        }
    }
}

impl fmt::Display for Source {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Entity {
    pub id: String,
    /// Space-joined text of the covered tokens.
    pub tokens: String,
    pub start_ix: usize,
    /// Inclusive.
    pub end_ix: usize,
    pub label: EntityType,
}

impl Entity {
    pub fn span(&self) -> (usize, usize) {
        (self.start_ix, self.end_ix)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Relation {
    pub source_id: String,
    pub target_id: String,
    pub kind: RelationKind,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReportGraph {
    pub doc_id: String,
    pub text: String,
    pub tokens: Vec<String>,
    pub split: Split,
    pub source: Source,
    pub entities: BTreeMap<String, Entity>,
    /// Grouped by source entity in entity-map order, which is the order the
    /// annotation format stores them in.
    pub relations: Vec<Relation>,
}

impl ReportGraph {
    /// A graph with no annotations over the whitespace tokens of `text`.
    pub fn unannotated(doc_id: &str, text: &str, split: Split, source: Source) -> Self {
        Self {
            doc_id: doc_id.to_string(),
            text: text.to_string(),
            tokens: text.split_whitespace().map(str::to_string).collect(),
            split,
            source,
            entities: BTreeMap::new(),
            relations: Vec::new(),
        }
    }

    /// Adds an entity over `tokens[start..=end]`, filling in its text.
    pub fn add_entity(&mut self, id: &str, start_ix: usize, end_ix: usize, label: EntityType) {
        let tokens = self
            .tokens
            .get(start_ix..=end_ix.min(self.tokens.len().saturating_sub(1)))
            .map(|t| t.join(" "))
            .unwrap_or_default();
        self.entities.insert(
            id.to_string(),
            Entity {
                id: id.to_string(),
                tokens,
                start_ix,
                end_ix,
                label,
            },
        );
    }

    pub fn add_relation(&mut self, source_id: &str, target_id: &str, kind: RelationKind) {
        self.relations.push(Relation {
            source_id: source_id.to_string(),
            target_id: target_id.to_string(),
            kind,
        });
        self.canonicalize_relations();
    }

    /// Stable-sorts relations into annotation-format order.
    pub fn canonicalize_relations(&mut self) {
        let rank: HashMap<&str, usize> = self
            .entities
            .keys()
            .enumerate()
            .map(|(i, k)| (k.as_str(), i))
            .collect();
        let mut relations = std::mem::take(&mut self.relations);
        relations.sort_by_key(|r| {
            rank.get(r.source_id.as_str())
                .copied()
                .unwrap_or(usize::MAX)
        });
        self.relations = relations;
    }

    /// Entity ids in natural order (numeric ids compare as numbers).
    pub fn sorted_entity_ids(&self) -> Vec<&str> {
        let mut ids: Vec<&str> = self.entities.keys().map(String::as_str).collect();
        ids.sort_by(|a, b| natural_cmp(a, b));
        ids
    }
}

pub(crate) fn natural_cmp(a: &str, b: &str) -> Ordering {
    match (a.parse::<u64>(), b.parse::<u64>()) {
        (Ok(x), Ok(y)) => x.cmp(&y).then_with(|| a.cmp(b)),
        (Ok(_), Err(_)) => Ordering::Less,
        (Err(_), Ok(_)) => Ordering::Greater,
        _ => a.cmp(b),
    }
}

/// Whether `kind(src, dst)` is in the allowed signature table.
///
/// `suggestive_of(CHAN, CHAN)` is not in the table; [`validate_graph`]
/// reports it as a warning rather than an error.
pub fn relation_signature_allowed(kind: RelationKind, src: Group, dst: Group) -> bool {
    use Group::*;
    match kind {
        RelationKind::LocatedAt => matches!((src, dst), (Obs, Anat)),
        RelationKind::SuggestiveOf => matches!((src, dst), (Obs, Obs) | (Chan, Obs) | (Obs, Chan)),
        RelationKind::Modify => matches!(
            (src, dst),
            (Obs, Obs) | (Anat, Anat) | (Chan, _) | (Obs, Chan)
        ),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Severity {
    Error,
    Warning,
}

impl Severity {
    pub fn as_str(self) -> &'static str {
        match self {
            Severity::Error => "error",
            Severity::Warning => "warning",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Rule {
    SpanBounds,
    TokenMismatch,
    DuplicateEntity,
    DanglingEndpoint,
    SelfRelation,
    Signature,
    SuggestiveChanChan,
    ChanNonModify,
    ChanIsolated,
    DuplicateRelation,
}

impl Rule {
    pub fn id(self) -> &'static str {
        match self {
            Rule::SpanBounds => "span-bounds",
            Rule::TokenMismatch => "token-mismatch",
            Rule::DuplicateEntity => "duplicate-entity",
            Rule::DanglingEndpoint => "dangling-endpoint",
            Rule::SelfRelation => "self-relation",
            Rule::Signature => "signature",
            Rule::SuggestiveChanChan => "suggestive-chan-chan",
            Rule::ChanNonModify => "chan-non-modify",
            Rule::ChanIsolated => "chan-isolated",
            Rule::DuplicateRelation => "duplicate-relation",
        }
    }

    pub fn severity(self) -> Severity {
        match self {
            Rule::SpanBounds
            | Rule::TokenMismatch
            | Rule::DuplicateEntity
            | Rule::DanglingEndpoint
            | Rule::SelfRelation
            | Rule::Signature => Severity::Error,
            _ => Severity::Warning,
        }
    }

    /// Errors that make a graph unusable, as opposed to schema-level
    /// disagreements with the signature table.
    pub fn is_structural(self) -> bool {
        self.severity() == Severity::Error && self != Rule::Signature
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub rule: Rule,
    /// Entity id, or `source->target` for relations.
    pub subject: String,
    pub message: String,
}

impl Violation {
    pub fn severity(&self) -> Severity {
        self.rule.severity()
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} [{}] {}: {}",
            self.severity().as_str(),
            self.rule.id(),
            self.subject,
            self.message
        )
    }
}

fn relation_subject(r: &Relation) -> String {
    format!("{}->{}", r.source_id, r.target_id)
}

/// All schema violations in `graph`; empty for a conforming graph.
pub fn validate_graph(graph: &ReportGraph) -> Vec<Violation> {
    let mut out = Vec::new();
    let n = graph.tokens.len();

    let mut seen_triples: HashMap<(usize, usize, EntityType), &str> = HashMap::new();
    for id in graph.sorted_entity_ids() {
        let e = &graph.entities[id];
        if e.start_ix > e.end_ix || e.end_ix >= n {
            out.push(Violation {
                rule: Rule::SpanBounds,
                subject: id.to_string(),
                message: format!(
                    "span [{}, {}] outside report of {} tokens",
                    e.start_ix, e.end_ix, n
                ),
            });
        } else {
            let expected = graph.tokens[e.start_ix..=e.end_ix].join(" ");
            if expected != e.tokens {
                out.push(Violation {
                    rule: Rule::TokenMismatch,
                    subject: id.to_string(),
                    message: format!("entity text {:?} but span covers {:?}", e.tokens, expected),
                });
            }
        }
        if let Some(first) = seen_triples.insert((e.start_ix, e.end_ix, e.label), id) {
            out.push(Violation {
                rule: Rule::DuplicateEntity,
                subject: id.to_string(),
                message: format!("same span and label as entity {first}"),
            });
        }
    }

    let mut seen_relations: BTreeSet<(&str, &str, RelationKind)> = BTreeSet::new();
    let mut incident: HashMap<&str, usize> = HashMap::new();
    for r in &graph.relations {
        let subject = relation_subject(r);
        if r.source_id == r.target_id {
            out.push(Violation {
                rule: Rule::SelfRelation,
                subject: subject.clone(),
                message: format!("{} relation from an entity to itself", r.kind),
            });
        }
        let src = graph.entities.get(&r.source_id);
        let dst = graph.entities.get(&r.target_id);
        for (end, id) in [(src, &r.source_id), (dst, &r.target_id)] {
            if end.is_none() {
                out.push(Violation {
                    rule: Rule::DanglingEndpoint,
                    subject: subject.clone(),
                    message: format!("endpoint {id} does not name an entity"),
                });
            }
        }
        if !seen_relations.insert((&r.source_id, &r.target_id, r.kind)) {
            out.push(Violation {
                rule: Rule::DuplicateRelation,
                subject: subject.clone(),
                message: format!("{} relation repeated", r.kind),
            });
        }
        let (Some(src), Some(dst)) = (src, dst) else {
            continue;
        };
        *incident.entry(&src.id).or_default() += 1;
        *incident.entry(&dst.id).or_default() += 1;

        let (sg, dg) = (src.label.group(), dst.label.group());
        if !relation_signature_allowed(r.kind, sg, dg) {
            let rule =
                if r.kind == RelationKind::SuggestiveOf && sg == Group::Chan && dg == Group::Chan {
                    Rule::SuggestiveChanChan
                } else {
                    Rule::Signature
                };
            out.push(Violation {
                rule,
                subject: subject.clone(),
                message: format!(
                    "{}({}, {}) is not an allowed signature",
                    r.kind, src.label, dst.label
                ),
            });
        }
        if r.kind != RelationKind::Modify && (sg == Group::Chan || dg == Group::Chan) {
            out.push(Violation {
                rule: Rule::ChanNonModify,
                subject,
                message: format!("change entity attached via {}", r.kind),
            });
        }
    }

    for id in graph.sorted_entity_ids() {
        let e = &graph.entities[id];
        if e.label.group() == Group::Chan && !incident.contains_key(id) {
            out.push(Violation {
                rule: Rule::ChanIsolated,
                subject: id.to_string(),
                message: format!("{} entity has no relations", e.label),
            });
        }
    }
    out
}

/// Drops every change entity and every relation touching one.
pub fn prune_to_radgraph1(graph: &ReportGraph) -> ReportGraph {
    let removed: BTreeSet<&str> = graph
        .entities
        .values()
        .filter(|e| e.label.group() == Group::Chan)
        .map(|e| e.id.as_str())
        .collect();
    ReportGraph {
        doc_id: graph.doc_id.clone(),
        text: graph.text.clone(),
        tokens: graph.tokens.clone(),
        split: graph.split,
        source: graph.source,
        entities: graph
            .entities
            .iter()
            .filter(|(id, _)| !removed.contains(id.as_str()))
            .map(|(id, e)| (id.clone(), e.clone()))
            .collect(),
        relations: graph
            .relations
            .iter()
            .filter(|r| {
                !removed.contains(r.source_id.as_str()) && !removed.contains(r.target_id.as_str())
            })
            .cloned()
            .collect(),
    }
}

fn dot_escape(s: &str) -> String {
    s.replace('\\', "\\\\").replace('"', "\\\"")
}

/// Deterministic Graphviz rendering: one node per entity, one edge per relation.
pub fn to_dot(graph: &ReportGraph) -> String {
    let mut out = String::from("digraph {\n");
    let ids = graph.sorted_entity_ids();
    if !ids.is_empty() {
        out.push_str("  node [shape=box];\n");
    }
    for id in &ids {
        let e = &graph.entities[*id];
        out.push_str(&format!(
            "  \"{}\" [label=\"{}\\n{}\"];\n",
            dot_escape(id),
            dot_escape(&e.tokens),
            e.label
        ));
    }
    let mut relations: Vec<&Relation> = graph.relations.iter().collect();
    relations.sort_by(|a, b| {
        natural_cmp(&a.source_id, &b.source_id)
            .then_with(|| natural_cmp(&a.target_id, &b.target_id))
            .then(a.kind.cmp(&b.kind))
    });
    for r in relations {
        out.push_str(&format!(
            "  \"{}\" -> \"{}\" [label=\"{}\"];\n",
            dot_escape(&r.source_id),
            dot_escape(&r.target_id),
            r.kind
        ));
    }
    out.push_str("}\n");
    out
}

// ---------------------------------------------------------------------------
// Annotation file format

#[derive(Debug, Error)]
pub enum FormatError {
    #[error("invalid JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error("{doc_id}: malformed record: {reason}")]
    Malformed { doc_id: String, reason: String },
    #[error("{doc_id}: {rule}: {message}")]
    Invalid {
        doc_id: String,
        rule: &'static str,
        message: String,
    },
}

#[derive(Debug, Serialize, Deserialize)]
struct RawReport {
    text: String,
    #[serde(alias = "data_split")]
    split: String,
    #[serde(alias = "data_source")]
    source: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    tokens: Option<Vec<String>>,
    #[serde(default)]
    entities: BTreeMap<String, RawEntity>,
}

#[derive(Debug, Serialize, Deserialize)]
struct RawEntity {
    tokens: String,
    label: String,
    start_ix: usize,
    end_ix: usize,
    #[serde(default)]
    relations: Vec<(String, String)>,
}

fn graph_from_raw(doc_id: &str, raw: RawReport) -> Result<ReportGraph, FormatError> {
    let invalid = |rule: &'static str, message: String| FormatError::Invalid {
        doc_id: doc_id.to_string(),
        rule,
        message,
    };
    let split = Split::parse(&raw.split)
        .ok_or_else(|| invalid("unknown-split", format!("unknown split {:?}", raw.split)))?;
    let source = Source::parse(&raw.source)
        .ok_or_else(|| invalid("unknown-source", format!("unknown source {:?}", raw.source)))?;
    let tokens = raw
        .tokens
        .unwrap_or_else(|| raw.text.split_whitespace().map(str::to_string).collect());

    let mut entities = BTreeMap::new();
    let mut relations = Vec::new();
    for (id, e) in raw.entities {
        let label = EntityType::parse(&e.label).ok_or_else(|| {
            invalid(
                "unknown-label",
                format!("entity {id} has unknown label {:?}", e.label),
            )
        })?;
        for (kind, target) in e.relations {
            let kind = RelationKind::parse(&kind).ok_or_else(|| {
                invalid(
                    "unknown-relation",
                    format!("entity {id} has unknown relation {kind:?}"),
                )
            })?;
            relations.push(Relation {
                source_id: id.clone(),
                target_id: target,
                kind,
            });
        }
        entities.insert(
            id.clone(),
            Entity {
                id,
                tokens: e.tokens,
                start_ix: e.start_ix,
                end_ix: e.end_ix,
                label,
            },
        );
    }
    Ok(ReportGraph {
        doc_id: doc_id.to_string(),
        text: raw.text,
        tokens,
        split,
        source,
        entities,
        relations,
    })
}

fn graph_to_raw(g: &ReportGraph) -> RawReport {
    let mut entities: BTreeMap<String, RawEntity> = g
        .entities
        .iter()
        .map(|(id, e)| {
            (
                id.clone(),
                RawEntity {
                    tokens: e.tokens.clone(),
                    label: e.label.as_str().to_string(),
                    start_ix: e.start_ix,
                    end_ix: e.end_ix,
                    relations: Vec::new(),
                },
            )
        })
        .collect();
    for r in &g.relations {
        if let Some(e) = entities.get_mut(&r.source_id) {
            e.relations
                .push((r.kind.as_str().to_string(), r.target_id.clone()));
        }
    }
    let whitespace: Vec<&str> = g.text.split_whitespace().collect();
    let tokens = (whitespace != g.tokens).then(|| g.tokens.clone());
    RawReport {
        text: g.text.clone(),
        split: g.split.as_str().to_string(),
        source: g.source.as_str().to_string(),
        tokens,
        entities,
    }
}

/// Parses a document mapping doc_id to report records. Reports come back in
/// doc-id order.
pub fn parse_annotations(json: &str) -> Result<Vec<ReportGraph>, FormatError> {
    let docs: BTreeMap<String, serde_json::Value> = serde_json::from_str(json)?;
    docs.into_iter()
        .map(|(doc_id, value)| {
            let raw: RawReport =
                serde_json::from_value(value).map_err(|e| FormatError::Malformed {
                    doc_id: doc_id.clone(),
                    reason: e.to_string(),
                })?;
            graph_from_raw(&doc_id, raw)
        })
        .collect()
}

/// Serializes graphs in the annotation format. Relations whose source is not
/// an entity of the graph cannot be represented and are dropped.
pub fn write_annotations<'a>(graphs: impl IntoIterator<Item = &'a ReportGraph>) -> String {
    let docs: BTreeMap<&str, RawReport> = graphs
        .into_iter()
        .map(|g| (g.doc_id.as_str(), graph_to_raw(g)))
        .collect();
    serde_json::to_string_pretty(&docs).expect("annotation records serialize")
}
