//! Self-describing JSON model files and end-to-end prediction.

use serde::{Deserialize, Serialize};

use super::relations::{predict_relations, train_relation_scorer, RelationScorerParams};
use super::tagger::{
    decode_entities, predict_tags, train_two_phase, DecodeMode, EpochMetrics, TaggerParams,
};
use super::{TrainConfig, TrainError};
use crate::corpus::Dataset;
use crate::schema::ReportGraph;
use crate::taxonomy::TaxonomyTree;

pub const MODEL_FORMAT: &str = "hgie-model";
pub const MODEL_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Model {
    pub format: String,
    pub version: u32,
    pub taxonomy_hash: String,
    /// Edge list of the taxonomy the tagger was trained on.
    pub taxonomy_config: String,
    pub train_config: TrainConfig,
    pub decode_mode: DecodeMode,
    pub tagger: TaggerParams,
    /// Absent when the training data had no relation candidates.
    pub relations: Option<RelationScorerParams>,
}

/// Trained model plus the per-epoch tagger log.
pub struct TrainOutcome {
    pub model: Model,
    pub log: Vec<EpochMetrics>,
}

pub fn train_model(
    ds: &Dataset,
    tree: &TaxonomyTree,
    cfg: &TrainConfig,
) -> Result<TrainOutcome, TrainError> {
    let trained = train_two_phase(ds, tree, cfg)?;
    let relations = match train_relation_scorer(ds, cfg) {
        Ok(p) => Some(p),
        Err(TrainError::EmptyDataset) => None,
        Err(e) => return Err(e),
    };
    Ok(TrainOutcome {
        model: Model {
            format: MODEL_FORMAT.to_string(),
            version: MODEL_VERSION,
            taxonomy_hash: tree.config_hash().to_string(),
            taxonomy_config: tree.to_config(),
            train_config: cfg.clone(),
            decode_mode: DecodeMode::default(),
            tagger: trained.params,
            relations,
        },
        log: trained.log,
    })
}

impl Model {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("model serializes")
    }

    /// Parses a model file; `expected` is the tree the caller intends to use.
    pub fn from_json(json: &str, expected: Option<&TaxonomyTree>) -> Result<Model, TrainError> {
        let model: Model =
            serde_json::from_str(json).map_err(|e| TrainError::Format(e.to_string()))?;
        if model.format != MODEL_FORMAT || model.version != MODEL_VERSION {
            return Err(TrainError::Format(format!(
                "unsupported model {} v{}",
                model.format, model.version
            )));
        }
        if model.tagger.taxonomy_hash != model.taxonomy_hash {
            return Err(TrainError::Format(
                "tagger and container disagree on taxonomy".into(),
            ));
        }
        if let Some(tree) = expected {
            model.check_taxonomy(tree)?;
        }
        Ok(model)
    }

    pub fn check_taxonomy(&self, tree: &TaxonomyTree) -> Result<(), TrainError> {
        if tree.config_hash() != self.taxonomy_hash {
            return Err(TrainError::TaxonomyMismatch {
                expected: self.taxonomy_hash.clone(),
                got: tree.config_hash().to_string(),
            });
        }
        Ok(())
    }

    /// The taxonomy stored in the file.
    pub fn taxonomy(&self) -> Result<TaxonomyTree, TrainError> {
        let tree = TaxonomyTree::parse(&self.taxonomy_config)?;
        self.check_taxonomy(&tree)?;
        Ok(tree)
    }
}

/// Annotated copy of `report` with predicted entities and relations.
pub fn predict_graph(model: &Model, report: &ReportGraph) -> ReportGraph {
    let mut out =
        ReportGraph::unannotated(&report.doc_id, &report.text, report.split, report.source);
    out.tokens = report.tokens.clone();
    if report.tokens.is_empty() {
        return out;
    }
    let tags = predict_tags(&model.tagger, &report.tokens);
    let entities = decode_entities(&tags, &report.tokens, model.decode_mode);
    if let Some(rel) = &model.relations {
        out.relations = predict_relations(rel, &entities);
    }
    for e in entities {
        out.entities.insert(e.id.clone(), e);
    }
    out.canonicalize_relations();
    out
}

pub fn predict_dataset(model: &Model, ds: &Dataset) -> Dataset {
    ds.map_reports(|r| predict_graph(model, r))
}
