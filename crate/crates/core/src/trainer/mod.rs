//! Training: losses, the token tagger, the relation scorer, gradient checks
//! and model files.

pub mod gradcheck;
pub mod loss;
pub mod model;
pub mod relations;
pub mod tagger;

use serde::{Deserialize, Serialize};

use crate::corpus::CorpusError;
use crate::taxonomy::TaxonomyError;

pub use gradcheck::{gradient_check_logits, gradient_check_params, GradCheck};
pub use loss::{conditional_hier_loss, unconditional_loss, LossKind, LossReport, LOSS_CEILING};
pub use model::{predict_dataset, predict_graph, train_model, Model};
pub use relations::{predict_relations, train_relation_scorer, RelationScorerParams};
pub use tagger::{
    decode_entities, predict_tags, train_two_phase, DecodeMode, EpochMetrics, TaggerParams,
};

/// Output label for tokens outside every entity.
pub const NONE_LABEL: &str = "NONE";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub phase1_epochs: usize,
    pub phase1_lr: f64,
    pub phase2_epochs: usize,
    pub phase2_lr: f64,
    pub seed: u64,
    pub batch_size: usize,
    pub l2: f64,
    pub embedding_dim: usize,
    pub window: usize,
    pub relation_epochs: usize,
    pub relation_lr: f64,
    pub max_pair_distance: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            phase1_epochs: 20,
            phase1_lr: 0.1,
            phase2_epochs: 10,
            phase2_lr: 0.02,
            seed: 0,
            batch_size: 1,
            l2: 0.0,
            embedding_dim: 32,
            window: 2,
            relation_epochs: 20,
            relation_lr: 0.05,
            max_pair_distance: 20,
        }
    }
}

impl TrainConfig {
    /// Same configuration with phase 1 disabled.
    pub fn flat(mut self) -> Self {
        self.phase1_epochs = 0;
        self
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: &str| Err(TrainError::InvalidConfig(m.to_string()));
        let finite_pos = |x: f64| x.is_finite() && x > 0.0;
        if !finite_pos(self.phase1_lr) || !finite_pos(self.phase2_lr) {
            return bad("learning rates must be finite and positive");
        }
        if self.phase2_lr >= self.phase1_lr {
            return bad("phase 2 learning rate must be smaller than phase 1");
        }
        if self.batch_size == 0 {
            return bad("batch size must be at least 1");
        }
        if !(self.l2.is_finite() && self.l2 >= 0.0) {
            return bad("l2 must be finite and non-negative");
        }
        if self.embedding_dim == 0 {
            return bad("embedding dimension must be at least 1");
        }
        if !finite_pos(self.relation_lr) {
            return bad("relation learning rate must be finite and positive");
        }
        Ok(())
    }
}

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error("dataset has no trainable tokens or pairs")]
    EmptyDataset,
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("label {0} is not a leaf of the taxonomy")]
    LabelNotInTaxonomy(String),
    #[error(transparent)]
    Taxonomy(#[from] TaxonomyError),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error("model was trained with taxonomy {expected}, got {got}")]
    TaxonomyMismatch { expected: String, got: String },
    #[error("model file: {0}")]
    Format(String),
}
