//! Linear relation scorer over entity pairs with schema-constrained decoding.

use std::collections::HashMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{TrainConfig, TrainError};
use crate::corpus::Dataset;
use crate::schema::{relation_signature_allowed, Entity, EntityType, Relation, RelationKind};
use crate::taxonomy::{argmax, softmax};

/// Output order of the scorer; the last class means "no relation".
pub const RELATION_OUTPUTS: [&str; 4] = ["modify", "located_at", "suggestive_of", "none"];
const NO_RELATION: usize = 3;

/// Inclusive bounds of the signed start-offset buckets.
const DISTANCE_BUCKETS: [(i64, i64); 11] = [
    (i64::MIN, -11),
    (-10, -6),
    (-5, -3),
    (-2, -2),
    (-1, -1),
    (0, 0),
    (1, 1),
    (2, 2),
    (3, 5),
    (6, 10),
    (11, i64::MAX),
];

const LABELS: usize = EntityType::ALL.len();
const PAIR_OFFSET: usize = 2 * LABELS;
const BUCKET_OFFSET: usize = PAIR_OFFSET + LABELS * LABELS;
const DIRECTION_OFFSET: usize = BUCKET_OFFSET + DISTANCE_BUCKETS.len();
const FEATURES: usize = DIRECTION_OFFSET + 2;

fn label_index(t: EntityType) -> usize {
    EntityType::ALL.iter().position(|x| *x == t).unwrap()
}

fn bucket(distance: i64) -> usize {
    DISTANCE_BUCKETS
        .iter()
        .position(|(lo, hi)| (*lo..=*hi).contains(&distance))
        .unwrap()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelationScorerParams {
    /// Entity label order of the one-hot blocks.
    pub labels: Vec<String>,
    pub outputs: Vec<String>,
    /// Candidate pairs farther apart than this are never scored.
    pub max_distance: usize,
    /// Feature layout: source one-hot, target one-hot, (source, target)
    /// conjunction, signed distance bucket, direction.
    pub feature_names: Vec<String>,
    /// `features x outputs`, row-major.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

fn feature_names() -> Vec<String> {
    let mut names = Vec::with_capacity(FEATURES);
    for t in EntityType::ALL {
        names.push(format!("src={t}"));
    }
    for t in EntityType::ALL {
        names.push(format!("dst={t}"));
    }
    for s in EntityType::ALL {
        for t in EntityType::ALL {
            names.push(format!("pair={s}>{t}"));
        }
    }
    for (lo, hi) in DISTANCE_BUCKETS {
        let fmt = |v: i64| match v {
            i64::MIN => "-inf".to_string(),
            i64::MAX => "inf".to_string(),
            v => v.to_string(),
        };
        names.push(format!("dist=[{},{}]", fmt(lo), fmt(hi)));
    }
    names.push("dir=forward".into());
    names.push("dir=backward".into());
    names
}

/// Active (value one) feature indices for an ordered pair.
pub fn pair_features(src: &Entity, dst: &Entity) -> [usize; 5] {
    let s = label_index(src.label);
    let t = label_index(dst.label);
    let d = dst.start_ix as i64 - src.start_ix as i64;
    [
        s,
        LABELS + t,
        PAIR_OFFSET + s * LABELS + t,
        BUCKET_OFFSET + bucket(d),
        DIRECTION_OFFSET + usize::from(d < 0),
    ]
}

/// Ordered pairs of distinct entities whose starts lie within `max_distance`.
pub fn candidate_pairs<'a>(
    entities: &'a [&'a Entity],
    max_distance: usize,
) -> Vec<(&'a Entity, &'a Entity)> {
    let mut out = Vec::new();
    for a in entities {
        for b in entities {
            if a.id != b.id && a.start_ix.abs_diff(b.start_ix) <= max_distance {
                out.push((*a, *b));
            }
        }
    }
    out
}

impl RelationScorerParams {
    pub fn zeros(max_distance: usize) -> Self {
        Self {
            labels: EntityType::ALL
                .iter()
                .map(|t| t.as_str().to_string())
                .collect(),
            outputs: RELATION_OUTPUTS.iter().map(|s| s.to_string()).collect(),
            max_distance,
            feature_names: feature_names(),
            weights: vec![0.0; FEATURES * RELATION_OUTPUTS.len()],
            bias: vec![0.0; RELATION_OUTPUTS.len()],
        }
    }

    pub fn logits(&self, features: &[usize]) -> Vec<f64> {
        let k = self.outputs.len();
        let mut out = self.bias.clone();
        for f in features {
            for (o, w) in out.iter_mut().zip(&self.weights[f * k..(f + 1) * k]) {
                *o += w;
            }
        }
        out
    }

    fn step(&mut self, features: &[usize], gold: usize, lr: f64, l2: f64) -> f64 {
        let k = self.outputs.len();
        let probs = softmax(&self.logits(features));
        let loss = -probs[gold].max(f64::MIN_POSITIVE).ln();
        let mut g = probs;
        g[gold] -= 1.0;
        for f in features {
            for (w, gi) in self.weights[f * k..(f + 1) * k].iter_mut().zip(&g) {
                *w -= lr * (gi + l2 * *w);
            }
        }
        for (b, gi) in self.bias.iter_mut().zip(&g) {
            *b -= lr * gi;
        }
        loss
    }
}

/// Training examples: every candidate pair of gold entities, labeled with
/// its gold relation kind or "none".
fn relation_examples(ds: &Dataset, max_distance: usize) -> Vec<([usize; 5], usize)> {
    let mut out = Vec::new();
    for r in ds.reports() {
        let mut gold: HashMap<(&str, &str), RelationKind> = HashMap::new();
        for rel in &r.relations {
            gold.entry((&rel.source_id, &rel.target_id))
                .or_insert(rel.kind);
        }
        let entities: Vec<&Entity> = r.entities.values().collect();
        for (a, b) in candidate_pairs(&entities, max_distance) {
            let label = gold
                .get(&(a.id.as_str(), b.id.as_str()))
                .map_or(NO_RELATION, |k| {
                    RelationKind::ALL.iter().position(|x| x == k).unwrap()
                });
            out.push((pair_features(a, b), label));
        }
    }
    out
}

/// Four-way cross-entropy with shuffled SGD over candidate pairs.
pub fn train_relation_scorer(
    ds: &Dataset,
    cfg: &TrainConfig,
) -> Result<RelationScorerParams, TrainError> {
    cfg.validate()?;
    let mut examples = relation_examples(ds, cfg.max_pair_distance);
    if examples.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5245_4c41);
    let mut params = RelationScorerParams::zeros(cfg.max_pair_distance);
    for _ in 0..cfg.relation_epochs {
        examples.shuffle(&mut rng);
        for (features, gold) in &examples {
            params.step(features, *gold, cfg.relation_lr, cfg.l2);
        }
    }
    Ok(params)
}

/// Relations predicted over `entities`; predictions whose signature is not
/// allowed by the schema are dropped.
pub fn predict_relations(params: &RelationScorerParams, entities: &[Entity]) -> Vec<Relation> {
    let refs: Vec<&Entity> = entities.iter().collect();
    let mut out = Vec::new();
    for (a, b) in candidate_pairs(&refs, params.max_distance) {
        let best = argmax(&params.logits(&pair_features(a, b)));
        if best == NO_RELATION {
            continue;
        }
        let kind = RelationKind::ALL[best];
        if !relation_signature_allowed(kind, a.label.group(), b.label.group()) {
            continue;
        }
        out.push(Relation {
            source_id: a.id.clone(),
            target_id: b.id.clone(),
            kind,
        });
    }
    out
}
