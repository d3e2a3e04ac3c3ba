//! Windowed-embedding token scorer trained in two phases: tree-conditional
//! loss first, then flat cross-entropy at a smaller learning rate.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::loss::{loss_at, LossKind};
use super::{TrainConfig, TrainError, NONE_LABEL};
use crate::corpus::{to_token_labeling, Dataset};
use crate::schema::{Entity, EntityType};
use crate::taxonomy::{argmax, TaxonomyTree};

const OOV: usize = 0;
const PAD: usize = 1;
const RESERVED: usize = 2;

/// Lowercased lookup key for a token.
pub fn normalize_token(token: &str) -> String {
    token.to_lowercase()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaggerParams {
    /// Hash of the entity taxonomy (without the NONE leaf).
    pub taxonomy_hash: String,
    /// Output order: the taxonomy's leaves, then NONE.
    pub outputs: Vec<String>,
    /// Token to embedding row. Rows 0 and 1 are OOV and padding.
    pub vocab: BTreeMap<String, usize>,
    pub dim: usize,
    pub window: usize,
    /// `rows x dim`, row-major.
    pub embeddings: Vec<f64>,
    /// `input_dim x outputs`, row-major.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

/// Gradient of a batch loss with respect to every parameter.
#[derive(Debug, Clone)]
pub struct TaggerGrads {
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
    /// Sparse: (embedding row, gradient of that row). Rows may repeat.
    pub embeddings: Vec<(usize, Vec<f64>)>,
}

/// One labeled token inside an encoded report.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TokenExample {
    pub doc: usize,
    pub position: usize,
    pub gold: usize,
}

impl TaggerParams {
    /// Random initialization; vocabulary from the dataset in report order.
    pub fn init(
        tree: &TaxonomyTree,
        ds: &Dataset,
        dim: usize,
        window: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let mut vocab = BTreeMap::new();
        for r in ds.reports() {
            for t in &r.tokens {
                let next = vocab.len() + RESERVED;
                vocab.entry(normalize_token(t)).or_insert(next);
            }
        }
        let mut outputs: Vec<String> = tree.leaf_names().iter().map(|s| s.to_string()).collect();
        outputs.push(NONE_LABEL.to_string());

        let rows = vocab.len() + RESERVED;
        let input_dim = (2 * window + 1) * dim;
        let k = outputs.len();
        let emb_scale = 0.5;
        let w_scale = (1.0 / input_dim as f64).sqrt();
        let embeddings = (0..rows * dim)
            .map(|_| rng.gen_range(-emb_scale..emb_scale))
            .collect();
        let weights = (0..input_dim * k)
            .map(|_| rng.gen_range(-w_scale..w_scale))
            .collect();
        Self {
            taxonomy_hash: tree.config_hash().to_string(),
            outputs,
            vocab,
            dim,
            window,
            embeddings,
            weights,
            bias: vec![0.0; k],
        }
    }

    pub fn output_count(&self) -> usize {
        self.outputs.len()
    }

    pub fn input_dim(&self) -> usize {
        (2 * self.window + 1) * self.dim
    }

    pub fn token_id(&self, token: &str) -> usize {
        self.vocab
            .get(&normalize_token(token))
            .copied()
            .unwrap_or(OOV)
    }

    pub fn encode(&self, tokens: &[String]) -> Vec<usize> {
        tokens.iter().map(|t| self.token_id(t)).collect()
    }

    /// Embedding rows feeding position `i`, padding outside the report.
    fn window_rows<'a>(&self, ids: &'a [usize], i: usize) -> impl Iterator<Item = usize> + 'a {
        let w = self.window as isize;
        (-w..=w).map(move |o| {
            let j = i as isize + o;
            if j < 0 || j >= ids.len() as isize {
                PAD
            } else {
                ids[j as usize]
            }
        })
    }

    fn features(&self, ids: &[usize], i: usize) -> Vec<f64> {
        let mut h = Vec::with_capacity(self.input_dim());
        for row in self.window_rows(ids, i) {
            h.extend_from_slice(&self.embeddings[row * self.dim..(row + 1) * self.dim]);
        }
        h
    }

    fn logits_from(&self, h: &[f64]) -> Vec<f64> {
        let k = self.output_count();
        let mut out = self.bias.clone();
        for (a, ha) in h.iter().enumerate() {
            if *ha == 0.0 {
                continue;
            }
            let row = &self.weights[a * k..(a + 1) * k];
            for (o, w) in out.iter_mut().zip(row) {
                *o += ha * w;
            }
        }
        out
    }

    /// Output logits for position `i` of an encoded report.
    pub fn logits(&self, ids: &[usize], i: usize) -> Vec<f64> {
        self.logits_from(&self.features(ids, i))
    }

    pub fn zero_grads(&self) -> TaggerGrads {
        TaggerGrads {
            weights: vec![0.0; self.weights.len()],
            bias: vec![0.0; self.bias.len()],
            embeddings: Vec::new(),
        }
    }

    /// Adds the gradient of one example's loss into `grads`; returns the
    /// loss and whether the pre-update argmax was correct.
    pub fn accumulate(
        &self,
        tree: &TaxonomyTree,
        kind: LossKind,
        ids: &[usize],
        position: usize,
        gold: usize,
        grads: &mut TaggerGrads,
    ) -> (f64, bool) {
        let h = self.features(ids, position);
        let logits = self.logits_from(&h);
        let correct = argmax(&logits) == gold;
        let report =
            loss_at(kind, tree, &logits, gold).expect("finite logits over a valid gold leaf");
        let g = &report.grad;
        let k = self.output_count();

        for (b, gi) in grads.bias.iter_mut().zip(g) {
            *b += gi;
        }
        let mut dh = vec![0.0; h.len()];
        for (a, ha) in h.iter().enumerate() {
            let wrow = &self.weights[a * k..(a + 1) * k];
            let grow = &mut grads.weights[a * k..(a + 1) * k];
            let mut acc = 0.0;
            for o in 0..k {
                grow[o] += ha * g[o];
                acc += wrow[o] * g[o];
            }
            dh[a] = acc;
        }
        for (slot, row) in self.window_rows(ids, position).enumerate() {
            grads
                .embeddings
                .push((row, dh[slot * self.dim..(slot + 1) * self.dim].to_vec()));
        }
        (report.loss, correct)
    }

    /// Plain SGD step on the mean gradient with optional L2 on touched rows and weights.
    pub fn apply(&mut self, grads: &TaggerGrads, lr: f64, l2: f64, batch_len: usize) {
        let scale = lr / batch_len as f64;
        for (w, g) in self.weights.iter_mut().zip(&grads.weights) {
            *w -= scale * g + lr * l2 * *w;
        }
        for (b, g) in self.bias.iter_mut().zip(&grads.bias) {
            *b -= scale * g;
        }
        for (row, g) in &grads.embeddings {
            let e = &mut self.embeddings[row * self.dim..(row + 1) * self.dim];
            for (x, gi) in e.iter_mut().zip(g) {
                *x -= scale * gi + lr * l2 * *x;
            }
        }
    }

    /// Sum of per-example losses over a batch, no gradient.
    pub fn batch_loss(
        &self,
        tree: &TaxonomyTree,
        kind: LossKind,
        docs: &[Vec<usize>],
        batch: &[TokenExample],
    ) -> f64 {
        batch
            .iter()
            .map(|ex| {
                let logits = self.logits(&docs[ex.doc], ex.position);
                loss_at(kind, tree, &logits, ex.gold).unwrap().loss
            })
            .sum()
    }

    /// Most probable output per token; `None` for the NONE output.
    pub fn predict_ids(&self, ids: &[usize]) -> Vec<Option<usize>> {
        let none = self.output_count() - 1;
        (0..ids.len())
            .map(|i| {
                let best = argmax(&self.logits(ids, i));
                (best != none).then_some(best)
            })
            .collect()
    }
}

/// Tagger tree: the entity taxonomy with NONE attached under the root.
pub fn tagger_tree(tree: &TaxonomyTree) -> Result<TaxonomyTree, TrainError> {
    Ok(tree.with_leaf_under_root(NONE_LABEL)?)
}

/// Encoded reports and their labeled token positions.
pub struct EncodedCorpus {
    pub docs: Vec<Vec<usize>>,
    pub examples: Vec<TokenExample>,
}

pub fn encode_corpus(
    params: &TaggerParams,
    tagger_tree: &TaxonomyTree,
    ds: &Dataset,
) -> Result<EncodedCorpus, TrainError> {
    let none = tagger_tree.leaf_index(NONE_LABEL)?;
    let mut docs = Vec::with_capacity(ds.len());
    let mut examples = Vec::new();
    for (d, r) in ds.reports().iter().enumerate() {
        let labeling = to_token_labeling(r)?;
        for (position, label) in labeling.labels.iter().enumerate() {
            let gold = match label {
                Some(t) => tagger_tree
                    .leaf_index(t.as_str())
                    .map_err(|_| TrainError::LabelNotInTaxonomy(t.as_str().to_string()))?,
                None => none,
            };
            examples.push(TokenExample {
                doc: d,
                position,
                gold,
            });
        }
        docs.push(params.encode(&r.tokens));
    }
    Ok(EncodedCorpus { docs, examples })
}

/// One line of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub phase: usize,
    pub loss: LossKind,
    pub mean_loss: f64,
    pub token_accuracy: f64,
}

/// Runs `epochs` passes of shuffled mini-batch SGD with one loss.
#[allow(clippy::too_many_arguments)]
pub fn run_phase(
    params: &mut TaggerParams,
    tree: &TaxonomyTree,
    corpus: &EncodedCorpus,
    kind: LossKind,
    phase: usize,
    epochs: usize,
    lr: f64,
    cfg: &TrainConfig,
    rng: &mut ChaCha8Rng,
    log: &mut Vec<EpochMetrics>,
) {
    let mut order = corpus.examples.clone();
    for _ in 0..epochs {
        order.shuffle(rng);
        let mut total = 0.0;
        let mut correct = 0usize;
        for batch in order.chunks(cfg.batch_size) {
            let mut grads = params.zero_grads();
            for ex in batch {
                let (l, ok) = params.accumulate(
                    tree,
                    kind,
                    &corpus.docs[ex.doc],
                    ex.position,
                    ex.gold,
                    &mut grads,
                );
                total += l;
                correct += ok as usize;
            }
            params.apply(&grads, lr, cfg.l2, batch.len());
        }
        let n = order.len().max(1) as f64;
        log.push(EpochMetrics {
            epoch: log.len() + 1,
            phase,
            loss: kind,
            mean_loss: total / n,
            token_accuracy: correct as f64 / n,
        });
    }
}

/// Trained tagger plus its per-epoch log.
pub struct TrainedTagger {
    pub params: TaggerParams,
    pub log: Vec<EpochMetrics>,
}

/// Phase 1 minimizes the tree-conditional loss, phase 2 continues from those
/// parameters on flat cross-entropy at the smaller learning rate.
/// Deterministic for a given seed.
pub fn train_two_phase(
    ds: &Dataset,
    tree: &TaxonomyTree,
    cfg: &TrainConfig,
) -> Result<TrainedTagger, TrainError> {
    cfg.validate()?;
    if ds.reports().iter().all(|r| r.tokens.is_empty()) {
        return Err(TrainError::EmptyDataset);
    }
    let ttree = tagger_tree(tree)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut params = TaggerParams::init(tree, ds, cfg.embedding_dim, cfg.window, &mut rng);
    let corpus = encode_corpus(&params, &ttree, ds)?;
    let mut log = Vec::new();
    run_phase(
        &mut params,
        &ttree,
        &corpus,
        LossKind::Conditional,
        1,
        cfg.phase1_epochs,
        cfg.phase1_lr,
        cfg,
        &mut rng,
        &mut log,
    );
    run_phase(
        &mut params,
        &ttree,
        &corpus,
        LossKind::Unconditional,
        2,
        cfg.phase2_epochs,
        cfg.phase2_lr,
        cfg,
        &mut rng,
        &mut log,
    );
    Ok(TrainedTagger { params, log })
}

/// Per-token labels from the unconditional distribution.
pub fn predict_tags(params: &TaggerParams, tokens: &[String]) -> Vec<Option<EntityType>> {
    let ids = params.encode(tokens);
    params
        .predict_ids(&ids)
        .into_iter()
        .map(|o| o.and_then(|i| EntityType::parse(&params.outputs[i])))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecodeMode {
    /// Maximal runs of one label become one entity.
    #[default]
    Runs,
    /// One entity per labeled token.
    SingleToken,
}

/// Turns per-token labels into entities with ids `1, 2, ...` in token order.
pub fn decode_entities(
    tags: &[Option<EntityType>],
    tokens: &[String],
    mode: DecodeMode,
) -> Vec<Entity> {
    assert_eq!(tags.len(), tokens.len(), "tags and tokens must align");
    let mut spans: Vec<(usize, usize, EntityType)> = Vec::new();
    for (i, tag) in tags.iter().enumerate() {
        let Some(label) = *tag else { continue };
        match spans.last_mut() {
            Some((_, end, l)) if mode == DecodeMode::Runs && *l == label && *end + 1 == i => {
                *end = i
            }
            _ => spans.push((i, i, label)),
        }
    }
    spans
        .into_iter()
        .enumerate()
        .map(|(n, (start, end, label))| Entity {
            id: (n + 1).to_string(),
            tokens: tokens[start..=end].join(" "),
            start_ix: start,
            end_ix: end,
            label,
        })
        .collect()
}
