//! Central finite-difference checks of the analytic gradients.

use rand::seq::index::sample;
use rand::Rng;

use super::loss::{loss_at, LossKind};
use super::tagger::{TaggerParams, TokenExample};
use crate::taxonomy::{TaxonomyError, TaxonomyTree};

pub const STEP: f64 = 1e-5;
const DENOM_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheck {
    pub max_rel_error: f64,
    pub coordinates: usize,
    /// Largest absolute analytic and numeric components seen.
    pub max_abs_analytic: f64,
    pub max_abs_numeric: f64,
}

impl GradCheck {
    fn new() -> Self {
        Self {
            max_rel_error: 0.0,
            coordinates: 0,
            max_abs_analytic: 0.0,
            max_abs_numeric: 0.0,
        }
    }

    fn record(&mut self, analytic: f64, numeric: f64) {
        let denom = analytic.abs().max(numeric.abs()).max(DENOM_FLOOR);
        self.max_rel_error = self.max_rel_error.max((analytic - numeric).abs() / denom);
        self.max_abs_analytic = self.max_abs_analytic.max(analytic.abs());
        self.max_abs_numeric = self.max_abs_numeric.max(numeric.abs());
        self.coordinates += 1;
    }

    /// Worst-case merge of two checks.
    pub fn merge(mut self, other: &GradCheck) -> Self {
        self.max_rel_error = self.max_rel_error.max(other.max_rel_error);
        self.max_abs_analytic = self.max_abs_analytic.max(other.max_abs_analytic);
        self.max_abs_numeric = self.max_abs_numeric.max(other.max_abs_numeric);
        self.coordinates += other.coordinates;
        self
    }
}

/// Maximum relative error between `d loss / d logits` and central
/// differences over every logit coordinate.
pub fn gradient_check_logits(
    kind: LossKind,
    tree: &TaxonomyTree,
    logits: &[f64],
    gold: usize,
) -> Result<GradCheck, TaxonomyError> {
    let analytic = loss_at(kind, tree, logits, gold)?.grad;
    let mut check = GradCheck::new();
    let mut x = logits.to_vec();
    for j in 0..x.len() {
        let orig = x[j];
        x[j] = orig + STEP;
        let up = loss_at(kind, tree, &x, gold)?.loss;
        x[j] = orig - STEP;
        let down = loss_at(kind, tree, &x, gold)?.loss;
        x[j] = orig;
        check.record(analytic[j], (up - down) / (2.0 * STEP));
    }
    Ok(check)
}

enum Coord {
    Weight(usize),
    Bias(usize),
    Embedding(usize),
}

fn slot<'a>(params: &'a mut TaggerParams, c: &Coord) -> &'a mut f64 {
    match *c {
        Coord::Weight(i) => &mut params.weights[i],
        Coord::Bias(i) => &mut params.bias[i],
        Coord::Embedding(i) => &mut params.embeddings[i],
    }
}

/// Checks the gradient of the summed batch loss with respect to tagger
/// parameters on `coordinates` randomly chosen entries, split between
/// scorer weights, bias and the embedding rows the batch touches.
pub fn gradient_check_params(
    params: &TaggerParams,
    tree: &TaxonomyTree,
    kind: LossKind,
    docs: &[Vec<usize>],
    batch: &[TokenExample],
    coordinates: usize,
    rng: &mut impl Rng,
) -> GradCheck {
    let mut grads = params.zero_grads();
    for ex in batch {
        params.accumulate(tree, kind, &docs[ex.doc], ex.position, ex.gold, &mut grads);
    }
    let mut emb_grad = vec![0.0; params.embeddings.len()];
    for (row, g) in &grads.embeddings {
        for (k, gi) in g.iter().enumerate() {
            emb_grad[row * params.dim + k] += gi;
        }
    }
    let mut touched: Vec<usize> = grads
        .embeddings
        .iter()
        .flat_map(|(row, _)| (row * params.dim)..((row + 1) * params.dim))
        .collect();
    touched.sort_unstable();
    touched.dedup();

    let per_group = coordinates.div_ceil(3);
    let mut coords = Vec::with_capacity(coordinates);
    let w = params.weights.len();
    let b = params.bias.len();
    for i in sample(rng, w, per_group.min(w)) {
        coords.push(Coord::Weight(i));
    }
    for i in sample(rng, touched.len(), per_group.min(touched.len())) {
        coords.push(Coord::Embedding(touched[i]));
    }
    // Bias is small; top up with extra weights to reach the requested count.
    for i in 0..b.min(per_group) {
        coords.push(Coord::Bias(i));
    }
    while coords.len() < coordinates {
        coords.push(Coord::Weight(rng.gen_range(0..w)));
    }

    let mut probe = params.clone();
    let mut check = GradCheck::new();
    for c in &coords {
        let analytic = match *c {
            Coord::Weight(i) => grads.weights[i],
            Coord::Bias(i) => grads.bias[i],
            Coord::Embedding(i) => emb_grad[i],
        };
        let orig = *slot(&mut probe, c);
        *slot(&mut probe, c) = orig + STEP;
        let up = probe.batch_loss(tree, kind, docs, batch);
        *slot(&mut probe, c) = orig - STEP;
        let down = probe.batch_loss(tree, kind, docs, batch);
        *slot(&mut probe, c) = orig;
        check.record(analytic, (up - down) / (2.0 * STEP));
    }
    check
}
