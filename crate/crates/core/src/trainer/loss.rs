//! Tree-conditional and flat cross-entropy losses with analytic gradients
//! with respect to the leaf logits.
//!
//! The conditional loss sums `-log P(n)` over the nodes on the gold leaf's
//! root path, where `P(n)` is the softmax mass of the subtree under `n`. For
//! a node with leaf set `S` the gradient of its term is
//! `p_j - [j in S] * p_j / P(n)`, and `p_j / P(n)` is the softmax restricted
//! to `S`, which is what gets computed.

use crate::taxonomy::{log_sum_exp, TaxonomyError, TaxonomyTree};

/// Per-term ceiling applied when a gold-path mass underflows.
pub const LOSS_CEILING: f64 = 1e3;

/// Gold-path masses below this are reported as numerically zero.
pub const MIN_GOLD_PROB: f64 = 1e-300;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    /// Sum of per-depth terms along the gold path.
    Conditional,
    /// Cross-entropy over all leaves.
    Unconditional,
}

impl LossKind {
    pub fn as_str(self) -> &'static str {
        match self {
            LossKind::Conditional => "conditional",
            LossKind::Unconditional => "unconditional",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossReport {
    pub loss: f64,
    /// One entry per depth `0..=max_depth`. `None` where the gold leaf has
    /// no node at that depth; depth 0 is the root's explicit zero.
    pub per_depth: Vec<Option<f64>>,
    /// d loss / d logits, aligned with the tree's leaves.
    pub grad: Vec<f64>,
    /// Set when some gold-path probability fell below [`MIN_GOLD_PROB`].
    pub clamped: bool,
}

fn clamp_term(term: f64, clamped: &mut bool) -> f64 {
    let term = term.max(0.0);
    if term > -MIN_GOLD_PROB.ln() {
        *clamped = true;
        term.min(LOSS_CEILING)
    } else {
        term
    }
}

pub fn conditional_hier_loss(
    tree: &TaxonomyTree,
    logits: &[f64],
    gold: &str,
) -> Result<LossReport, TaxonomyError> {
    let leaf = tree.leaf_index(gold)?;
    conditional_hier_loss_at(tree, logits, leaf)
}

/// [`conditional_hier_loss`] with the gold leaf given by index.
pub fn conditional_hier_loss_at(
    tree: &TaxonomyTree,
    logits: &[f64],
    gold: usize,
) -> Result<LossReport, TaxonomyError> {
    tree.check_logits(logits)?;
    let lse_all = log_sum_exp(logits.iter().copied());
    let probs: Vec<f64> = logits.iter().map(|x| (x - lse_all).exp()).collect();

    let mut per_depth = vec![None; tree.max_depth() + 1];
    per_depth[0] = Some(0.0);
    let mut grad = vec![0.0; logits.len()];
    let mut clamped = false;
    let mut loss = 0.0;

    for (depth, node) in tree.path_to_leaf(gold).into_iter().enumerate().skip(1) {
        let subtree = tree.subtree_leaves(node);
        let lse_sub = log_sum_exp(subtree.iter().map(|&j| logits[j]));
        let term = clamp_term(lse_all - lse_sub, &mut clamped);
        per_depth[depth] = Some(term);
        loss += term;
        for (g, p) in grad.iter_mut().zip(&probs) {
            *g += p;
        }
        for &j in subtree {
            grad[j] -= (logits[j] - lse_sub).exp();
        }
    }

    Ok(LossReport {
        loss,
        per_depth,
        grad,
        clamped,
    })
}

pub fn unconditional_loss(
    tree: &TaxonomyTree,
    logits: &[f64],
    gold: &str,
) -> Result<LossReport, TaxonomyError> {
    let leaf = tree.leaf_index(gold)?;
    unconditional_loss_at(tree, logits, leaf)
}

/// Flat cross-entropy; the single term is reported at the gold leaf's depth.
pub fn unconditional_loss_at(
    tree: &TaxonomyTree,
    logits: &[f64],
    gold: usize,
) -> Result<LossReport, TaxonomyError> {
    tree.check_logits(logits)?;
    let lse_all = log_sum_exp(logits.iter().copied());
    let mut grad: Vec<f64> = logits.iter().map(|x| (x - lse_all).exp()).collect();
    grad[gold] -= 1.0;

    let mut clamped = false;
    let loss = clamp_term(lse_all - logits[gold], &mut clamped);
    let mut per_depth = vec![None; tree.max_depth() + 1];
    per_depth[0] = Some(0.0);
    let depth = tree.depth(tree.leaf_node(gold));
    per_depth[depth] = Some(loss);

    Ok(LossReport {
        loss,
        per_depth,
        grad,
        clamped,
    })
}

pub fn loss_at(
    kind: LossKind,
    tree: &TaxonomyTree,
    logits: &[f64],
    gold: usize,
) -> Result<LossReport, TaxonomyError> {
    match kind {
        LossKind::Conditional => conditional_hier_loss_at(tree, logits, gold),
        LossKind::Unconditional => unconditional_loss_at(tree, logits, gold),
    }
}
