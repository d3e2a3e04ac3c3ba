//! Randomized invariant and gradient suite over one taxonomy, shared by the
//! `loss-check` subcommand.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::taxonomy::{TaxonomyError, TaxonomyTree};
use crate::trainer::gradcheck::gradient_check_logits;
use crate::trainer::loss::{loss_at, LossKind};

pub const PROBABILITY_TOLERANCE: f64 = 1e-9;
pub const GRADIENT_TOLERANCE: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckReport {
    pub taxonomy_hash: String,
    pub trials: usize,
    /// Largest |product of conditionals along a path - leaf probability|.
    pub max_chain_error: f64,
    /// Largest |sum of leaf probabilities - 1|.
    pub max_leaf_sum_error: f64,
    /// Edges where the parent mass differs from the sum of its children.
    pub parent_sum_violations: usize,
    /// Edges where a child has more mass than its parent.
    pub monotonicity_violations: usize,
    /// Trials where the conditional loss fell below the flat loss by > 1e-9.
    pub dominance_violations: usize,
    /// Largest loss change under a constant logit shift.
    pub max_shift_error: f64,
    /// Largest |sum of per-depth components - loss|.
    pub max_component_error: f64,
    pub max_grad_error_conditional: f64,
    pub max_grad_error_unconditional: f64,
    pub clamped: usize,
}

impl CheckReport {
    pub fn failures(&self) -> Vec<String> {
        let mut out = Vec::new();
        let mut check = |ok: bool, msg: String| {
            if !ok {
                out.push(msg);
            }
        };
        check(
            self.max_chain_error <= PROBABILITY_TOLERANCE,
            format!("chain rule error {:.3e}", self.max_chain_error),
        );
        check(
            self.max_leaf_sum_error <= PROBABILITY_TOLERANCE,
            format!("leaf sum error {:.3e}", self.max_leaf_sum_error),
        );
        check(
            self.parent_sum_violations == 0,
            format!("{} parent-sum violations", self.parent_sum_violations),
        );
        check(
            self.monotonicity_violations == 0,
            format!("{} parent < child violations", self.monotonicity_violations),
        );
        check(
            self.dominance_violations == 0,
            format!("{} loss dominance violations", self.dominance_violations),
        );
        check(
            self.max_shift_error <= PROBABILITY_TOLERANCE,
            format!("shift invariance error {:.3e}", self.max_shift_error),
        );
        check(
            self.max_component_error <= PROBABILITY_TOLERANCE,
            format!("per-depth component error {:.3e}", self.max_component_error),
        );
        check(
            self.max_grad_error_conditional < GRADIENT_TOLERANCE,
            format!(
                "conditional gradient rel error {:.3e}",
                self.max_grad_error_conditional
            ),
        );
        check(
            self.max_grad_error_unconditional < GRADIENT_TOLERANCE,
            format!(
                "unconditional gradient rel error {:.3e}",
                self.max_grad_error_unconditional
            ),
        );
        check(
            self.clamped == 0,
            format!("{} clamped losses", self.clamped),
        );
        out
    }

    pub fn passed(&self) -> bool {
        self.failures().is_empty()
    }

    pub fn to_text(&self) -> String {
        format!(
            "trials: {}\nmax chain-rule error: {:.3e}\nmax leaf-sum error: {:.3e}\nparent-sum violations: {}\nmonotonicity violations: {}\ndominance violations: {}\nmax shift error: {:.3e}\nmax component error: {:.3e}\nmax gradient rel error (conditional): {:.3e}\nmax gradient rel error (unconditional): {:.3e}\nmax gradient rel error: {:.3e}\n",
            self.trials,
            self.max_chain_error,
            self.max_leaf_sum_error,
            self.parent_sum_violations,
            self.monotonicity_violations,
            self.dominance_violations,
            self.max_shift_error,
            self.max_component_error,
            self.max_grad_error_conditional,
            self.max_grad_error_unconditional,
            self.max_grad_error_conditional.max(self.max_grad_error_unconditional),
        )
    }
}

pub fn run_loss_checks(
    tree: &TaxonomyTree,
    trials: usize,
    seed: u64,
) -> Result<CheckReport, TaxonomyError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let k = tree.leaf_count();
    let mut r = CheckReport {
        taxonomy_hash: tree.config_hash().to_string(),
        trials,
        max_chain_error: 0.0,
        max_leaf_sum_error: 0.0,
        parent_sum_violations: 0,
        monotonicity_violations: 0,
        dominance_violations: 0,
        max_shift_error: 0.0,
        max_component_error: 0.0,
        max_grad_error_conditional: 0.0,
        max_grad_error_unconditional: 0.0,
        clamped: 0,
    };
    for _ in 0..trials {
        let logits: Vec<f64> = (0..k).map(|_| rng.gen_range(-5.0..5.0)).collect();
        let gold = rng.gen_range(0..k);
        let shift = rng.gen_range(-20.0..20.0);

        let dist = tree.leaf_distribution(&logits)?;
        let masses = tree.propagate(&dist)?;
        let leaf_sum: f64 = dist.probs().iter().sum();
        r.max_leaf_sum_error = r.max_leaf_sum_error.max((leaf_sum - 1.0).abs());
        for (id, node) in tree.nodes() {
            if node.is_leaf() {
                continue;
            }
            let sum: f64 = node.children.iter().map(|c| masses.get(*c)).sum();
            if sum != masses.get(id) {
                r.parent_sum_violations += 1;
            }
            for c in &node.children {
                if masses.get(*c) > masses.get(id) {
                    r.monotonicity_violations += 1;
                }
            }
        }
        for (leaf, &p) in dist.probs().iter().enumerate() {
            let mut product = 1.0;
            for node in tree.path_to_leaf(leaf).into_iter().skip(1) {
                product *= tree.conditional_probability(&masses, tree.name(node))?;
            }
            r.max_chain_error = r.max_chain_error.max((product - p).abs());
        }

        let shifted: Vec<f64> = logits.iter().map(|x| x + shift).collect();
        let mut losses = [0.0; 2];
        for (i, kind) in [LossKind::Conditional, LossKind::Unconditional]
            .into_iter()
            .enumerate()
        {
            let rep = loss_at(kind, tree, &logits, gold)?;
            let moved = loss_at(kind, tree, &shifted, gold)?;
            r.clamped += usize::from(rep.clamped);
            r.max_shift_error = r.max_shift_error.max((rep.loss - moved.loss).abs());
            let parts: f64 = rep.per_depth.iter().flatten().sum();
            r.max_component_error = r.max_component_error.max((parts - rep.loss).abs());
            losses[i] = rep.loss;
            let g = gradient_check_logits(kind, tree, &logits, gold)?.max_rel_error;
            match kind {
                LossKind::Conditional => {
                    r.max_grad_error_conditional = r.max_grad_error_conditional.max(g)
                }
                LossKind::Unconditional => {
                    r.max_grad_error_unconditional = r.max_grad_error_unconditional.max(g)
                }
            }
        }
        if losses[0] < losses[1] - PROBABILITY_TOLERANCE {
            r.dominance_violations += 1;
        }
    }
    Ok(r)
}
