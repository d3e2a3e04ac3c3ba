//! Entity taxonomy trees and the probability calculus over them.
//!
//! A tree carries one logit per leaf. Leaf probabilities are the softmax of
//! those logits and every internal node's probability is the mass of its
//! subtree, so the root always carries probability one and a parent is never
//! less probable than any of its children.
//!
//! Trees are read from a plain-text config with one `PARENT CHILD` edge per
//! line. `#` starts a comment line and `ROOT` is the mandatory root name.
//! Leaves are indexed in the order their edge lines appear; that order is
//! the logit order of every model trained against the tree.

use std::collections::HashMap;
use std::fmt;

use sha2::{Digest, Sha256};
use thiserror::Error;

/// Name of the mandatory root node.
pub const ROOT: &str = "ROOT";

/// Probabilities below this are treated as zero mass when dividing.
pub const ZERO_MASS: f64 = 1e-12;

/// Tolerance used when validating that a distribution sums to one.
const SUM_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TaxonomyError {
    #[error("line {line}: expected `PARENT CHILD`, got {text:?}")]
    Syntax { line: usize, text: String },
    #[error("cycle detected at node {0}")]
    CycleDetected(String),
    #[error("multiple roots: {}", .0.join(", "))]
    MultipleRoots(Vec<String>),
    #[error("config has no {ROOT} node")]
    MissingRoot,
    #[error("node {0} declared more than once")]
    DuplicateNode(String),
    #[error("parent {0} is neither {ROOT} nor declared as a child")]
    UnknownParent(String),
    #[error("taxonomy needs at least two leaves, found {0}")]
    TooFewLeaves(usize),
    #[error("unknown node {0}")]
    UnknownNode(String),
    #[error("{0} is not a leaf")]
    NotALeaf(String),
    #[error("depth {depth} outside 0..={max_depth}")]
    DepthOutOfRange { depth: usize, max_depth: usize },
    #[error("expected {expected} values, got {got}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("logit {index} is not finite")]
    NonFiniteLogit { index: usize },
    #[error("invalid leaf distribution: {0}")]
    InvalidDistribution(String),
    #[error("{0} is the root and has no parent")]
    RootHasNoParent(String),
    #[error("parent of {child} has probability {mass:e}, below the zero-mass threshold")]
    ZeroParentMass { child: String, mass: f64 },
}

pub type Result<T> = std::result::Result<T, TaxonomyError>;

/// Index of a node inside its tree. Only meaningful for the tree that issued it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TaxonomyNode {
    pub name: String,
    pub parent: Option<NodeId>,
    pub children: Vec<NodeId>,
    /// Edges between this node and the root.
    pub depth: usize,
}

impl TaxonomyNode {
    pub fn is_leaf(&self) -> bool {
        self.children.is_empty()
    }
}

#[derive(Debug, Clone)]
pub struct TaxonomyTree {
    nodes: Vec<TaxonomyNode>,
    by_name: HashMap<String, NodeId>,
    leaves: Vec<NodeId>,
    leaf_of_node: Vec<Option<usize>>,
    subtree_leaves: Vec<Vec<usize>>,
    /// Parents strictly before their children.
    top_down: Vec<NodeId>,
    max_depth: usize,
    edges: Vec<(String, String)>,
    hash: String,
}

impl PartialEq for TaxonomyTree {
    fn eq(&self, other: &Self) -> bool {
        self.edges == other.edges
    }
}

impl TaxonomyTree {
    /// Parses a taxonomy config and validates the resulting tree.
    pub fn parse(config: &str) -> Result<Self> {
        let mut edges = Vec::new();
        for (i, raw) in config.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let mut parts = line.split_whitespace();
            match (parts.next(), parts.next(), parts.next()) {
                (Some(parent), Some(child), None) => {
                    edges.push((parent.to_string(), child.to_string()))
                }
                _ => {
                    return Err(TaxonomyError::Syntax {
                        line: i + 1,
                        text: raw.to_string(),
                    })
                }
            }
        }
        Self::from_edges(edges)
    }

    pub fn from_edges<S: Into<String>>(edges: impl IntoIterator<Item = (S, S)>) -> Result<Self> {
        let edges: Vec<(String, String)> = edges
            .into_iter()
            .map(|(p, c)| (p.into(), c.into()))
            .collect();

        for (parent, child) in &edges {
            if parent == child || child == ROOT {
                return Err(TaxonomyError::CycleDetected(child.clone()));
            }
        }

        let mut nodes = vec![TaxonomyNode {
            name: ROOT.to_string(),
            parent: None,
            children: Vec::new(),
            depth: 0,
        }];
        let mut by_name = HashMap::new();
        by_name.insert(ROOT.to_string(), NodeId(0));
        for (_, child) in &edges {
            if by_name.contains_key(child) {
                return Err(TaxonomyError::DuplicateNode(child.clone()));
            }
            by_name.insert(child.clone(), NodeId(nodes.len()));
            nodes.push(TaxonomyNode {
                name: child.clone(),
                parent: None,
                children: Vec::new(),
                depth: 0,
            });
        }

        let has_root = edges.iter().any(|(p, _)| p == ROOT);
        let mut orphans: Vec<String> = Vec::new();
        for (parent, _) in &edges {
            if parent != ROOT && !by_name.contains_key(parent) && !orphans.contains(parent) {
                orphans.push(parent.clone());
            }
        }
        match (has_root, orphans.len()) {
            (true, 0) => {}
            (true, _) => return Err(TaxonomyError::UnknownParent(orphans.remove(0))),
            (false, 0) => {
                return match edges.first() {
                    Some((_, child)) => Err(TaxonomyError::CycleDetected(child.clone())),
                    None => Err(TaxonomyError::MissingRoot),
                }
            }
            (false, 1) => return Err(TaxonomyError::MissingRoot),
            (false, _) => return Err(TaxonomyError::MultipleRoots(orphans)),
        }

        for (parent, child) in &edges {
            let p = by_name[parent];
            let c = by_name[child];
            nodes[c.0].parent = Some(p);
            nodes[p.0].children.push(c);
        }

        // Breadth-first from the root; anything not reached hangs off a cycle.
        let mut top_down = vec![NodeId(0)];
        let mut seen = vec![false; nodes.len()];
        seen[0] = true;
        let mut cursor = 0;
        while cursor < top_down.len() {
            let id = top_down[cursor];
            cursor += 1;
            let depth = nodes[id.0].depth;
            for c in nodes[id.0].children.clone() {
                if seen[c.0] {
                    return Err(TaxonomyError::CycleDetected(nodes[c.0].name.clone()));
                }
                seen[c.0] = true;
                nodes[c.0].depth = depth + 1;
                top_down.push(c);
            }
        }
        if let Some(unreached) = seen.iter().position(|s| !s) {
            return Err(TaxonomyError::CycleDetected(nodes[unreached].name.clone()));
        }

        let leaves: Vec<NodeId> = (0..nodes.len())
            .map(NodeId)
            .filter(|id| nodes[id.0].is_leaf())
            .collect();
        if leaves.len() < 2 {
            return Err(TaxonomyError::TooFewLeaves(leaves.len()));
        }
        let mut leaf_of_node = vec![None; nodes.len()];
        for (i, id) in leaves.iter().enumerate() {
            leaf_of_node[id.0] = Some(i);
        }

        let mut subtree_leaves = vec![Vec::new(); nodes.len()];
        for (i, leaf) in leaves.iter().enumerate() {
            let mut cur = Some(*leaf);
            while let Some(id) = cur {
                subtree_leaves[id.0].push(i);
                cur = nodes[id.0].parent;
            }
        }

        let max_depth = nodes.iter().map(|n| n.depth).max().unwrap_or(0);

        let mut hasher = Sha256::new();
        for (p, c) in &edges {
            hasher.update(p.as_bytes());
            hasher.update(b" ");
            hasher.update(c.as_bytes());
            hasher.update(b"\n");
        }
        let hash = hex::encode(hasher.finalize());

        Ok(Self {
            nodes,
            by_name,
            leaves,
            leaf_of_node,
            subtree_leaves,
            top_down,
            max_depth,
            edges,
            hash,
        })
    }

    /// Same tree with one extra leaf attached directly under the root.
    pub fn with_leaf_under_root(&self, name: &str) -> Result<Self> {
        let mut edges = self.edges.clone();
        edges.push((ROOT.to_string(), name.to_string()));
        Self::from_edges(edges)
    }

    /// Canonical config text; parsing it yields an identical tree.
    pub fn to_config(&self) -> String {
        self.edges
            .iter()
            .map(|(p, c)| format!("{p} {c}\n"))
            .collect()
    }

    /// SHA-256 over the canonical edge list.
    pub fn config_hash(&self) -> &str {
        &self.hash
    }

    pub fn edges(&self) -> &[(String, String)] {
        &self.edges
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn root(&self) -> NodeId {
        NodeId(0)
    }

    pub fn node(&self, id: NodeId) -> &TaxonomyNode {
        &self.nodes[id.0]
    }

    pub fn nodes(&self) -> impl Iterator<Item = (NodeId, &TaxonomyNode)> {
        self.nodes.iter().enumerate().map(|(i, n)| (NodeId(i), n))
    }

    pub fn id(&self, name: &str) -> Result<NodeId> {
        self.by_name
            .get(name)
            .copied()
            .ok_or_else(|| TaxonomyError::UnknownNode(name.to_string()))
    }

    pub fn name(&self, id: NodeId) -> &str {
        &self.nodes[id.0].name
    }

    /// Number of leaves, i.e. the number of logits a model emits.
    pub fn leaf_count(&self) -> usize {
        self.leaves.len()
    }

    pub fn leaves(&self) -> &[NodeId] {
        &self.leaves
    }

    pub fn leaf_names(&self) -> Vec<&str> {
        self.leaves.iter().map(|id| self.name(*id)).collect()
    }

    pub fn leaf_node(&self, leaf: usize) -> NodeId {
        self.leaves[leaf]
    }

    pub fn leaf_index(&self, name: &str) -> Result<usize> {
        let id = self.id(name)?;
        self.leaf_of_node[id.0].ok_or_else(|| TaxonomyError::NotALeaf(name.to_string()))
    }

    pub fn leaf_index_of(&self, id: NodeId) -> Option<usize> {
        self.leaf_of_node[id.0]
    }

    /// Leaf indices below `id` (the node itself if it is a leaf), ascending.
    pub fn subtree_leaves(&self, id: NodeId) -> &[usize] {
        &self.subtree_leaves[id.0]
    }

    pub fn max_depth(&self) -> usize {
        self.max_depth
    }

    pub fn depth(&self, id: NodeId) -> usize {
        self.nodes[id.0].depth
    }

    /// Node ids ordered so that every parent precedes its children.
    pub fn top_down(&self) -> &[NodeId] {
        &self.top_down
    }

    /// Root-to-leaf path of a leaf, root first. Entry `d` is the node at depth `d`.
    pub fn path_to_leaf(&self, leaf: usize) -> Vec<NodeId> {
        let mut path = Vec::with_capacity(self.max_depth + 1);
        let mut cur = Some(self.leaves[leaf]);
        while let Some(id) = cur {
            path.push(id);
            cur = self.nodes[id.0].parent;
        }
        path.reverse();
        path
    }

    /// True iff `a` lies on the root path of `b`, excluding `b` itself.
    pub fn is_ancestor(&self, a: &str, b: &str) -> Result<bool> {
        let a = self.id(a)?;
        let b = self.id(b)?;
        Ok(self.is_ancestor_id(a, b))
    }

    pub fn is_ancestor_id(&self, a: NodeId, b: NodeId) -> bool {
        let mut cur = self.nodes[b.0].parent;
        while let Some(id) = cur {
            if id == a {
                return true;
            }
            cur = self.nodes[id.0].parent;
        }
        false
    }

    /// Softmax over the leaf logits.
    pub fn leaf_distribution(&self, logits: &[f64]) -> Result<LeafDistribution> {
        self.check_logits(logits)?;
        Ok(LeafDistribution {
            probs: softmax(logits),
        })
    }

    pub(crate) fn check_logits(&self, logits: &[f64]) -> Result<()> {
        if logits.len() != self.leaf_count() {
            return Err(TaxonomyError::LengthMismatch {
                expected: self.leaf_count(),
                got: logits.len(),
            });
        }
        if let Some(index) = logits.iter().position(|x| !x.is_finite()) {
            return Err(TaxonomyError::NonFiniteLogit { index });
        }
        Ok(())
    }

    /// Subtree masses for every node, computed bottom-up in one pass.
    pub fn propagate(&self, dist: &LeafDistribution) -> Result<NodeProbabilities> {
        if dist.probs.len() != self.leaf_count() {
            return Err(TaxonomyError::LengthMismatch {
                expected: self.leaf_count(),
                got: dist.probs.len(),
            });
        }
        let mut values = vec![0.0; self.nodes.len()];
        for id in self.top_down.iter().rev() {
            let node = &self.nodes[id.0];
            values[id.0] = match self.leaf_of_node[id.0] {
                Some(leaf) => dist.probs[leaf],
                None => node.children.iter().map(|c| values[c.0]).sum(),
            };
        }
        Ok(NodeProbabilities { values })
    }

    /// P(child | parent) = P(child) / P(parent) over subtree masses.
    pub fn conditional_probability(&self, probs: &NodeProbabilities, child: &str) -> Result<f64> {
        let id = self.id(child)?;
        let parent = self.nodes[id.0]
            .parent
            .ok_or_else(|| TaxonomyError::RootHasNoParent(child.to_string()))?;
        let mass = probs.get(parent);
        if mass < ZERO_MASS {
            return Err(TaxonomyError::ZeroParentMass {
                child: child.to_string(),
                mass,
            });
        }
        Ok(probs.get(id) / mass)
    }

    /// The gold leaf's node at depth `d`: the leaf itself at its own depth,
    /// its unique ancestor above that, `None` below it.
    pub fn correct_node_at_depth(&self, gold_leaf: &str, d: usize) -> Result<Option<NodeId>> {
        let leaf = self.leaf_index(gold_leaf)?;
        if d > self.max_depth {
            return Err(TaxonomyError::DepthOutOfRange {
                depth: d,
                max_depth: self.max_depth,
            });
        }
        Ok(self.path_to_leaf(leaf).get(d).copied())
    }

    pub fn argmax_leaf(&self, dist: &LeafDistribution) -> &str {
        self.name(self.leaves[dist.argmax()])
    }
}

impl fmt::Display for TaxonomyTree {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fn walk(t: &TaxonomyTree, id: NodeId, f: &mut fmt::Formatter<'_>) -> fmt::Result {
            let node = t.node(id);
            writeln!(f, "{}{}", "  ".repeat(node.depth), node.name)?;
            for c in &node.children {
                walk(t, *c, f)?;
            }
            Ok(())
        }
        walk(self, self.root(), f)
    }
}

/// Softmax probabilities aligned with the tree's leaf order.
#[derive(Debug, Clone, PartialEq)]
pub struct LeafDistribution {
    probs: Vec<f64>,
}

impl LeafDistribution {
    pub fn from_probs(probs: Vec<f64>) -> Result<Self> {
        if let Some(p) = probs.iter().find(|p| !(0.0..=1.0).contains(*p)) {
            return Err(TaxonomyError::InvalidDistribution(format!(
                "entry {p} outside [0, 1]"
            )));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > SUM_TOLERANCE {
            return Err(TaxonomyError::InvalidDistribution(format!(
                "entries sum to {total}"
            )));
        }
        Ok(Self { probs })
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    /// Index of the largest probability; ties go to the lowest index.
    pub fn argmax(&self) -> usize {
        argmax(&self.probs)
    }
}

/// Probability of every node in the tree, indexed by [`NodeId`].
#[derive(Debug, Clone, PartialEq)]
pub struct NodeProbabilities {
    values: Vec<f64>,
}

impl NodeProbabilities {
    pub fn get(&self, id: NodeId) -> f64 {
        self.values[id.0]
    }

    pub fn by_name(&self, tree: &TaxonomyTree, name: &str) -> Result<f64> {
        Ok(self.get(tree.id(name)?))
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

/// First index of the maximum. Returns 0 for an empty slice.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

pub fn log_sum_exp(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = values.clone().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + values.map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Max-shifted softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|x| (x - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// Taxonomies that ship with the crate, by name.
pub mod shipped {
    use super::{Result, TaxonomyTree};

    pub const RADGRAPH2_DEPTH3: &str = include_str!("../taxonomies/radgraph2_depth3.txt");
    pub const RADGRAPH2_DEPTH2: &str = include_str!("../taxonomies/radgraph2_depth2.txt");
    pub const RADGRAPH1_DEPTH2: &str = include_str!("../taxonomies/radgraph1_depth2.txt");

    pub const NAMES: [&str; 3] = ["radgraph2_depth3", "radgraph2_depth2", "radgraph1_depth2"];

    pub fn config(name: &str) -> Option<&'static str> {
        match name.trim_end_matches(".txt") {
            "radgraph2_depth3" => Some(RADGRAPH2_DEPTH3),
            "radgraph2_depth2" => Some(RADGRAPH2_DEPTH2),
            "radgraph1_depth2" => Some(RADGRAPH1_DEPTH2),
            _ => None,
        }
    }

    pub fn load(name: &str) -> Option<Result<TaxonomyTree>> {
        config(name).map(TaxonomyTree::parse)
    }

    pub fn radgraph2_depth3() -> TaxonomyTree {
        TaxonomyTree::parse(RADGRAPH2_DEPTH3).expect("shipped taxonomy is valid")
    }

    pub fn radgraph2_depth2() -> TaxonomyTree {
        TaxonomyTree::parse(RADGRAPH2_DEPTH2).expect("shipped taxonomy is valid")
    }

    pub fn radgraph1_depth2() -> TaxonomyTree {
        TaxonomyTree::parse(RADGRAPH1_DEPTH2).expect("shipped taxonomy is valid")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn depth3() -> TaxonomyTree {
        shipped::radgraph2_depth3()
    }

    #[test]
    fn shipped_trees_have_expected_shape() {
        let t = depth3();
        assert_eq!(t.leaf_count(), 12);
        assert_eq!(t.max_depth(), 3);
        assert_eq!(
            t.leaf_names(),
            vec![
                "ANAT-DP",
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
            ]
        );

        let t2 = shipped::radgraph2_depth2();
        assert_eq!(t2.leaf_count(), 12);
        assert_eq!(t2.max_depth(), 2);
        assert_eq!(t.leaf_names(), t2.leaf_names());

        let t1 = shipped::radgraph1_depth2();
        assert_eq!(t1.leaf_count(), 4);
        assert_eq!(t1.max_depth(), 2);
        assert_eq!(t1.depth(t1.id("ANAT-DP").unwrap()), 1);
    }

    #[test]
    fn node_invariants_hold() {
        for t in [
            depth3(),
            shipped::radgraph2_depth2(),
            shipped::radgraph1_depth2(),
        ] {
            let roots: Vec<_> = t.nodes().filter(|(_, n)| n.parent.is_none()).collect();
            assert_eq!(roots.len(), 1);
            assert_eq!(roots[0].1.name, ROOT);
            assert_eq!(roots[0].1.depth, 0);
            for (id, n) in t.nodes() {
                if let Some(p) = n.parent {
                    assert_eq!(n.depth, t.node(p).depth + 1);
                    assert!(t.node(p).children.contains(&id));
                }
                assert_eq!(n.is_leaf(), t.leaf_index_of(id).is_some());
            }
        }
    }

    #[test]
    fn config_errors() {
        assert!(matches!(
            TaxonomyTree::parse("ROOT A\nROOT B\nA A\n"),
            Err(TaxonomyError::CycleDetected(_))
        ));
        assert!(matches!(
            TaxonomyTree::parse("ROOT A\nROOT B\nA C\nB C\n"),
            Err(TaxonomyError::DuplicateNode(n)) if n == "C"
        ));
        assert!(matches!(
            TaxonomyTree::parse("ROOT A\nROOT B\nX C\n"),
            Err(TaxonomyError::UnknownParent(n)) if n == "X"
        ));
        assert!(matches!(
            TaxonomyTree::parse("X A\nY B\n"),
            Err(TaxonomyError::MultipleRoots(r)) if r == vec!["X".to_string(), "Y".to_string()]
        ));
        assert!(matches!(
            TaxonomyTree::parse("X A\nX B\n"),
            Err(TaxonomyError::MissingRoot)
        ));
        assert!(matches!(
            TaxonomyTree::parse("ROOT A\nROOT B\nC D\nD C\n"),
            Err(TaxonomyError::CycleDetected(_))
        ));
        assert!(matches!(
            TaxonomyTree::parse("ROOT A\nA ROOT\n"),
            Err(TaxonomyError::CycleDetected(_))
        ));
        assert!(matches!(
            TaxonomyTree::parse("ROOT A\n"),
            Err(TaxonomyError::TooFewLeaves(1))
        ));
        assert!(matches!(
            TaxonomyTree::parse("ROOT A extra\n"),
            Err(TaxonomyError::Syntax { line: 1, .. })
        ));
    }

    #[test]
    fn comments_and_blank_lines_are_ignored() {
        let t = TaxonomyTree::parse("# header\n\nROOT A\n  # indented comment\nROOT B\n").unwrap();
        assert_eq!(t.leaf_names(), vec!["A", "B"]);
    }

    #[test]
    fn config_round_trips_with_stable_hash() {
        let t = depth3();
        let again = TaxonomyTree::parse(&t.to_config()).unwrap();
        assert_eq!(t.config_hash(), again.config_hash());
        assert_ne!(t.config_hash(), shipped::radgraph2_depth2().config_hash());
    }

    #[test]
    fn ancestor_queries() {
        let t = depth3();
        assert!(t.is_ancestor("CHAN", "CHAN-CON-IMP").unwrap());
        assert!(t.is_ancestor("ROOT", "CHAN-CON-IMP").unwrap());
        assert!(!t.is_ancestor("CHAN-CON-IMP", "CHAN-CON-IMP").unwrap());
        assert!(!t.is_ancestor("OBS", "ANAT-DP").unwrap());
        assert!(!t.is_ancestor("CHAN-CON-IMP", "CHAN").unwrap());
        assert!(matches!(
            t.is_ancestor("NOPE", "CHAN"),
            Err(TaxonomyError::UnknownNode(_))
        ));
    }

    #[test]
    fn uniform_logits_give_uniform_leaves() {
        let t = depth3();
        let d = t.leaf_distribution(&[0.7; 12]).unwrap();
        for p in d.probs() {
            assert!((p - 1.0 / 12.0).abs() < 1e-15);
        }
        assert_eq!(t.argmax_leaf(&d), "ANAT-DP");
    }

    #[test]
    fn leaf_distribution_matches_direct_exponentiation() {
        let t = depth3();
        let mut logits = vec![0.0; 12];
        logits[0] = 2.0;
        logits[1] = 1.0;
        let d = t.leaf_distribution(&logits).unwrap();
        // e^2 + e + 10
        let z = 2f64.exp() + 1f64.exp() + 10.0;
        assert!((d.probs()[0] - 2f64.exp() / z).abs() < 1e-15);
        assert!((d.probs()[1] - 1f64.exp() / z).abs() < 1e-15);
        assert!((d.probs()[5] - 1.0 / z).abs() < 1e-15);
    }

    #[test]
    fn leaf_distribution_rejects_bad_input() {
        let t = depth3();
        assert!(matches!(
            t.leaf_distribution(&[0.0; 3]),
            Err(TaxonomyError::LengthMismatch {
                expected: 12,
                got: 3
            })
        ));
        let mut logits = vec![0.0; 12];
        logits[4] = f64::NAN;
        assert!(matches!(
            t.leaf_distribution(&logits),
            Err(TaxonomyError::NonFiniteLogit { index: 4 })
        ));
        logits[4] = f64::INFINITY;
        assert!(t.leaf_distribution(&logits).is_err());
    }

    #[test]
    fn huge_logits_do_not_overflow() {
        let t = depth3();
        let mut logits = vec![1000.0; 12];
        logits[3] = 1001.0;
        let d = t.leaf_distribution(&logits).unwrap();
        assert!(d.probs().iter().all(|p| p.is_finite()));
        assert_eq!(t.argmax_leaf(&d), "OBS-DA");
    }

    #[test]
    fn uniform_propagation_counts_subtree_leaves() {
        let t = depth3();
        let probs = t
            .propagate(&t.leaf_distribution(&[0.0; 12]).unwrap())
            .unwrap();
        let p = |n: &str| probs.by_name(&t, n).unwrap();
        assert!((p("CHAN") - 8.0 / 12.0).abs() < 1e-12);
        assert!((p("OBS") - 3.0 / 12.0).abs() < 1e-12);
        assert!((p("ANAT") - 1.0 / 12.0).abs() < 1e-12);
        assert!((p("CHAN-CON") - 4.0 / 12.0).abs() < 1e-12);
        assert!((p("CHAN-DEV") - 3.0 / 12.0).abs() < 1e-12);
        assert!((p(ROOT) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn one_hot_propagation() {
        let t = depth3();
        let mut probs = vec![0.0; 12];
        probs[t.leaf_index("ANAT-DP").unwrap()] = 1.0;
        let dist = LeafDistribution::from_probs(probs).unwrap();
        let np = t.propagate(&dist).unwrap();
        assert_eq!(np.by_name(&t, "ANAT").unwrap(), 1.0);
        assert_eq!(np.by_name(&t, "OBS").unwrap(), 0.0);
        assert_eq!(np.by_name(&t, "CHAN").unwrap(), 0.0);
        assert_eq!(np.by_name(&t, ROOT).unwrap(), 1.0);
    }

    #[test]
    fn from_probs_validates() {
        assert!(LeafDistribution::from_probs(vec![0.5, 0.4]).is_err());
        assert!(LeafDistribution::from_probs(vec![1.5, -0.5]).is_err());
        assert!(LeafDistribution::from_probs(vec![0.5, 0.5]).is_ok());
    }

    #[test]
    fn conditional_probabilities() {
        let t = depth3();
        let uniform = t
            .propagate(&t.leaf_distribution(&[0.0; 12]).unwrap())
            .unwrap();
        let c = t.conditional_probability(&uniform, "CHAN-CON-IMP").unwrap();
        assert!((c - 0.25).abs() < 1e-12);
        assert!((t.conditional_probability(&uniform, "ANAT-DP").unwrap() - 1.0).abs() < 1e-12);
        assert!(matches!(
            t.conditional_probability(&uniform, ROOT),
            Err(TaxonomyError::RootHasNoParent(_))
        ));

        let mut probs = vec![0.0; 12];
        probs[t.leaf_index("OBS-U").unwrap()] = 1.0;
        let hot = t
            .propagate(&LeafDistribution::from_probs(probs).unwrap())
            .unwrap();
        assert_eq!(t.conditional_probability(&hot, "OBS-U").unwrap(), 1.0);
        assert!(matches!(
            t.conditional_probability(&hot, "CHAN-NC"),
            Err(TaxonomyError::ZeroParentMass { .. })
        ));
    }

    #[test]
    fn correct_node_at_depth_cases() {
        let t = depth3();
        let name = |o: Option<NodeId>| o.map(|id| t.name(id).to_string());
        assert_eq!(
            name(t.correct_node_at_depth("CHAN-CON-IMP", 1).unwrap()).as_deref(),
            Some("CHAN")
        );
        assert_eq!(
            name(t.correct_node_at_depth("CHAN-CON-IMP", 2).unwrap()).as_deref(),
            Some("CHAN-CON")
        );
        assert_eq!(
            name(t.correct_node_at_depth("CHAN-NC", 2).unwrap()).as_deref(),
            Some("CHAN-NC")
        );
        assert_eq!(
            name(t.correct_node_at_depth("CHAN-NC", 0).unwrap()).as_deref(),
            Some(ROOT)
        );
        assert_eq!(t.correct_node_at_depth("ANAT-DP", 3).unwrap(), None);
        assert!(matches!(
            t.correct_node_at_depth("CHAN", 1),
            Err(TaxonomyError::NotALeaf(_))
        ));
        assert!(matches!(
            t.correct_node_at_depth("ANAT-DP", 4),
            Err(TaxonomyError::DepthOutOfRange { .. })
        ));
    }

    #[test]
    fn argmax_cases() {
        let t = depth3();
        let mut probs = vec![0.0; 12];
        probs[t.leaf_index("OBS-DA").unwrap()] = 1.0;
        assert_eq!(
            t.argmax_leaf(&LeafDistribution::from_probs(probs).unwrap()),
            "OBS-DA"
        );
        let mut logits = vec![0.0; 12];
        logits[11] = 5.0;
        assert_eq!(
            t.argmax_leaf(&t.leaf_distribution(&logits).unwrap()),
            "CHAN-DEV-DISA"
        );
    }

    #[test]
    fn extra_leaf_under_root() {
        let t = depth3().with_leaf_under_root("NONE").unwrap();
        assert_eq!(t.leaf_count(), 13);
        assert_eq!(t.leaf_names()[12], "NONE");
        assert_eq!(t.depth(t.id("NONE").unwrap()), 1);
    }

    fn logits_strategy(k: usize) -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(-8.0f64..8.0, k)
    }

    proptest! {
        #[test]
        fn masses_are_monotone_and_consistent(logits in logits_strategy(12)) {
            let t = depth3();
            let dist = t.leaf_distribution(&logits).unwrap();
            let total: f64 = dist.probs().iter().sum();
            prop_assert!((total - 1.0).abs() < 1e-9);
            let np = t.propagate(&dist).unwrap();
            prop_assert!((np.get(t.root()) - 1.0).abs() < 1e-9);
            for (id, n) in t.nodes() {
                let v = np.get(id);
                prop_assert!((0.0..=1.0 + 1e-12).contains(&v));
                if let Some(p) = n.parent {
                    prop_assert!(np.get(p) >= v);
                }
            }
        }

        #[test]
        fn shift_invariance(logits in logits_strategy(12), c in -50.0f64..50.0) {
            let t = depth3();
            let a = t.leaf_distribution(&logits).unwrap();
            let shifted: Vec<f64> = logits.iter().map(|x| x + c).collect();
            let b = t.leaf_distribution(&shifted).unwrap();
            for (x, y) in a.probs().iter().zip(b.probs()) {
                prop_assert!((x - y).abs() < 1e-9);
            }
            prop_assert_eq!(a.argmax(), b.argmax());
        }

        #[test]
        fn correct_node_is_na_exactly_below_leaf(leaf in 0usize..12, d in 0usize..=3) {
            let t = depth3();
            let name = t.leaf_names()[leaf].to_string();
            let leaf_id = t.leaf_node(leaf);
            match t.correct_node_at_depth(&name, d).unwrap() {
                None => prop_assert!(d > t.depth(leaf_id)),
                Some(id) => {
                    prop_assert!(d <= t.depth(leaf_id));
                    prop_assert_eq!(t.depth(id), d);
                    prop_assert!(id == leaf_id || t.is_ancestor_id(id, leaf_id));
                }
            }
        }
    }
}
