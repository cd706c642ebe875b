//! Finite discrete-time market data: event tree, stock process, claims,
//! options and per-node ambiguity sets.
//!
//! All types are immutable value objects after construction and safe to share
//! across threads.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Index of a node in a [`ScenarioTree`]. Ids are dense (`0..n`) and
/// topologically ordered: a parent id is always smaller than its children's.
pub type NodeId = usize;

/// Absolute tolerance for probability normalization checks.
pub const PROB_TOL: f64 = 1e-12;

// ---------------------------------------------------------------------------
// ProbVector
// ---------------------------------------------------------------------------

/// A probability vector over the children of one node.
///
/// Entries are nonnegative and sum to one; weights are normalized on
/// construction.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProbVector {
    weights: Vec<f64>,
}

impl ProbVector {
    pub fn new(mut weights: Vec<f64>) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::MalformedSpec("empty probability vector".into()));
        }
        let mut sum = 0.0;
        for w in &mut weights {
            if !w.is_finite() || *w < -PROB_TOL {
                return Err(Error::MalformedSpec(format!(
                    "invalid probability weight {w}"
                )));
            }
            *w = w.max(0.0);
            sum += *w;
        }
        if sum <= 0.0 {
            return Err(Error::MalformedSpec("probability weights sum to 0".into()));
        }
        for w in &mut weights {
            *w /= sum;
        }
        Ok(Self { weights })
    }

    /// Point mass on child `i` out of `n`.
    pub fn dirac(i: usize, n: usize) -> Self {
        let mut w = vec![0.0; n];
        w[i] = 1.0;
        Self { weights: w }
    }

    pub fn uniform(n: usize) -> Self {
        Self {
            weights: vec![1.0 / n as f64; n],
        }
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.weights
    }

    /// Indices carrying strictly positive mass.
    pub fn support(&self) -> Vec<usize> {
        self.weights
            .iter()
            .enumerate()
            .filter(|(_, &w)| w > 0.0)
            .map(|(i, _)| i)
            .collect()
    }

    /// Expectation of a child-indexed payoff.
    pub fn expect(&self, values: &[f64]) -> f64 {
        self.weights.iter().zip(values).map(|(w, v)| w * v).sum()
    }
}

impl std::ops::Index<usize> for ProbVector {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.weights[i]
    }
}

// ---------------------------------------------------------------------------
// AmbiguitySet
// ---------------------------------------------------------------------------

/// Per-node family of transition probabilities over the node's children.
///
/// `ExtremePoints` represents the convex hull of the listed measures;
/// `WassersteinBall` the polytope of measures within transport cost `radius`
/// of `center` (cost matrix entries are nonnegative with zero diagonal).
#[derive(Debug, Clone, PartialEq)]
pub enum AmbiguitySet {
    ExtremePoints {
        measures: Vec<ProbVector>,
    },
    WassersteinBall {
        center: ProbVector,
        radius: f64,
        cost: Vec<Vec<f64>>,
    },
}

impl AmbiguitySet {
    pub fn singleton(p: ProbVector) -> Self {
        AmbiguitySet::ExtremePoints { measures: vec![p] }
    }

    pub fn extreme_points(measures: Vec<ProbVector>) -> Result<Self> {
        if measures.is_empty() {
            return Err(Error::MalformedSpec("empty ambiguity set".into()));
        }
        let n = measures[0].len();
        if measures.iter().any(|m| m.len() != n) {
            return Err(Error::DimensionMismatch(
                "ambiguity measures have differing lengths".into(),
            ));
        }
        Ok(AmbiguitySet::ExtremePoints { measures })
    }

    pub fn wasserstein_ball(center: ProbVector, radius: f64, cost: Vec<Vec<f64>>) -> Result<Self> {
        let n = center.len();
        if cost.len() != n || cost.iter().any(|row| row.len() != n) {
            return Err(Error::DimensionMismatch(
                "transport cost matrix does not match child count".into(),
            ));
        }
        if !radius.is_finite() || radius < 0.0 {
            return Err(Error::InvalidSpec(format!("invalid ball radius {radius}")));
        }
        for (i, row) in cost.iter().enumerate() {
            for (j, &c) in row.iter().enumerate() {
                if c.is_nan() || c < 0.0 {
                    return Err(Error::InvalidSpec(format!("invalid transport cost {c}")));
                }
                if i == j && c != 0.0 {
                    return Err(Error::InvalidSpec(
                        "transport cost diagonal must be zero".into(),
                    ));
                }
            }
        }
        Ok(AmbiguitySet::WassersteinBall {
            center,
            radius,
            cost,
        })
    }

    /// Number of children the measures run over.
    pub fn children(&self) -> usize {
        match self {
            AmbiguitySet::ExtremePoints { measures } => measures[0].len(),
            AmbiguitySet::WassersteinBall { center, .. } => center.len(),
        }
    }

    /// True when the set is a single measure.
    pub fn is_singleton(&self) -> bool {
        match self {
            AmbiguitySet::ExtremePoints { measures } => measures.len() == 1,
            AmbiguitySet::WassersteinBall { radius, .. } => *radius == 0.0,
        }
    }
}

// ---------------------------------------------------------------------------
// ScenarioTree
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
pub struct Node {
    pub id: NodeId,
    pub parent: Option<NodeId>,
    pub children: Vec<NodeId>,
    pub depth: usize,
    /// Stock values, one per asset.
    pub stock: Vec<f64>,
}

impl Node {
    pub fn is_leaf(&self) -> bool {
        self.children.is_empty()
    }
}

/// Finite event tree with a d-dimensional stock value attached to each node.
///
/// Every leaf sits at depth `horizon` and node ids are topologically ordered,
/// so a single reverse sweep over ids visits children before parents.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioTree {
    horizon: usize,
    dim: usize,
    nodes: Vec<Node>,
    leaves: Vec<NodeId>,
}

impl ScenarioTree {
    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn root(&self) -> NodeId {
        0
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn node(&self, id: NodeId) -> &Node {
        &self.nodes[id]
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    /// Leaf ids in increasing id order.
    pub fn leaves(&self) -> &[NodeId] {
        &self.leaves
    }

    /// Position of a leaf id within [`Self::leaves`].
    pub fn leaf_position(&self, id: NodeId) -> Option<usize> {
        self.leaves.binary_search(&id).ok()
    }

    /// Non-leaf node ids in increasing id order.
    pub fn interior(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.nodes
            .iter()
            .filter(|n| !n.is_leaf())
            .map(|n| n.id)
    }

    /// Stock increment along the edge into `child`, computed on demand.
    pub fn delta(&self, child: NodeId) -> Vec<f64> {
        let c = &self.nodes[child];
        let p = &self.nodes[c.parent.expect("root has no incoming edge")];
        c.stock
            .iter()
            .zip(&p.stock)
            .map(|(cs, ps)| cs - ps)
            .collect()
    }

    /// Stock increments of all children of `id`, row per child.
    pub fn deltas(&self, id: NodeId) -> Vec<Vec<f64>> {
        self.nodes[id]
            .children
            .iter()
            .map(|&c| self.delta(c))
            .collect()
    }

    /// Leaf ids below `id` (the node itself when it is a leaf).
    pub fn leaves_below(&self, id: NodeId) -> Vec<NodeId> {
        let mut out = Vec::new();
        let mut stack = vec![id];
        while let Some(n) = stack.pop() {
            if self.nodes[n].is_leaf() {
                out.push(n);
            } else {
                stack.extend(self.nodes[n].children.iter().rev());
            }
        }
        out.sort_unstable();
        out
    }

    /// Builds a tree directly from parent links and stock values.
    ///
    /// `parents[0]` must be `None` and all other entries must point to an
    /// earlier node.
    pub fn from_parents(
        horizon: usize,
        dim: usize,
        parents: Vec<Option<NodeId>>,
        stocks: Vec<Vec<f64>>,
    ) -> Result<Self> {
        if parents.len() != stocks.len() || parents.is_empty() {
            return Err(Error::MalformedSpec(
                "parent and stock lists must be equal and nonempty".into(),
            ));
        }
        if horizon == 0 || dim == 0 {
            return Err(Error::MalformedSpec(
                "horizon and dimension must be positive".into(),
            ));
        }
        let n = parents.len();
        let mut nodes: Vec<Node> = Vec::with_capacity(n);
        for (id, (parent, stock)) in parents.into_iter().zip(stocks).enumerate() {
            match parent {
                None if id != 0 => {
                    return Err(Error::MalformedSpec(format!(
                        "node {id} has no parent but is not the root"
                    )))
                }
                Some(_) if id == 0 => {
                    return Err(Error::MalformedSpec("root node must have no parent".into()))
                }
                Some(p) if p >= id => {
                    return Err(Error::MalformedSpec(format!(
                        "node {id} references parent {p}; parents must come first"
                    )))
                }
                _ => {}
            }
            if stock.len() != dim {
                return Err(Error::DimensionMismatch(format!(
                    "node {id} has {} stock entries, expected {dim}",
                    stock.len()
                )));
            }
            if stock.iter().any(|s| !s.is_finite()) {
                return Err(Error::NonFiniteStock(id));
            }
            let depth = match parent {
                None => 0,
                Some(p) => nodes[p].depth + 1,
            };
            if depth > horizon {
                return Err(Error::MalformedSpec(format!(
                    "node {id} sits at depth {depth} beyond horizon {horizon}"
                )));
            }
            nodes.push(Node {
                id,
                parent,
                children: Vec::new(),
                depth,
                stock,
            });
            if let Some(p) = parent {
                nodes[p].children.push(id);
            }
        }
        let leaves: Vec<NodeId> = nodes
            .iter()
            .filter(|n| n.children.is_empty())
            .map(|n| n.id)
            .collect();
        for &l in &leaves {
            if nodes[l].depth != horizon {
                return Err(Error::MalformedSpec(format!(
                    "leaf {l} has depth {} but the horizon is {horizon}",
                    nodes[l].depth
                )));
            }
        }
        Ok(Self {
            horizon,
            dim,
            nodes,
            leaves,
        })
    }
}

// ---------------------------------------------------------------------------
// Claims and options
// ---------------------------------------------------------------------------

/// A payoff with one finite real value per leaf, in leaf order.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClaimVector {
    values: Vec<f64>,
}

impl ClaimVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteClaim);
        }
        Ok(Self { values })
    }

    pub fn zeros(n: usize) -> Self {
        Self {
            values: vec![0.0; n],
        }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Entrywise `self + scale * other`.
    pub fn axpy(&self, scale: f64, other: &ClaimVector) -> Result<ClaimVector> {
        if self.len() != other.len() {
            return Err(Error::DimensionMismatch(
                "claims have differing leaf counts".into(),
            ));
        }
        ClaimVector::new(
            self.values
                .iter()
                .zip(&other.values)
                .map(|(a, b)| a + scale * b)
                .collect(),
        )
    }
}

/// Statically traded options, prices normalized to zero.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct OptionSet {
    pub payoffs: Vec<ClaimVector>,
}

impl OptionSet {
    pub fn empty() -> Self {
        Self::default()
    }

    pub fn new(payoffs: Vec<ClaimVector>) -> Self {
        Self { payoffs }
    }

    /// Number of traded options.
    pub fn e(&self) -> usize {
        self.payoffs.len()
    }
}

// ---------------------------------------------------------------------------
// Market bundle
// ---------------------------------------------------------------------------

/// A scenario tree together with per-node ambiguity, a claim and options.
#[derive(Debug, Clone, PartialEq)]
pub struct Market {
    pub tree: ScenarioTree,
    /// One ambiguity set per non-leaf node, indexed by node id.
    pub ambiguity: Vec<Option<AmbiguitySet>>,
    pub claim: ClaimVector,
    pub options: OptionSet,
}

impl Market {
    pub fn new(
        tree: ScenarioTree,
        ambiguity: Vec<Option<AmbiguitySet>>,
        claim: ClaimVector,
        options: OptionSet,
    ) -> Result<Self> {
        let m = Self {
            tree,
            ambiguity,
            claim,
            options,
        };
        let report = validate(&m.tree, &m.ambiguity, &m.claim, &m.options);
        if let Some(first) = report.issues.first() {
            return Err(Error::MalformedSpec(first.to_string()));
        }
        Ok(m)
    }

    pub fn ambiguity_at(&self, id: NodeId) -> &AmbiguitySet {
        self.ambiguity[id]
            .as_ref()
            .expect("interior node carries an ambiguity set")
    }

    /// Restriction of the market to the subtree rooted at `root`, with node
    /// ids renumbered topologically. Returns the new market and the map from
    /// old ids to new ones.
    pub fn subtree(&self, root: NodeId) -> (Market, BTreeMap<NodeId, NodeId>) {
        let mut order = Vec::new();
        let mut stack = vec![root];
        while let Some(n) = stack.pop() {
            order.push(n);
            stack.extend(self.tree.node(n).children.iter().rev());
        }
        order.sort_unstable();
        let map: BTreeMap<NodeId, NodeId> =
            order.iter().enumerate().map(|(new, &old)| (old, new)).collect();
        let root_depth = self.tree.node(root).depth;
        let parents: Vec<Option<NodeId>> = order
            .iter()
            .map(|&old| {
                if old == root {
                    None
                } else {
                    Some(map[&self.tree.node(old).parent.unwrap()])
                }
            })
            .collect();
        let stocks: Vec<Vec<f64>> = order.iter().map(|&o| self.tree.node(o).stock.clone()).collect();
        let tree = ScenarioTree::from_parents(
            self.tree.horizon() - root_depth,
            self.tree.dim(),
            parents,
            stocks,
        )
        .expect("subtree of a valid tree is valid");
        let ambiguity: Vec<Option<AmbiguitySet>> =
            order.iter().map(|&o| self.ambiguity[o].clone()).collect();
        let restrict = |c: &ClaimVector| -> ClaimVector {
            let values: Vec<f64> = tree
                .leaves()
                .iter()
                .map(|&new| {
                    let old = order[new];
                    let pos = self.tree.leaf_position(old).expect("leaf stays a leaf");
                    c.values()[pos]
                })
                .collect();
            ClaimVector::new(values).expect("finite claim stays finite")
        };
        let claim = restrict(&self.claim);
        let options = OptionSet::new(self.options.payoffs.iter().map(restrict).collect());
        (
            Market {
                tree,
                ambiguity,
                claim,
                options,
            },
            map,
        )
    }
}

// ---------------------------------------------------------------------------
// Structured-text spec (external interface)
// ---------------------------------------------------------------------------

/// JSON-compatible market description. Node ids must be the consecutive
/// integers `0..n` with parents listed before children; the parser rejects
/// unknown fields.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct TreeSpec {
    pub horizon: usize,
    pub dimension: usize,
    pub nodes: Vec<NodeSpec>,
    /// Payoff per leaf id; leaves not listed pay zero.
    #[serde(default)]
    pub claim: BTreeMap<String, f64>,
    /// Payoffs of statically traded options, one map per option.
    #[serde(default)]
    pub options: Vec<BTreeMap<String, f64>>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct NodeSpec {
    pub id: usize,
    pub parent: Option<usize>,
    pub stock: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ambiguity: Option<AmbiguitySpec>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(tag = "type", deny_unknown_fields)]
pub enum AmbiguitySpec {
    #[serde(rename = "extreme")]
    Extreme { measures: Vec<Vec<f64>> },
    #[serde(rename = "wball")]
    WBall {
        center: Vec<f64>,
        radius: f64,
        cost: Vec<Vec<f64>>,
    },
}

/// Builds a validated [`ScenarioTree`] from a structured spec.
pub fn build_tree(spec: &TreeSpec) -> Result<ScenarioTree> {
    for (i, n) in spec.nodes.iter().enumerate() {
        if n.id != i {
            return Err(Error::MalformedSpec(format!(
                "node ids must be consecutive from 0; position {i} has id {}",
                n.id
            )));
        }
    }
    ScenarioTree::from_parents(
        spec.horizon,
        spec.dimension,
        spec.nodes.iter().map(|n| n.parent).collect(),
        spec.nodes.iter().map(|n| n.stock.clone()).collect(),
    )
}

fn leaf_values(tree: &ScenarioTree, map: &BTreeMap<String, f64>) -> Result<ClaimVector> {
    let mut values = vec![0.0; tree.leaves().len()];
    for (key, &v) in map {
        let id: NodeId = key
            .parse()
            .map_err(|_| Error::MalformedSpec(format!("claim key {key:?} is not a node id")))?;
        let pos = tree
            .leaf_position(id)
            .ok_or_else(|| Error::MalformedSpec(format!("claim key {id} is not a leaf id")))?;
        values[pos] = v;
    }
    ClaimVector::new(values)
}

impl Market {
    /// Parses a structured spec into a validated market.
    pub fn from_spec(spec: &TreeSpec) -> Result<Self> {
        let tree = build_tree(spec)?;
        let mut ambiguity: Vec<Option<AmbiguitySet>> = vec![None; tree.len()];
        for n in &spec.nodes {
            let node = tree.node(n.id);
            match (&n.ambiguity, node.is_leaf()) {
                (Some(spec), false) => {
                    let nc = node.children.len();
                    let set = match spec {
                        AmbiguitySpec::Extreme { measures } => AmbiguitySet::extreme_points(
                            measures
                                .iter()
                                .cloned()
                                .map(ProbVector::new)
                                .collect::<Result<Vec<_>>>()?,
                        )?,
                        AmbiguitySpec::WBall {
                            center,
                            radius,
                            cost,
                        } => AmbiguitySet::wasserstein_ball(
                            ProbVector::new(center.clone())?,
                            *radius,
                            cost.clone(),
                        )?,
                    };
                    if set.children() != nc {
                        return Err(Error::DimensionMismatch(format!(
                            "node {}: ambiguity over {} children, node has {nc}",
                            n.id,
                            set.children()
                        )));
                    }
                    ambiguity[n.id] = Some(set);
                }
                (Some(_), true) => {
                    return Err(Error::MalformedSpec(format!(
                        "leaf {} must not carry an ambiguity set",
                        n.id
                    )))
                }
                (None, false) => {
                    return Err(Error::MalformedSpec(format!(
                        "non-leaf {} is missing an ambiguity set",
                        n.id
                    )))
                }
                (None, true) => {}
            }
        }
        let claim = leaf_values(&tree, &spec.claim)?;
        let options = OptionSet::new(
            spec.options
                .iter()
                .map(|o| leaf_values(&tree, o))
                .collect::<Result<Vec<_>>>()?,
        );
        Market::new(tree, ambiguity, claim, options)
    }

    /// Serializes the market back into the structured spec form.
    pub fn to_spec(&self) -> TreeSpec {
        let nodes = self
            .tree
            .nodes()
            .iter()
            .map(|n| NodeSpec {
                id: n.id,
                parent: n.parent,
                stock: n.stock.clone(),
                ambiguity: self.ambiguity[n.id].as_ref().map(|a| match a {
                    AmbiguitySet::ExtremePoints { measures } => AmbiguitySpec::Extreme {
                        measures: measures.iter().map(|m| m.as_slice().to_vec()).collect(),
                    },
                    AmbiguitySet::WassersteinBall {
                        center,
                        radius,
                        cost,
                    } => AmbiguitySpec::WBall {
                        center: center.as_slice().to_vec(),
                        radius: *radius,
                        cost: cost.clone(),
                    },
                }),
            })
            .collect();
        let claim = self
            .tree
            .leaves()
            .iter()
            .zip(self.claim.values())
            .map(|(&id, &v)| (id.to_string(), v))
            .collect();
        let options = self
            .options
            .payoffs
            .iter()
            .map(|o| {
                self.tree
                    .leaves()
                    .iter()
                    .zip(o.values())
                    .map(|(&id, &v)| (id.to_string(), v))
                    .collect()
            })
            .collect();
        TreeSpec {
            horizon: self.tree.horizon(),
            dimension: self.tree.dim(),
            nodes,
            claim,
            options,
        }
    }
}

// ---------------------------------------------------------------------------
// Validation
// ---------------------------------------------------------------------------

/// A single validation finding; `node` is set when the issue is local.
#[derive(Debug, Clone, Serialize)]
pub struct Diagnostic {
    pub node: Option<NodeId>,
    pub message: String,
}

impl std::fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self.node {
            Some(n) => write!(f, "node {n}: {}", self.message),
            None => write!(f, "{}", self.message),
        }
    }
}

/// Outcome of [`validate`]; empty `issues` means all invariants hold.
#[derive(Debug, Clone, Default, Serialize)]
pub struct ValidationReport {
    pub issues: Vec<Diagnostic>,
}

impl ValidationReport {
    pub fn is_ok(&self) -> bool {
        self.issues.is_empty()
    }

    fn push(&mut self, node: Option<NodeId>, message: impl Into<String>) {
        self.issues.push(Diagnostic {
            node,
            message: message.into(),
        });
    }
}

/// Reports dimension mismatches, missing or empty ambiguity sets and
/// claim/leaf mismatches. Diagnostics are returned, never thrown.
pub fn validate(
    tree: &ScenarioTree,
    ambiguity: &[Option<AmbiguitySet>],
    claim: &ClaimVector,
    options: &OptionSet,
) -> ValidationReport {
    let mut report = ValidationReport::default();
    if ambiguity.len() != tree.len() {
        report.push(
            None,
            format!(
                "ambiguity list has {} entries for {} nodes",
                ambiguity.len(),
                tree.len()
            ),
        );
    }
    for node in tree.nodes() {
        let amb = ambiguity.get(node.id).and_then(|a| a.as_ref());
        match (amb, node.is_leaf()) {
            (None, false) => report.push(Some(node.id), "missing ambiguity set"),
            (Some(_), true) => report.push(Some(node.id), "leaf carries an ambiguity set"),
            (Some(a), false) => {
                if a.children() != node.children.len() {
                    report.push(
                        Some(node.id),
                        format!(
                            "ambiguity over {} children, node has {}",
                            a.children(),
                            node.children.len()
                        ),
                    );
                }
            }
            (None, true) => {}
        }
    }
    if claim.len() != tree.leaves().len() {
        report.push(
            None,
            format!(
                "claim/leaf mismatch: {} claim entries for {} leaves",
                claim.len(),
                tree.leaves().len()
            ),
        );
    }
    for (i, o) in options.payoffs.iter().enumerate() {
        if o.len() != tree.leaves().len() {
            report.push(
                None,
                format!(
                    "option {i} payoff/leaf mismatch: {} entries for {} leaves",
                    o.len(),
                    tree.leaves().len()
                ),
            );
        }
    }
    report
}

/// Validates a raw spec before construction: reports non-normalized
/// probability vectors and structural issues without building anything.
pub fn validate_spec(spec: &TreeSpec) -> ValidationReport {
    let mut report = ValidationReport::default();
    for n in &spec.nodes {
        if let Some(AmbiguitySpec::Extreme { measures }) = &n.ambiguity {
            if measures.is_empty() {
                report.push(Some(n.id), "empty ambiguity set");
            }
            for m in measures {
                check_normalized(&mut report, n.id, m);
            }
        }
        if let Some(AmbiguitySpec::WBall { center, .. }) = &n.ambiguity {
            check_normalized(&mut report, n.id, center);
        }
        if n.stock.len() != spec.dimension {
            report.push(
                Some(n.id),
                format!(
                    "stock has {} entries, expected {}",
                    n.stock.len(),
                    spec.dimension
                ),
            );
        }
    }
    match build_tree(spec) {
        Err(e) => report.push(None, e.to_string()),
        Ok(tree) => {
            for key in spec.claim.keys().chain(spec.options.iter().flat_map(|o| o.keys())) {
                let ok = key
                    .parse::<NodeId>()
                    .ok()
                    .and_then(|id| tree.leaf_position(id))
                    .is_some();
                if !ok {
                    report.push(None, format!("claim/leaf mismatch: key {key:?} is not a leaf"));
                }
            }
        }
    }
    report
}

fn check_normalized(report: &mut ValidationReport, node: NodeId, weights: &[f64]) {
    if weights.iter().any(|w| *w < 0.0 || !w.is_finite()) {
        report.push(Some(node), "probability vector has invalid entries");
        return;
    }
    let sum: f64 = weights.iter().sum();
    if (sum - 1.0).abs() > PROB_TOL {
        report.push(
            Some(node),
            format!("probability vector not normalized (sum {sum})"),
        );
    }
}

// ---------------------------------------------------------------------------
// Canonical fixtures
// ---------------------------------------------------------------------------

/// Hand-built markets referenced throughout the test suites.
pub mod fixtures {
    use super::*;

    fn one_period(deltas: &[f64], ambiguity: AmbiguitySet) -> Market {
        let mut parents = vec![None];
        let mut stocks = vec![vec![0.0]];
        for &d in deltas {
            parents.push(Some(0));
            stocks.push(vec![d]);
        }
        let tree = ScenarioTree::from_parents(1, 1, parents, stocks).unwrap();
        let n = tree.len();
        let claim = ClaimVector::zeros(tree.leaves().len());
        let mut amb = vec![None; n];
        amb[0] = Some(ambiguity);
        Market::new(tree, amb, claim, OptionSet::empty()).unwrap()
    }

    /// One period, children (up, down) with moves (+1, -1) and the single
    /// measure (0.6, 0.4).
    pub fn b1() -> Market {
        one_period(
            &[1.0, -1.0],
            AmbiguitySet::singleton(ProbVector::new(vec![0.6, 0.4]).unwrap()),
        )
    }

    /// As B1 but with the two extreme measures (0.6, 0.4) and (0.4, 0.6).
    pub fn b2() -> Market {
        one_period(
            &[1.0, -1.0],
            AmbiguitySet::extreme_points(vec![
                ProbVector::new(vec![0.6, 0.4]).unwrap(),
                ProbVector::new(vec![0.4, 0.6]).unwrap(),
            ])
            .unwrap(),
        )
    }

    /// One period, moves (0, 1/2, 1) with the three Dirac measures: a
    /// discretization of the classical arbitrage family.
    pub fn arb1() -> Market {
        one_period(
            &[0.0, 0.5, 1.0],
            AmbiguitySet::extreme_points(vec![
                ProbVector::dirac(0, 3),
                ProbVector::dirac(1, 3),
                ProbVector::dirac(2, 3),
            ])
            .unwrap(),
        )
    }

    /// Two periods, recombining in value, B2-style ambiguity at every node.
    pub fn t2() -> Market {
        let parents = vec![None, Some(0), Some(0), Some(1), Some(1), Some(2), Some(2)];
        let stocks = vec![
            vec![0.0],
            vec![1.0],
            vec![-1.0],
            vec![2.0],
            vec![0.0],
            vec![0.0],
            vec![-2.0],
        ];
        let tree = ScenarioTree::from_parents(2, 1, parents, stocks).unwrap();
        let b2_set = || {
            AmbiguitySet::extreme_points(vec![
                ProbVector::new(vec![0.6, 0.4]).unwrap(),
                ProbVector::new(vec![0.4, 0.6]).unwrap(),
            ])
            .unwrap()
        };
        let mut amb = vec![None; tree.len()];
        for id in [0, 1, 2] {
            amb[id] = Some(b2_set());
        }
        let claim = ClaimVector::zeros(tree.leaves().len());
        Market::new(tree, amb, claim, OptionSet::empty()).unwrap()
    }
}
