//! Generators for robustified desk models: interval-parameter binomial
//! trees, a discretized Black-Scholes model with drift and distribution
//! uncertainty, Wasserstein-ball ambiguity sets, and the per-node surgery
//! that restores no-arbitrage for a single reference measure.

use crate::arbitrage::{na_check, NaVerdict, NodeMarket};
use crate::error::{Error, Result};
use crate::market::{AmbiguitySet, NodeId, ProbVector, ScenarioTree};

/// Interval-parameter binomial model: the probability of the down move and
/// both jump sizes range over intervals, discretized to their corners plus
/// an optional interior grid.
#[derive(Debug, Clone)]
pub struct BinomialSpec {
    pub horizon: usize,
    pub s0: f64,
    /// Probability of the down jump, inside (0, 1).
    pub p: (f64, f64),
    /// Down jump interval, strictly negative.
    pub down: (f64, f64),
    /// Up jump interval, strictly positive.
    pub up: (f64, f64),
    /// Grid points per parameter interval (2 = corners only).
    pub grid: usize,
}

impl BinomialSpec {
    fn validate(&self) -> Result<()> {
        let ok_interval = |(lo, hi): (f64, f64)| lo.is_finite() && hi.is_finite() && lo <= hi;
        if self.horizon == 0 {
            return Err(Error::InvalidSpec("horizon must be positive".into()));
        }
        if !ok_interval(self.p) || self.p.0 <= 0.0 || self.p.1 >= 1.0 {
            return Err(Error::InvalidSpec(format!(
                "down probability interval {:?} must lie inside (0, 1)",
                self.p
            )));
        }
        if !ok_interval(self.down) || self.down.1 >= 0.0 {
            return Err(Error::InvalidSpec(format!(
                "down jump interval {:?} must be negative",
                self.down
            )));
        }
        if !ok_interval(self.up) || self.up.0 <= 0.0 {
            return Err(Error::InvalidSpec(format!(
                "up jump interval {:?} must be positive",
                self.up
            )));
        }
        Ok(())
    }
}

/// Discretized Black-Scholes model: centered return distribution matched in
/// mean and variance on the given grid, drift interval, and an optional
/// transport ball around the discretized law.
#[derive(Debug, Clone)]
pub struct BlackScholesSpec {
    pub horizon: usize,
    pub s0: f64,
    pub dt: f64,
    pub drift: (f64, f64),
    /// Grid points for the drift interval (2 = corners only).
    pub drift_grid: usize,
    pub sigma: f64,
    /// Transport-ball radius around the discretized return law.
    pub radius: f64,
    /// Return grid carrying the discretized centered normal.
    pub return_grid: Vec<f64>,
}

/// Wasserstein-ball ambiguity over a fixed set of atoms.
#[derive(Debug, Clone)]
pub struct WassersteinSpec {
    pub center: Vec<f64>,
    pub radius: f64,
    /// Transport cost is `metric^order`.
    pub order: f64,
    pub metric: Vec<Vec<f64>>,
}

fn interval_grid((lo, hi): (f64, f64), count: usize) -> Vec<f64> {
    if hi <= lo {
        return vec![lo];
    }
    let count = count.max(2);
    (0..count)
        .map(|i| lo + (hi - lo) * i as f64 / (count - 1) as f64)
        .collect()
}

/// Builds the tree over the discretized jump values with the parameter box
/// mapped to extreme-point ambiguity. No-arbitrage holds at every node by
/// construction: jumps of both signs always carry mass.
pub fn robust_binomial(spec: &BinomialSpec) -> Result<(ScenarioTree, Vec<Option<AmbiguitySet>>)> {
    spec.validate()?;
    let downs = interval_grid(spec.down, spec.grid);
    let ups = interval_grid(spec.up, spec.grid);
    let ps = interval_grid(spec.p, spec.grid);
    // Children ordered by decreasing jump: up moves first.
    let mut jumps: Vec<f64> = ups.iter().chain(downs.iter()).copied().collect();
    jumps.sort_by(|a, b| b.total_cmp(a));
    jumps.dedup();
    let atom_index = |j: f64| jumps.iter().position(|&a| a == j).expect("atom");

    let mut measures = Vec::new();
    for &p in &ps {
        for &a in &downs {
            for &b in &ups {
                let mut w = vec![0.0; jumps.len()];
                w[atom_index(a)] += p;
                w[atom_index(b)] += 1.0 - p;
                measures.push(ProbVector::new(w)?);
            }
        }
    }
    let ambiguity_set = AmbiguitySet::extreme_points(measures)?;

    let mut parents: Vec<Option<NodeId>> = vec![None];
    let mut stocks: Vec<Vec<f64>> = vec![vec![spec.s0]];
    let mut frontier = vec![0usize];
    for _ in 0..spec.horizon {
        let mut next = Vec::new();
        for &node in &frontier {
            for &j in &jumps {
                parents.push(Some(node));
                stocks.push(vec![stocks[node][0] + j]);
                next.push(parents.len() - 1);
            }
        }
        frontier = next;
    }
    let tree = ScenarioTree::from_parents(spec.horizon, 1, parents, stocks)?;
    let mut ambiguity = vec![None; tree.len()];
    for id in tree.interior() {
        ambiguity[id] = Some(ambiguity_set.clone());
    }
    Ok((tree, ambiguity))
}

/// Matches mean 0 and variance `sigma^2 dt` on the grid by exponential
/// tilting of the discretized normal weights.
fn moment_matched_center(grid: &[f64], variance: f64) -> Result<ProbVector> {
    if grid.len() < 3 {
        return Err(Error::InvalidSpec(
            "return grid needs at least three atoms".into(),
        ));
    }
    let base: Vec<f64> = grid
        .iter()
        .map(|&y| (-0.5 * y * y / variance).exp().max(1e-300))
        .collect();
    // Newton iteration on the tilt parameters (a, b) for the two moment
    // conditions under q_i proportional to base_i * exp(a y + b y^2).
    let mut a = 0.0f64;
    let mut b = 0.0f64;
    for _ in 0..200 {
        let w: Vec<f64> = grid
            .iter()
            .zip(&base)
            .map(|(&y, &p)| p * (a * y + b * y * y).exp())
            .collect();
        let s: f64 = w.iter().sum();
        let m1: f64 = grid.iter().zip(&w).map(|(&y, &wi)| y * wi).sum::<f64>() / s;
        let m2: f64 = grid.iter().zip(&w).map(|(&y, &wi)| y * y * wi).sum::<f64>() / s;
        let r1 = m1;
        let r2 = m2 - variance;
        if r1.abs() < 1e-14 && r2.abs() < 1e-14 * variance.max(1.0) {
            let q: Vec<f64> = w.iter().map(|&wi| wi / s).collect();
            return ProbVector::new(q);
        }
        // Jacobian of the moment map: central moments up to order four.
        let m3: f64 = grid.iter().zip(&w).map(|(&y, &wi)| y * y * y * wi).sum::<f64>() / s;
        let m4: f64 = grid
            .iter()
            .zip(&w)
            .map(|(&y, &wi)| y * y * y * y * wi)
            .sum::<f64>()
            / s;
        let j11 = m2 - m1 * m1;
        let j12 = m3 - m1 * m2;
        let j21 = m3 - m2 * m1;
        let j22 = m4 - m2 * m2;
        let det = j11 * j22 - j12 * j21;
        if det.abs() < 1e-300 {
            break;
        }
        a -= (j22 * r1 - j12 * r2) / det;
        b -= (-j21 * r1 + j11 * r2) / det;
        if !a.is_finite() || !b.is_finite() {
            break;
        }
    }
    Err(Error::InvalidSpec(format!(
        "cannot match variance {variance:.6e} on the given return grid"
    )))
}

/// Builds the discretized Black-Scholes tree. With zero radius the ambiguity
/// is the family of drift-shifted centers; with positive radius a transport
/// ball whose radius absorbs the drift spread.
pub fn robust_blackscholes(
    spec: &BlackScholesSpec,
) -> Result<(ScenarioTree, Vec<Option<AmbiguitySet>>)> {
    if spec.horizon == 0 || spec.dt <= 0.0 || spec.sigma <= 0.0 {
        return Err(Error::InvalidSpec(
            "horizon, time step and volatility must be positive".into(),
        ));
    }
    if spec.radius < 0.0 || spec.drift.0 > spec.drift.1 {
        return Err(Error::InvalidSpec("invalid radius or drift interval".into()));
    }
    if spec.return_grid.is_empty() {
        return Err(Error::InvalidSpec("empty return grid".into()));
    }
    let variance = spec.sigma * spec.sigma * spec.dt;
    let center = moment_matched_center(&spec.return_grid, variance)?;
    let drifts = interval_grid(spec.drift, spec.drift_grid);
    let mid_drift = 0.5 * (spec.drift.0 + spec.drift.1);
    // The merged ball is centered at the mid drift, whose return values
    // need atoms of their own.
    let mut atom_drifts = drifts.clone();
    if spec.radius > 0.0 && !atom_drifts.iter().any(|&m| (m - mid_drift).abs() < 1e-12) {
        atom_drifts.push(mid_drift);
    }

    // Gross returns per (drift, grid atom); identical values merge.
    let mut parents: Vec<Option<NodeId>> = vec![None];
    let mut stocks: Vec<Vec<f64>> = vec![vec![spec.s0]];
    let mut node_children_returns: Vec<(NodeId, Vec<f64>)> = Vec::new();
    let mut frontier = vec![0usize];
    for _ in 0..spec.horizon {
        let mut next = Vec::new();
        for &node in &frontier {
            let s = stocks[node][0];
            let mut returns: Vec<f64> = Vec::new();
            for &mu in &atom_drifts {
                for &y in &spec.return_grid {
                    let r = 1.0 + mu * spec.dt + y;
                    if !returns.iter().any(|&x| (x - r).abs() < 1e-12) {
                        returns.push(r);
                    }
                }
            }
            returns.sort_by(|a, b| b.total_cmp(a));
            for &r in &returns {
                parents.push(Some(node));
                stocks.push(vec![s * r]);
                next.push(parents.len() - 1);
            }
            node_children_returns.push((node, returns));
        }
        frontier = next;
    }
    let tree = ScenarioTree::from_parents(spec.horizon, 1, parents, stocks)?;

    let mut ambiguity: Vec<Option<AmbiguitySet>> = vec![None; tree.len()];
    for (node, returns) in node_children_returns {
        let s = tree.node(node).stock[0];
        let atom_of = |mu: f64, y: f64| -> usize {
            let r = 1.0 + mu * spec.dt + y;
            returns
                .iter()
                .position(|&x| (x - r).abs() < 1e-12)
                .expect("return atom")
        };
        let shifted_measure = |mu: f64| -> Result<ProbVector> {
            let mut w = vec![0.0; returns.len()];
            for (i, &y) in spec.return_grid.iter().enumerate() {
                w[atom_of(mu, y)] += center[i];
            }
            ProbVector::new(w)
        };
        let set = if spec.radius == 0.0 {
            let measures: Vec<ProbVector> = drifts
                .iter()
                .map(|&mu| shifted_measure(mu))
                .collect::<Result<Vec<_>>>()?;
            AmbiguitySet::extreme_points(measures)?
        } else {
            // One ball around the mid-drift center; widening the radius by
            // the worst drift transport cost covers every drifted ball.
            let ball_center = shifted_measure(mid_drift)?;
            let atoms: Vec<f64> = returns.iter().map(|&r| s * r).collect();
            let cost: Vec<Vec<f64>> = atoms
                .iter()
                .map(|&x| atoms.iter().map(|&y| (x - y).abs()).collect())
                .collect();
            let drift_spread = drifts
                .iter()
                .map(|&mu| (mu - mid_drift).abs())
                .fold(0.0, f64::max);
            let radius = spec.radius + s.abs() * spec.dt * drift_spread;
            AmbiguitySet::wasserstein_ball(ball_center, radius, cost)?
        };
        let m = NodeMarket::from_tree(&tree, node, &set)?;
        if let NaVerdict::Arbitrage { .. } = na_check(&m)? {
            return Err(Error::GridTooCoarse(format!(
                "discretized return law admits arbitrage at node {node}; widen the return grid"
            )));
        }
        ambiguity[node] = Some(set);
    }
    Ok((tree, ambiguity))
}

/// Builds a Wasserstein-ball ambiguity set with cost `metric^order`.
pub fn wasserstein_ball(spec: &WassersteinSpec) -> Result<AmbiguitySet> {
    if spec.order < 1.0 || !spec.order.is_finite() {
        return Err(Error::InvalidSpec(format!(
            "transport order must be at least 1, got {}",
            spec.order
        )));
    }
    let n = spec.center.len();
    if spec.metric.len() != n || spec.metric.iter().any(|r| r.len() != n) {
        return Err(Error::InvalidSpec(
            "metric shape does not match the atom count".into(),
        ));
    }
    for i in 0..n {
        for j in 0..n {
            let m = spec.metric[i][j];
            if m.is_nan() || m < 0.0 {
                return Err(Error::InvalidSpec(format!("invalid metric entry {m}")));
            }
            if (spec.metric[i][j] - spec.metric[j][i]).abs() > 1e-12 {
                return Err(Error::InvalidSpec("metric must be symmetric".into()));
            }
            if i == j && m != 0.0 {
                return Err(Error::InvalidSpec("metric diagonal must be zero".into()));
            }
        }
    }
    let cost: Vec<Vec<f64>> = spec
        .metric
        .iter()
        .map(|row| row.iter().map(|&m| m.powf(spec.order)).collect())
        .collect();
    AmbiguitySet::wasserstein_ball(ProbVector::new(spec.center.clone())?, spec.radius, cost)
}

/// Options for [`na_per_node_filter`].
#[derive(Debug, Clone, Default)]
pub struct NaFilterOptions {
    /// Apply the surgery to non-singleton ambiguity sets as well. The
    /// construction is stated for a single reference measure; extending it
    /// changes the represented family.
    pub generalize: bool,
    /// Insert a zero-move child (with a constant-stock chain to the horizon)
    /// when a failing node has none.
    pub insert_flat_child: bool,
}

/// Replaces the ambiguity at every node failing the no-arbitrage check by
/// the point mass on a zero-move child, inserting such a child when allowed.
/// The output passes the check at every node; ambiguity at healthy nodes is
/// returned bit-identical.
pub fn na_per_node_filter(
    tree: &ScenarioTree,
    ambiguity: &[Option<AmbiguitySet>],
    opts: &NaFilterOptions,
) -> Result<(ScenarioTree, Vec<Option<AmbiguitySet>>)> {
    if !opts.generalize {
        for id in tree.interior() {
            if let Some(a) = &ambiguity[id] {
                if !a.is_singleton() {
                    return Err(Error::InvalidSpec(format!(
                        "node {id} has non-singleton ambiguity; pass generalize to filter anyway"
                    )));
                }
            }
        }
    }
    // Mutable copy in parent-link form for child insertion.
    let mut parents: Vec<Option<NodeId>> = tree.nodes().iter().map(|n| n.parent).collect();
    let mut stocks: Vec<Vec<f64>> = tree.nodes().iter().map(|n| n.stock.clone()).collect();
    let mut new_ambiguity: Vec<Option<AmbiguitySet>> = ambiguity.to_vec();
    let mut fixups: Vec<(NodeId, usize)> = Vec::new(); // (node, child position)

    for id in tree.interior() {
        let amb = ambiguity[id]
            .as_ref()
            .ok_or_else(|| Error::DimensionMismatch(format!("node {id} missing ambiguity")))?;
        let m = NodeMarket::from_tree(tree, id, amb)?;
        if let NaVerdict::NoArbitrage = na_check(&m)? {
            continue;
        }
        let deltas = tree.deltas(id);
        let flat = deltas
            .iter()
            .position(|d| d.iter().all(|&x| x == 0.0));
        match flat {
            Some(pos) => fixups.push((id, pos)),
            None if opts.insert_flat_child => {
                // Chain of zero-move nodes down to the horizon.
                let mut parent = id;
                let depth = tree.node(id).depth;
                let mut first_inserted = None;
                for _ in depth..tree.horizon() {
                    parents.push(Some(parent));
                    stocks.push(tree.node(id).stock.clone());
                    new_ambiguity.push(None);
                    parent = parents.len() - 1;
                    if first_inserted.is_none() {
                        first_inserted = Some(parent);
                    }
                }
                fixups.push((id, usize::MAX)); // resolved after rebuild
            }
            None => return Err(Error::NoFlatChild(id)),
        }
    }

    // Rebuild; node ids are unchanged because insertions append at the end.
    let rebuilt = ScenarioTree::from_parents(
        tree.horizon(),
        tree.dim(),
        parents.clone(),
        stocks.clone(),
    )?;
    for (id, pos) in fixups {
        let children = &rebuilt.node(id).children;
        let pos = if pos == usize::MAX {
            children
                .iter()
                .position(|&c| rebuilt.delta(c).iter().all(|&x| x == 0.0))
                .expect("flat child was inserted")
        } else {
            pos
        };
        new_ambiguity[id] = Some(AmbiguitySet::singleton(ProbVector::dirac(
            pos,
            children.len(),
        )));
    }
    // Inserted chain nodes need point-mass kernels on their single child.
    for id in rebuilt.interior() {
        if new_ambiguity.get(id).map_or(true, |a| a.is_none()) {
            let k = rebuilt.node(id).children.len();
            if new_ambiguity.len() <= id {
                new_ambiguity.resize(rebuilt.len(), None);
            }
            new_ambiguity[id] = Some(AmbiguitySet::singleton(ProbVector::dirac(0, k)));
        }
    }
    new_ambiguity.resize(rebuilt.len(), None);

    // The surgery must leave every node arbitrage-free.
    for id in rebuilt.interior() {
        let m = NodeMarket::from_tree(&rebuilt, id, new_ambiguity[id].as_ref().unwrap())?;
        if let NaVerdict::Arbitrage { witness } = na_check(&m)? {
            return Err(Error::Arbitrage { witness }.at_node(id));
        }
    }
    Ok((rebuilt, new_ambiguity))
}
