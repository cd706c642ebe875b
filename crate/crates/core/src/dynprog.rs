//! Backward dynamic programming on the scenario tree: per-node one-period
//! solves, cash-invariant value field, strategy extraction and assembly of
//! the dual martingale-measure certificate via the entropy chain rule.

use rayon::prelude::*;

use crate::arbitrage::{na_check, NaVerdict, NodeMarket};
use crate::entropy::{robust_entropy_chain, visitation, EntropyDecomposition, KernelField};
use crate::error::{Error, Result};
use crate::market::{AmbiguitySet, ClaimVector, NodeId, ScenarioTree};
use crate::oneperiod::{robust_logsumexp, solve_pair};
use crate::SolverConfig;

/// Cash-invariant value of the problem at every node, together with the
/// per-node primal/dual residuals of the local solves.
#[derive(Debug, Clone)]
pub struct ValueField {
    pub values: Vec<f64>,
    pub residuals: Vec<f64>,
}

/// Dynamic strategy: one vector per non-leaf node, plus the static option
/// position (empty without options).
#[derive(Debug, Clone, PartialEq)]
pub struct Strategy {
    pub h: Vec<Option<Vec<f64>>>,
    pub alpha: Vec<f64>,
}

impl Strategy {
    pub fn zero(tree: &ScenarioTree) -> Self {
        let mut h = vec![None; tree.len()];
        for id in tree.interior() {
            h[id] = Some(vec![0.0; tree.dim()]);
        }
        Self {
            h,
            alpha: Vec::new(),
        }
    }

    pub fn h_at(&self, id: NodeId) -> &[f64] {
        self.h[id]
            .as_deref()
            .expect("strategy defined at interior node")
    }
}

/// Martingale measure given by per-node kernels; `leaf_law` is the product of
/// the kernels along each path and `unvisited` lists nodes the measure never
/// reaches (their kernels are unconstrained and kept only for reporting).
#[derive(Debug, Clone)]
pub struct MartingaleMeasure {
    pub kernels: KernelField,
    pub leaf_law: Vec<f64>,
    pub unvisited: Vec<NodeId>,
}

impl MartingaleMeasure {
    /// Builds the leaf law and visitation flags from kernels.
    pub fn from_kernels(tree: &ScenarioTree, kernels: KernelField) -> Result<Self> {
        let visit = visitation(tree, &kernels)?;
        let leaf_law = tree.leaves().iter().map(|&l| visit[l]).collect();
        let unvisited = tree.interior().filter(|&id| visit[id] == 0.0).collect();
        Ok(Self {
            kernels,
            leaf_law,
            unvisited,
        })
    }

    /// Expectation of a claim under the leaf law.
    pub fn expect(&self, claim: &ClaimVector) -> f64 {
        self.leaf_law
            .iter()
            .zip(claim.values())
            .map(|(w, v)| w * v)
            .sum()
    }

    /// Largest violation of the per-node martingale property over visited
    /// nodes.
    pub fn martingale_residual(&self, tree: &ScenarioTree) -> f64 {
        let mut worst = 0.0f64;
        for id in tree.interior() {
            if self.unvisited.contains(&id) {
                continue;
            }
            let kernel = self.kernels[id].as_ref().expect("interior kernel");
            let deltas = tree.deltas(id);
            for k in 0..tree.dim() {
                let m: f64 = (0..deltas.len()).map(|i| kernel[i] * deltas[i][k]).sum();
                worst = worst.max(m.abs());
            }
        }
        worst
    }
}

/// Martingale measure, entropy decomposition and achieved dual value: the
/// witness of the dual side of the valuation.
#[derive(Debug, Clone)]
pub struct DualCertificate {
    pub measure: MartingaleMeasure,
    pub entropy: EntropyDecomposition,
    pub dual_value: f64,
    pub attained: bool,
}

/// Result of a full backward sweep.
#[derive(Debug, Clone)]
pub struct BackwardSolution {
    /// Value at the root (cash-invariant part).
    pub value: f64,
    pub value_field: ValueField,
    pub strategy: Strategy,
    pub certificate: DualCertificate,
}

/// Verifies the per-node no-arbitrage condition at every interior node,
/// returning the first violation annotated with its node id.
pub fn check_na_everywhere(tree: &ScenarioTree, ambiguity: &[Option<AmbiguitySet>]) -> Result<()> {
    for id in tree.interior() {
        let m = node_market(tree, ambiguity, id)?;
        if let NaVerdict::Arbitrage { witness } = na_check(&m).map_err(|e| e.at_node(id))? {
            return Err(Error::Arbitrage { witness }.at_node(id));
        }
    }
    Ok(())
}

fn node_market(
    tree: &ScenarioTree,
    ambiguity: &[Option<AmbiguitySet>],
    id: NodeId,
) -> Result<NodeMarket> {
    let amb = ambiguity
        .get(id)
        .and_then(|a| a.as_ref())
        .ok_or_else(|| {
            Error::DimensionMismatch(format!("node {id} is missing an ambiguity set"))
        })?;
    NodeMarket::from_tree(tree, id, amb).map_err(|e| e.at_node(id))
}

/// Backward dynamic programming sweep. At each interior node the children's
/// values feed a one-period solve; the root value is the global one, the
/// per-node minimizers glue into the optimal dynamic strategy and the
/// per-node dual measures compose into the martingale certificate.
pub fn backward_solve(
    tree: &ScenarioTree,
    ambiguity: &[Option<AmbiguitySet>],
    claim: &ClaimVector,
    cfg: &SolverConfig,
) -> Result<BackwardSolution> {
    if claim.len() != tree.leaves().len() {
        return Err(Error::DimensionMismatch(format!(
            "claim has {} entries for {} leaves",
            claim.len(),
            tree.leaves().len()
        )));
    }
    if !cfg.force {
        check_na_everywhere(tree, ambiguity)?;
    }
    let mut values = vec![0.0f64; tree.len()];
    let mut residuals = vec![0.0f64; tree.len()];
    let mut h: Vec<Option<Vec<f64>>> = vec![None; tree.len()];
    let mut kernels: KernelField = vec![None; tree.len()];
    let mut attained = true;

    for (&leaf, &v) in tree.leaves().iter().zip(claim.values()) {
        values[leaf] = v;
    }

    // Interior nodes grouped by depth, deepest first; nodes of equal depth
    // are independent and solved in parallel with index-ordered collection.
    let mut by_depth: Vec<Vec<NodeId>> = vec![Vec::new(); tree.horizon()];
    for id in tree.interior() {
        by_depth[tree.node(id).depth].push(id);
    }
    let local_cfg = SolverConfig {
        force: true, // the gate already ran once for the whole tree
        ..cfg.clone()
    };
    for level in by_depth.into_iter().rev() {
        let solved: Result<Vec<_>> = level
            .par_iter()
            .map(|&id| {
                let m = node_market(tree, ambiguity, id)?;
                let x: Vec<f64> = tree.node(id).children.iter().map(|&c| values[c]).collect();
                let sol = solve_pair(&m, &x, &local_cfg).map_err(|e| e.at_node(id))?;
                Ok((id, sol))
            })
            .collect();
        for (id, sol) in solved? {
            values[id] = sol.value;
            residuals[id] = sol.gap;
            h[id] = Some(sol.h_star);
            kernels[id] = Some(sol.dual_q);
            attained &= sol.attained;
        }
    }

    let measure = MartingaleMeasure::from_kernels(tree, kernels)?;
    let entropy = robust_entropy_chain(tree, &measure.kernels, ambiguity)?;
    let dual_value = measure
        .leaf_law
        .iter()
        .zip(claim.values())
        .map(|(w, v)| w * v)
        .sum::<f64>()
        - entropy.total;
    let value = values[tree.root()];
    let slack = cfg.tol_gap * value.abs().max(1.0) * (tree.len() as f64);
    if !cfg.force && (dual_value - value).abs() > slack.max(1e-7) {
        return Err(Error::GapExceeded(format!(
            "assembled certificate value {dual_value:.12} vs root value {value:.12}"
        )));
    }
    Ok(BackwardSolution {
        value,
        value_field: ValueField { values, residuals },
        strategy: Strategy {
            h,
            alpha: Vec::new(),
        },
        certificate: DualCertificate {
            measure,
            entropy,
            dual_value,
            attained,
        },
    })
}

/// Worst-case log-exponential value of a *fixed* strategy: the supremum over
/// product measures decomposes nodewise because the composed functional is
/// monotone, so a single backward max-composition evaluates it.
pub fn evaluate_strategy(
    tree: &ScenarioTree,
    ambiguity: &[Option<AmbiguitySet>],
    claim: &ClaimVector,
    strategy: &Strategy,
) -> Result<f64> {
    let mut values = vec![0.0f64; tree.len()];
    for (&leaf, &v) in tree.leaves().iter().zip(claim.values()) {
        values[leaf] = v;
    }
    for id in (0..tree.len()).rev() {
        if tree.node(id).is_leaf() {
            continue;
        }
        let m = node_market(tree, ambiguity, id)?;
        let x: Vec<f64> = tree.node(id).children.iter().map(|&c| values[c]).collect();
        let h = strategy.h[id]
            .as_deref()
            .ok_or_else(|| Error::DimensionMismatch(format!("strategy missing at node {id}")))?;
        let (v, _) = robust_logsumexp(&m, &x, h)?;
        values[id] = v;
    }
    Ok(values[tree.root()])
}

/// Grid description for [`global_brute_check`].
#[derive(Debug, Clone)]
pub struct BruteGrid {
    pub lo: f64,
    pub hi: f64,
    pub step: f64,
    /// Maximum number of strategy evaluations.
    pub budget: u64,
}

impl BruteGrid {
    pub fn new(lo: f64, hi: f64, step: f64) -> Self {
        Self {
            lo,
            hi,
            step,
            budget: 50_000_000,
        }
    }
}

/// Reference minimization of [`evaluate_strategy`] over all per-node
/// strategies jointly, used by tests to validate the dynamic programming
/// sweep. Runs full per-coordinate grid scans at the requested resolution
/// (iterated until no coordinate moves) followed by a golden-section
/// refinement; the joint objective is convex, so coordinate sweeps reach the
/// global minimum up to grid resolution.
pub fn global_brute_check(
    tree: &ScenarioTree,
    ambiguity: &[Option<AmbiguitySet>],
    claim: &ClaimVector,
    grid: &BruteGrid,
) -> Result<f64> {
    if grid.lo >= grid.hi || grid.step <= 0.0 {
        return Err(Error::InvalidSpec(
            "grid bounds must satisfy lo < hi, step > 0".into(),
        ));
    }
    let d = tree.dim();
    let coords: Vec<(NodeId, usize)> = tree
        .interior()
        .flat_map(|id| (0..d).map(move |k| (id, k)))
        .collect();
    let steps_per_coord = ((grid.hi - grid.lo) / grid.step).ceil() as u64 + 1;
    let mut evals: u64 = 0;

    let mut strategy = Strategy::zero(tree);
    let eval = |s: &Strategy, evals: &mut u64| -> Result<f64> {
        *evals += 1;
        if *evals > grid.budget {
            return Err(Error::BudgetExceeded(format!(
                "brute-force budget of {} evaluations exhausted",
                grid.budget
            )));
        }
        evaluate_strategy(tree, ambiguity, claim, s)
    };
    let mut best = eval(&strategy, &mut evals)?;

    for _sweep in 0..24 {
        let mut moved = false;
        for &(id, k) in &coords {
            // Golden bracket over the whole range (the joint objective is
            // convex, hence unimodal per coordinate), then a literal grid
            // scan at the requested step around the bracket.
            let (mut lo, mut hi) = (grid.lo, grid.hi);
            let phi = (5f64.sqrt() - 1.0) / 2.0;
            for _ in 0..60 {
                if hi - lo <= grid.step {
                    break;
                }
                let m1 = hi - phi * (hi - lo);
                let m2 = lo + phi * (hi - lo);
                strategy.h[id].as_mut().unwrap()[k] = m1;
                let f1 = eval(&strategy, &mut evals)?;
                strategy.h[id].as_mut().unwrap()[k] = m2;
                let f2 = eval(&strategy, &mut evals)?;
                if f1 <= f2 {
                    hi = m2;
                } else {
                    lo = m1;
                }
            }
            let center = 0.5 * (lo + hi);
            let scan_lo = (center - 64.0 * grid.step).max(grid.lo);
            let scan_n = (((center + 64.0 * grid.step).min(grid.hi) - scan_lo) / grid.step)
                .ceil() as u64
                + 1;
            let mut local_best = best;
            let mut local_arg = strategy.h[id].as_ref().unwrap()[k];
            for s in 0..scan_n.min(steps_per_coord) {
                let v = scan_lo + s as f64 * grid.step;
                strategy.h[id].as_mut().unwrap()[k] = v;
                let val = eval(&strategy, &mut evals)?;
                if val < local_best - 1e-15 {
                    local_best = val;
                    local_arg = v;
                }
            }
            // Golden refinement inside one grid cell.
            let (mut lo, mut hi) = (
                (local_arg - grid.step).max(grid.lo),
                (local_arg + grid.step).min(grid.hi),
            );
            for _ in 0..40 {
                let m1 = hi - phi * (hi - lo);
                let m2 = lo + phi * (hi - lo);
                strategy.h[id].as_mut().unwrap()[k] = m1;
                let f1 = eval(&strategy, &mut evals)?;
                strategy.h[id].as_mut().unwrap()[k] = m2;
                let f2 = eval(&strategy, &mut evals)?;
                if f1 <= f2 {
                    hi = m2;
                } else {
                    lo = m1;
                }
            }
            let refined = 0.5 * (lo + hi);
            strategy.h[id].as_mut().unwrap()[k] = refined;
            let refined_val = eval(&strategy, &mut evals)?;
            let (arg, val) = if refined_val <= local_best {
                (refined, refined_val)
            } else {
                (local_arg, local_best)
            };
            strategy.h[id].as_mut().unwrap()[k] = arg;
            if val < best - 1e-13 * best.abs().max(1.0) {
                moved = true;
            }
            best = best.min(val);
        }
        if !moved {
            break;
        }
    }
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::market::fixtures;

    fn cfg() -> SolverConfig {
        SolverConfig::default()
    }

    fn b1_entropy() -> f64 {
        0.5 * (0.5f64 / 0.6).ln() + 0.5 * (0.5f64 / 0.4).ln()
    }

    #[test]
    fn one_period_tree_delegates_to_the_local_solver() {
        let m = fixtures::b1();
        let sol = backward_solve(&m.tree, &m.ambiguity, &m.claim, &cfg()).unwrap();
        assert!((sol.value + b1_entropy()).abs() < 1e-9);
        let h = sol.strategy.h_at(0);
        assert!((h[0] - 0.5 * (2f64 / 3.0).ln()).abs() < 1e-6);
        let q = sol.certificate.measure.kernels[0].as_ref().unwrap();
        assert!((q[0] - 0.5).abs() < 1e-8);
    }

    #[test]
    fn symmetric_two_period_tree_has_zero_value() {
        let m = fixtures::t2();
        let sol = backward_solve(&m.tree, &m.ambiguity, &m.claim, &cfg()).unwrap();
        assert!(sol.value.abs() < 1e-8, "value {}", sol.value);
        for id in m.tree.interior() {
            assert!(sol.strategy.h_at(id)[0].abs() < 1e-6);
        }
        assert!(sol.certificate.entropy.total.abs() < 1e-8);
    }

    #[test]
    fn constant_claim_returns_the_constant() {
        let mut m = fixtures::b2();
        m.claim = crate::market::ClaimVector::new(vec![2.5, 2.5]).unwrap();
        let sol = backward_solve(&m.tree, &m.ambiguity, &m.claim, &cfg()).unwrap();
        assert!((sol.value - 2.5).abs() < 1e-9);
    }

    #[test]
    fn zero_strategy_on_b1_gives_zero() {
        let m = fixtures::b1();
        let s = Strategy::zero(&m.tree);
        let v = evaluate_strategy(&m.tree, &m.ambiguity, &m.claim, &s).unwrap();
        assert!(v.abs() < 1e-15);
    }

    #[test]
    fn optimal_strategy_evaluates_to_the_root_value() {
        let m = fixtures::b1();
        let sol = backward_solve(&m.tree, &m.ambiguity, &m.claim, &cfg()).unwrap();
        let v = evaluate_strategy(&m.tree, &m.ambiguity, &m.claim, &sol.strategy).unwrap();
        assert!((v - sol.value).abs() < 1e-9);
    }

    #[test]
    fn constant_claim_with_zero_strategy_evaluates_to_the_constant() {
        let mut m = fixtures::t2();
        m.claim = crate::market::ClaimVector::new(vec![1.5; 4]).unwrap();
        let s = Strategy::zero(&m.tree);
        let v = evaluate_strategy(&m.tree, &m.ambiguity, &m.claim, &s).unwrap();
        assert!((v - 1.5).abs() < 1e-12);
    }

    #[test]
    fn brute_check_recovers_b1_value() {
        let m = fixtures::b1();
        let grid = BruteGrid::new(-2.0, 2.0, 1e-4);
        let v = global_brute_check(&m.tree, &m.ambiguity, &m.claim, &grid).unwrap();
        assert!((v + b1_entropy()).abs() < 2e-4, "brute {v}");
    }

    #[test]
    fn brute_check_is_zero_on_symmetric_t2() {
        let m = fixtures::t2();
        let grid = BruteGrid::new(-2.0, 2.0, 1e-3);
        let v = global_brute_check(&m.tree, &m.ambiguity, &m.claim, &grid).unwrap();
        assert!(v.abs() < 5e-3, "brute {v}");
    }

    #[test]
    fn brute_check_matches_backward_solve_on_a_skewed_claim() {
        let mut m = fixtures::t2();
        m.claim = crate::market::ClaimVector::new(vec![1.0, -0.5, 0.25, 2.0]).unwrap();
        let sol = backward_solve(&m.tree, &m.ambiguity, &m.claim, &cfg()).unwrap();
        let grid = BruteGrid::new(-3.0, 3.0, 1e-3);
        let brute = global_brute_check(&m.tree, &m.ambiguity, &m.claim, &grid).unwrap();
        assert!(
            (sol.value - brute).abs() < 5e-3,
            "dp {} vs brute {brute}",
            sol.value
        );
        assert!(
            brute >= sol.value - 1e-6,
            "brute may not undercut the dp value"
        );
    }

    #[test]
    fn budget_is_enforced() {
        let m = fixtures::t2();
        let grid = BruteGrid {
            lo: -2.0,
            hi: 2.0,
            step: 1e-3,
            budget: 10,
        };
        assert!(matches!(
            global_brute_check(&m.tree, &m.ambiguity, &m.claim, &grid),
            Err(Error::BudgetExceeded(_))
        ));
    }

    #[test]
    fn arbitrage_tree_is_rejected_with_node_annotation() {
        let m = fixtures::arb1();
        match backward_solve(&m.tree, &m.ambiguity, &m.claim, &cfg()) {
            Err(Error::AtNode { node, source }) => {
                assert_eq!(node, 0);
                assert!(matches!(*source, Error::Arbitrage { .. }));
            }
            other => panic!("expected annotated arbitrage, got {other:?}"),
        }
    }

    #[test]
    fn certificate_composes_kernels_and_entropy() {
        let mut m = fixtures::t2();
        m.claim = crate::market::ClaimVector::new(vec![1.0, 0.0, 0.5, -1.0]).unwrap();
        let sol = backward_solve(&m.tree, &m.ambiguity, &m.claim, &cfg()).unwrap();
        let meas = &sol.certificate.measure;
        assert!(meas.martingale_residual(&m.tree) <= 1e-8);
        let total_law: f64 = meas.leaf_law.iter().sum();
        assert!((total_law - 1.0).abs() < 1e-9);
        let dec = &sol.certificate.entropy;
        let sum: f64 = dec.per_node.values().sum();
        assert!((dec.total - sum).abs() < 1e-12);
        assert!((sol.certificate.dual_value - sol.value).abs() <= 1e-7);
    }
}
