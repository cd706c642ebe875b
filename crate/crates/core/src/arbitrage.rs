//! Per-node no-arbitrage verification, quasi-sure support, the effective
//! strategy span and relative-interior feasibility checks.

use crate::error::{Error, Result};
use crate::lp::{Cmp, Lp, Sense};
use crate::market::{AmbiguitySet, NodeId, ScenarioTree};

/// LP decision tolerance for arbitrage and relative-interior checks.
pub const LP_TOL: f64 = 1e-9;
/// Rank cutoff for the effective span, relative to the largest singular value.
pub const RANK_TOL: f64 = 1e-10;

/// One-period market at a single node: stock increments per child and the
/// ambiguity set over the children.
#[derive(Debug, Clone)]
pub struct NodeMarket {
    /// One row per child, one column per asset.
    pub deltas: Vec<Vec<f64>>,
    pub ambiguity: AmbiguitySet,
}

impl NodeMarket {
    pub fn new(deltas: Vec<Vec<f64>>, ambiguity: AmbiguitySet) -> Result<Self> {
        if deltas.is_empty() {
            return Err(Error::MalformedSpec("node has no children".into()));
        }
        let d = deltas[0].len();
        if deltas.iter().any(|r| r.len() != d) {
            return Err(Error::DimensionMismatch(
                "stock increments have differing lengths".into(),
            ));
        }
        if deltas.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteStock(0));
        }
        if ambiguity.children() != deltas.len() {
            return Err(Error::DimensionMismatch(format!(
                "ambiguity over {} children, market has {}",
                ambiguity.children(),
                deltas.len()
            )));
        }
        Ok(Self { deltas, ambiguity })
    }

    /// One-period market seen from `node` of a scenario tree.
    pub fn from_tree(
        tree: &ScenarioTree,
        node: NodeId,
        ambiguity: &AmbiguitySet,
    ) -> Result<Self> {
        Self::new(tree.deltas(node), ambiguity.clone())
    }

    pub fn children(&self) -> usize {
        self.deltas.len()
    }

    pub fn dim(&self) -> usize {
        self.deltas[0].len()
    }
}

/// Orthonormal basis of the effective strategy span L (the linear hull of the
/// quasi-surely charged stock increments) together with the dimension of its
/// orthogonal complement.
#[derive(Debug, Clone)]
pub struct SpanBasis {
    pub basis: Vec<Vec<f64>>,
    pub complement_dim: usize,
}

impl SpanBasis {
    pub fn rank(&self) -> usize {
        self.basis.len()
    }

    /// Coordinates of `h` in the span basis.
    pub fn project(&self, h: &[f64]) -> Vec<f64> {
        self.basis
            .iter()
            .map(|b| b.iter().zip(h).map(|(bi, hi)| bi * hi).sum())
            .collect()
    }

    /// Vector in the ambient space with the given span coordinates.
    pub fn lift(&self, u: &[f64]) -> Vec<f64> {
        let d = self.basis.first().map_or(0, |b| b.len());
        let mut h = vec![0.0; d];
        for (c, b) in u.iter().zip(&self.basis) {
            for (hi, bi) in h.iter_mut().zip(b) {
                *hi += c * bi;
            }
        }
        h
    }

    /// Euclidean norm of the component of `h` orthogonal to the span.
    pub fn orthogonal_norm(&self, h: &[f64]) -> f64 {
        let coords = self.project(h);
        let within = self.lift(&coords);
        h.iter()
            .zip(&within)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }
}

/// Children charged by at least one measure of the node's ambiguity set.
pub fn quasi_sure_support(m: &NodeMarket) -> Result<Vec<usize>> {
    m.ambiguity.support()
}

/// Orthonormal basis of `lin { delta_i : i in quasi-sure support }`, with rank
/// decided by a singular-value cutoff relative to the largest singular value.
pub fn effective_span(m: &NodeMarket) -> Result<SpanBasis> {
    let support = quasi_sure_support(m)?;
    effective_span_for(m, &support)
}

pub(crate) fn effective_span_for(m: &NodeMarket, support: &[usize]) -> Result<SpanBasis> {
    let d = m.dim();
    if support.is_empty() {
        return Ok(SpanBasis {
            basis: Vec::new(),
            complement_dim: d,
        });
    }
    let rows = support.len();
    let mat = nalgebra::DMatrix::from_fn(rows, d, |r, c| m.deltas[support[r]][c]);
    let svd = mat.svd(false, true);
    let v_t = svd
        .v_t
        .as_ref()
        .ok_or_else(|| Error::LpFailure("svd failed to produce singular vectors".into()))?;
    let smax = svd.singular_values.iter().cloned().fold(0.0, f64::max);
    let mut basis = Vec::new();
    if smax > 0.0 {
        for (k, &s) in svd.singular_values.iter().enumerate() {
            if s > RANK_TOL * smax {
                basis.push(v_t.row(k).iter().cloned().collect::<Vec<f64>>());
            }
        }
    }
    let complement_dim = d - basis.len();
    Ok(SpanBasis {
        basis,
        complement_dim,
    })
}

/// Outcome of a no-arbitrage check.
#[derive(Debug, Clone, PartialEq)]
pub enum NaVerdict {
    NoArbitrage,
    /// A strategy with quasi-surely nonnegative, somewhere positive gain.
    Arbitrage { witness: Vec<f64> },
}

impl NaVerdict {
    pub fn is_arbitrage(&self) -> bool {
        matches!(self, NaVerdict::Arbitrage { .. })
    }
}

/// Decides the one-period no-arbitrage condition by linear programming:
/// maximize the capped slacks of `h . delta_i` over the quasi-sure support,
/// subject to all of them being nonnegative. A positive optimum exhibits an
/// arbitrage witness.
pub fn na_check(m: &NodeMarket) -> Result<NaVerdict> {
    let support = quasi_sure_support(m)?;
    if support.is_empty() {
        return Ok(NaVerdict::NoArbitrage);
    }
    let d = m.dim();
    let mut lp = Lp::new(Sense::Max);
    // Any arbitrage can be scaled to the unit box. Gains get their own
    // nonnegative variables tied by equalities, which keeps the program
    // well-behaved for the solver.
    let h: Vec<usize> = (0..d).map(|_| lp.var(0.0, -1.0, 1.0)).collect();
    for &i in &support {
        let gain = lp.var(0.0, 0.0, f64::INFINITY);
        let mut tie: Vec<(usize, f64)> = h
            .iter()
            .enumerate()
            .map(|(k, &v)| (v, m.deltas[i][k]))
            .collect();
        tie.push((gain, -1.0));
        lp.constraint(&tie, Cmp::Eq, 0.0);
        let s = lp.var(1.0, 0.0, 1.0);
        lp.constraint(&[(s, 1.0), (gain, -1.0)], Cmp::Le, 0.0);
    }
    let sol = lp.solve()?;
    if sol.value > LP_TOL {
        Ok(NaVerdict::Arbitrage {
            witness: h.iter().map(|&v| sol.x[v]).collect(),
        })
    } else {
        Ok(NaVerdict::NoArbitrage)
    }
}

/// Tests whether 0 lies in the relative interior of
/// `{ E_Q[payoff] : Q supported in the quasi-sure support }`.
///
/// `payoff` holds one row per child (several columns allowed). On a finite
/// child set the set of expectations is the convex hull of the support rows,
/// and 0 is in its relative interior precisely when some everywhere-positive
/// weighting of the rows averages to zero.
pub fn ri_check(m: &NodeMarket, payoff: &[Vec<f64>]) -> Result<bool> {
    if payoff.len() != m.children() {
        return Err(Error::DimensionMismatch(
            "payoff rows do not match child count".into(),
        ));
    }
    let support = quasi_sure_support(m)?;
    if support.is_empty() {
        return Ok(false);
    }
    let cols = payoff[0].len();
    let mut lp = Lp::new(Sense::Max);
    let t = lp.var(1.0, 0.0, 1.0);
    let q: Vec<usize> = support.iter().map(|_| lp.var(0.0, 0.0, 1.0)).collect();
    lp.constraint(
        &q.iter().map(|&v| (v, 1.0)).collect::<Vec<_>>(),
        Cmp::Eq,
        1.0,
    );
    for c in 0..cols {
        let terms: Vec<(usize, f64)> = support
            .iter()
            .zip(&q)
            .map(|(&i, &v)| (v, payoff[i][c]))
            .collect();
        lp.constraint(&terms, Cmp::Eq, 0.0);
    }
    for &v in &q {
        lp.constraint(&[(v, 1.0), (t, -1.0)], Cmp::Ge, 0.0);
    }
    match lp.solve() {
        Ok(sol) => Ok(sol.value > LP_TOL),
        Err(Error::Infeasible(_)) => Ok(false),
        Err(e) => Err(e),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::market::{fixtures, AmbiguitySet, ProbVector};

    fn node_market(m: &crate::market::Market) -> NodeMarket {
        NodeMarket::from_tree(&m.tree, 0, m.ambiguity_at(0)).unwrap()
    }

    #[test]
    fn support_of_b1_is_both_children() {
        assert_eq!(quasi_sure_support(&node_market(&fixtures::b1())).unwrap(), vec![0, 1]);
    }

    #[test]
    fn support_of_a_dirac_is_its_atom() {
        let m = NodeMarket::new(
            vec![vec![1.0], vec![-1.0]],
            AmbiguitySet::singleton(ProbVector::dirac(0, 2)),
        )
        .unwrap();
        assert_eq!(quasi_sure_support(&m).unwrap(), vec![0]);
    }

    #[test]
    fn support_of_arb1_is_all_three() {
        assert_eq!(
            quasi_sure_support(&node_market(&fixtures::arb1())).unwrap(),
            vec![0, 1, 2]
        );
    }

    #[test]
    fn span_of_b1_is_the_line() {
        let span = effective_span(&node_market(&fixtures::b1())).unwrap();
        assert_eq!(span.rank(), 1);
        assert_eq!(span.complement_dim, 0);
        assert!((span.basis[0][0].abs() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn span_of_degenerate_market_is_empty() {
        let m = NodeMarket::new(
            vec![vec![0.0, 0.0], vec![0.0, 0.0]],
            AmbiguitySet::singleton(ProbVector::new(vec![0.5, 0.5]).unwrap()),
        )
        .unwrap();
        let span = effective_span(&m).unwrap();
        assert_eq!(span.rank(), 0);
        assert_eq!(span.complement_dim, 2);
    }

    #[test]
    fn span_of_rank_one_plane_market() {
        let m = NodeMarket::new(
            vec![vec![1.0, 1.0], vec![-1.0, -1.0]],
            AmbiguitySet::singleton(ProbVector::new(vec![0.5, 0.5]).unwrap()),
        )
        .unwrap();
        let span = effective_span(&m).unwrap();
        assert_eq!(span.rank(), 1);
        assert_eq!(span.complement_dim, 1);
        let b = &span.basis[0];
        let s = 1.0 / 2f64.sqrt();
        assert!((b[0].abs() - s).abs() < 1e-12 && (b[1].abs() - s).abs() < 1e-12);
        assert!((b[0] - b[1]).abs() < 1e-12);
    }

    #[test]
    fn b1_has_no_arbitrage() {
        assert_eq!(na_check(&node_market(&fixtures::b1())).unwrap(), NaVerdict::NoArbitrage);
    }

    #[test]
    fn arb1_has_arbitrage_with_long_witness() {
        match na_check(&node_market(&fixtures::arb1())).unwrap() {
            NaVerdict::Arbitrage { witness } => {
                assert!(witness[0] > LP_TOL);
                let m = node_market(&fixtures::arb1());
                let gains: Vec<f64> = m.deltas.iter().map(|d| d[0] * witness[0]).collect();
                assert!(gains.iter().all(|&g| g >= -LP_TOL));
                assert!(gains.iter().any(|&g| g > LP_TOL));
            }
            NaVerdict::NoArbitrage => panic!("arbitrage family must be flagged"),
        }
    }

    #[test]
    fn zero_increment_market_is_vacuously_arbitrage_free() {
        let m = NodeMarket::new(
            vec![vec![0.0], vec![0.0]],
            AmbiguitySet::singleton(ProbVector::new(vec![0.5, 0.5]).unwrap()),
        )
        .unwrap();
        assert_eq!(na_check(&m).unwrap(), NaVerdict::NoArbitrage);
    }

    #[test]
    fn ri_holds_for_b1_increments() {
        let m = node_market(&fixtures::b1());
        assert!(ri_check(&m, &m.deltas.clone()).unwrap());
    }

    #[test]
    fn ri_fails_for_arb1_increments() {
        let m = node_market(&fixtures::arb1());
        assert!(!ri_check(&m, &m.deltas.clone()).unwrap());
    }

    #[test]
    fn ri_holds_for_zero_payoff() {
        let m = node_market(&fixtures::b1());
        assert!(ri_check(&m, &[vec![0.0], vec![0.0]]).unwrap());
    }

    #[test]
    fn na_and_ri_agree_on_small_cases() {
        for market in [fixtures::b1(), fixtures::b2(), fixtures::arb1()] {
            let m = node_market(&market);
            let na = !na_check(&m).unwrap().is_arbitrage();
            let ri = ri_check(&m, &m.deltas.clone()).unwrap();
            assert_eq!(na, ri);
        }
    }

    #[test]
    fn padding_a_null_child_keeps_the_verdict() {
        let base = node_market(&fixtures::b1());
        let padded = NodeMarket::new(
            vec![vec![1.0], vec![-1.0], vec![5.0]],
            AmbiguitySet::singleton(ProbVector::new(vec![0.6, 0.4, 0.0]).unwrap()),
        )
        .unwrap();
        assert_eq!(na_check(&base).unwrap(), na_check(&padded).unwrap());
    }
}
