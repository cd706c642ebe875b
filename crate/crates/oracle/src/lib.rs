//! Brute-force reference implementations for the one-period solvers.
//!
//! Everything here trades speed for independence: exhaustive grids for the
//! primal side, barycentric sweeps of the martingale polytope for the dual
//! side. Test suites use these as ground truth; nothing in this crate is
//! meant for production paths.

use treehedge_core::arbitrage::{quasi_sure_support, NodeMarket};
use treehedge_core::entropy::robust_entropy;
use treehedge_core::error::{Error, Result};
use treehedge_core::market::ProbVector;
use treehedge_core::oneperiod::robust_logsumexp;

/// Exhaustive-search grid: per-dimension bounds, a common step and an
/// evaluation budget.
#[derive(Debug, Clone)]
pub struct GridSpec {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    pub step: f64,
    pub budget: u64,
}

impl GridSpec {
    pub fn symmetric(dim: usize, radius: f64, step: f64) -> Self {
        Self {
            lo: vec![-radius; dim],
            hi: vec![radius; dim],
            step,
            budget: 200_000_000,
        }
    }
}

/// Exhaustive minimization of the robust log-sum-exp objective over a grid
/// of strategies. The result is within (Lipschitz constant x step) of the
/// true minimum over the box; the Lipschitz constant is bounded by the
/// largest increment norm.
pub fn brute_primal(m: &NodeMarket, x: &[f64], grid: &GridSpec) -> Result<f64> {
    let d = m.dim();
    if d > 2 {
        return Err(Error::InvalidSpec(
            "brute primal only supports one or two assets".into(),
        ));
    }
    if grid.lo.len() != d || grid.hi.len() != d || grid.step <= 0.0 {
        return Err(Error::InvalidSpec("malformed grid".into()));
    }
    let counts: Vec<u64> = (0..d)
        .map(|k| ((grid.hi[k] - grid.lo[k]) / grid.step).ceil() as u64 + 1)
        .collect();
    let total: u64 = counts.iter().product();
    if total > grid.budget {
        return Err(Error::BudgetExceeded(format!(
            "grid holds {total} points, budget is {}",
            grid.budget
        )));
    }
    let mut best = f64::INFINITY;
    let mut h = vec![0.0; d];
    let mut idx = vec![0u64; d];
    loop {
        for k in 0..d {
            h[k] = grid.lo[k] + idx[k] as f64 * grid.step;
        }
        let (v, _) = robust_logsumexp(m, x, &h)?;
        best = best.min(v);
        // Odometer increment over the grid indices.
        let mut k = 0;
        loop {
            if k == d {
                return Ok(best);
            }
            idx[k] += 1;
            if idx[k] < counts[k] {
                break;
            }
            idx[k] = 0;
            k += 1;
        }
    }
}

/// Vertices of `{q on the support : sum q = 1, q . delta = 0}` by basic
/// feasible solution enumeration.
fn martingale_vertices(m: &NodeMarket, support: &[usize]) -> Vec<Vec<f64>> {
    let n = support.len();
    let d = m.dim();
    let mut rows: Vec<Vec<f64>> = vec![vec![1.0; n]];
    for k in 0..d {
        rows.push(support.iter().map(|&i| m.deltas[i][k]).collect());
    }
    let mrows = rows.len();
    let a = nalgebra::DMatrix::from_fn(mrows, n, |r, c| rows[r][c]);
    let b = nalgebra::DVector::from_fn(mrows, |r, _| if r == 0 { 1.0 } else { 0.0 });
    let rank = a.rank(1e-10);
    let mut verts: Vec<Vec<f64>> = Vec::new();
    let mut seen = std::collections::BTreeSet::new();
    let mut basis: Vec<usize> = (0..rank).collect();
    loop {
        let ab = a.select_columns(basis.iter());
        if let Ok(xb) = ab.clone().svd(true, true).solve(&b, 1e-12) {
            let residual = (&ab * &xb - &b).norm();
            if residual < 1e-9 && xb.iter().all(|&v| v >= -1e-10) {
                let mut q = vec![0.0; m.children()];
                for (pos, &col) in basis.iter().enumerate() {
                    q[support[col]] += xb[pos].max(0.0);
                }
                let key: Vec<i64> = q.iter().map(|v| (v * 1e9).round() as i64).collect();
                if seen.insert(key) {
                    verts.push(q);
                }
            }
        }
        // Next combination.
        let mut i = rank;
        let advanced = loop {
            if i == 0 {
                break false;
            }
            i -= 1;
            if basis[i] < n - (rank - i) {
                basis[i] += 1;
                for j in i + 1..rank {
                    basis[j] = basis[j - 1] + 1;
                }
                break true;
            }
        };
        if !advanced {
            return verts;
        }
    }
}

/// Maximizes `q . x - H(q, ambiguity)` over a barycentric grid of the
/// martingale polytope (its vertices plus interior combinations at the given
/// resolution). Returns negative infinity when no feasible measure exists;
/// with `strict` set, only everywhere-positive grid points count.
pub fn brute_dual(m: &NodeMarket, x: &[f64], resolution: usize, strict: bool) -> Result<f64> {
    if m.children() > 4 {
        return Err(Error::InvalidSpec(
            "brute dual only supports up to four children".into(),
        ));
    }
    let support = quasi_sure_support(m)?;
    let verts = martingale_vertices(m, &support);
    if verts.is_empty() {
        return Ok(f64::NEG_INFINITY);
    }
    let v = verts.len();
    let res = resolution.max(1);
    let mut best = f64::NEG_INFINITY;
    // Enumerate compositions of `res` into `v` parts.
    let mut weights = vec![0usize; v];
    weights[0] = res;
    let mut counter: u64 = 0;
    loop {
        counter += 1;
        if counter > 20_000_000 {
            return Err(Error::BudgetExceeded(
                "barycentric sweep exceeded 2e7 points".into(),
            ));
        }
        let mut q = vec![0.0; m.children()];
        for (w, vert) in weights.iter().zip(&verts) {
            for i in 0..q.len() {
                q[i] += (*w as f64 / res as f64) * vert[i];
            }
        }
        let admissible = !strict || support.iter().all(|&i| q[i] > 0.0);
        if admissible {
            if let Ok(qv) = ProbVector::new(q.clone()) {
                let ent = robust_entropy(&qv, &m.ambiguity)?;
                if ent.value.is_finite() {
                    let val = qv.expect(x) - ent.value;
                    best = best.max(val);
                }
            }
        }
        // Next composition: standard colex stepping.
        let mut i = 0;
        while i + 1 < v && weights[i] == 0 {
            i += 1;
        }
        if i + 1 >= v {
            break;
        }
        let head = weights[i];
        weights[i] = 0;
        weights[i + 1] += 1;
        weights[0] = head - 1;
        if weights.iter().sum::<usize>() != res {
            return Err(Error::LpFailure("composition stepping broke".into()));
        }
        if v == 1 {
            break;
        }
    }
    if strict && best == f64::NEG_INFINITY {
        return Ok(f64::NEG_INFINITY);
    }
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;
    use treehedge_core::market::fixtures;

    fn node(m: &treehedge_core::market::Market) -> NodeMarket {
        NodeMarket::from_tree(&m.tree, 0, m.ambiguity_at(0)).unwrap()
    }

    fn b1_entropy() -> f64 {
        0.5 * (0.5f64 / 0.6).ln() + 0.5 * (0.5f64 / 0.4).ln()
    }

    #[test]
    fn primal_grid_recovers_b1() {
        let m = node(&fixtures::b1());
        let grid = GridSpec::symmetric(1, 2.0, 1e-4);
        let v = brute_primal(&m, &[0.0, 0.0], &grid).unwrap();
        assert!((v + b1_entropy()).abs() < 2e-4, "v {v}");
    }

    #[test]
    fn primal_grid_is_zero_on_symmetric_b2() {
        let m = node(&fixtures::b2());
        let grid = GridSpec::symmetric(1, 2.0, 1e-4);
        let v = brute_primal(&m, &[0.0, 0.0], &grid).unwrap();
        assert!(v.abs() < 1e-7, "v {v}");
    }

    #[test]
    fn grid_missing_the_minimizer_stays_above() {
        // Optimal h is about -0.2027; a grid over [1, 2] cannot reach it.
        let m = node(&fixtures::b1());
        let grid = GridSpec {
            lo: vec![1.0],
            hi: vec![2.0],
            step: 1e-3,
            budget: 10_000_000,
        };
        let v = brute_primal(&m, &[0.0, 0.0], &grid).unwrap();
        assert!(v > -b1_entropy() + 0.1);
    }

    #[test]
    fn dual_on_b1_is_exact_at_the_single_vertex() {
        let m = node(&fixtures::b1());
        let v = brute_dual(&m, &[0.0, 0.0], 8, false).unwrap();
        assert!((v + b1_entropy()).abs() < 1e-12, "v {v}");
        let v2 = brute_dual(&m, &[1.0, 0.0], 8, false).unwrap();
        assert!((v2 - (0.5 - b1_entropy())).abs() < 1e-12, "v2 {v2}");
    }

    #[test]
    fn strict_positivity_on_arb1_is_infeasible() {
        let m = node(&fixtures::arb1());
        let v = brute_dual(&m, &[0.0, 0.0, 0.0], 6, true).unwrap();
        assert_eq!(v, f64::NEG_INFINITY);
    }

    #[test]
    fn budget_is_enforced() {
        let m = node(&fixtures::b1());
        let grid = GridSpec {
            lo: vec![-2.0],
            hi: vec![2.0],
            step: 1e-9,
            budget: 100,
        };
        assert!(matches!(
            brute_primal(&m, &[0.0, 0.0], &grid),
            Err(Error::BudgetExceeded(_))
        ));
    }
}
