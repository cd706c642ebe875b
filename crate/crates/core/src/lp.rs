//! Thin facade over the LP solver plus the linear programs over ambiguity
//! polytopes (extreme-point hulls and Wasserstein balls) that the solver
//! modules share.

use microlp::{ComparisonOp, OptimizationDirection, Problem, Variable};

use crate::error::{Error, Result};
use crate::market::{AmbiguitySet, ProbVector};

/// Support mass below this is treated as zero in LP probes.
pub(crate) const SUPPORT_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Sense {
    Max,
    Min,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Cmp {
    Le,
    Ge,
    Eq,
}

impl Cmp {
    fn into_op(self) -> ComparisonOp {
        match self {
            Cmp::Le => ComparisonOp::Le,
            Cmp::Ge => ComparisonOp::Ge,
            Cmp::Eq => ComparisonOp::Eq,
        }
    }
}

/// Incrementally built linear program with dense variable handles.
///
/// Solved by the sparse backend first; any backend failure (including an
/// infeasibility verdict) is re-checked by the in-house dense simplex, whose
/// verdict is final. The backend has been observed to mislabel feasible
/// degenerate programs.
pub(crate) struct Lp {
    sense: Sense,
    vars: Vec<(f64, f64, f64)>, // (objective, lo, hi)
    rows: Vec<(Vec<(usize, f64)>, Cmp, f64)>,
}

pub(crate) struct LpSolution {
    pub x: Vec<f64>,
    pub value: f64,
}

impl Lp {
    pub fn new(sense: Sense) -> Self {
        Self {
            sense,
            vars: Vec::new(),
            rows: Vec::new(),
        }
    }

    pub fn var(&mut self, obj: f64, lo: f64, hi: f64) -> usize {
        self.vars.push((obj, lo, hi));
        self.vars.len() - 1
    }

    pub fn constraint(&mut self, terms: &[(usize, f64)], op: Cmp, rhs: f64) {
        // Merge repeated variables; backends reject duplicate indices.
        let mut merged: std::collections::BTreeMap<usize, f64> = std::collections::BTreeMap::new();
        for &(i, c) in terms {
            *merged.entry(i).or_insert(0.0) += c;
        }
        let expr: Vec<(usize, f64)> = merged.into_iter().filter(|(_, c)| *c != 0.0).collect();
        self.rows.push((expr, op, rhs));
    }

    fn solve_primary(&self) -> std::result::Result<LpSolution, microlp::Error> {
        let dir = match self.sense {
            Sense::Max => OptimizationDirection::Maximize,
            Sense::Min => OptimizationDirection::Minimize,
        };
        let mut prob = Problem::new(dir);
        let vars: Vec<Variable> = self
            .vars
            .iter()
            .map(|&(obj, lo, hi)| prob.add_var(obj, (lo, hi)))
            .collect();
        for (terms, op, rhs) in &self.rows {
            let expr: Vec<(Variable, f64)> =
                terms.iter().map(|&(i, c)| (vars[i], c)).collect();
            prob.add_constraint(expr.as_slice(), op.into_op(), *rhs);
        }
        let sol = prob.solve()?;
        Ok(LpSolution {
            x: vars.iter().map(|&v| *sol.var_value(v)).collect(),
            value: sol.objective(),
        })
    }

    fn solve_fallback(&self) -> Result<LpSolution> {
        let sign = match self.sense {
            Sense::Max => 1.0,
            Sense::Min => -1.0,
        };
        let dense = crate::simplex::DenseLp {
            objective: self.vars.iter().map(|&(obj, _, _)| sign * obj).collect(),
            bounds: self.vars.iter().map(|&(_, lo, hi)| (lo, hi)).collect(),
            rows: self
                .rows
                .iter()
                .map(|(terms, op, rhs)| {
                    let op = match op {
                        Cmp::Le => crate::simplex::RowOp::Le,
                        Cmp::Ge => crate::simplex::RowOp::Ge,
                        Cmp::Eq => crate::simplex::RowOp::Eq,
                    };
                    (terms.clone(), op, *rhs)
                })
                .collect(),
        };
        let (x, value) = dense.solve()?;
        Ok(LpSolution {
            x,
            value: sign * value,
        })
    }

    pub fn solve(self) -> Result<LpSolution> {
        match self.solve_primary() {
            Ok(sol) => Ok(sol),
            Err(_) => self.solve_fallback(),
        }
    }
}

// ---------------------------------------------------------------------------
// Linear programs over ambiguity polytopes
// ---------------------------------------------------------------------------

/// Linear constraint in the child-marginal space of a node.
#[derive(Debug, Clone)]
pub(crate) struct MarginalConstraint {
    pub coeffs: Vec<f64>,
    pub op: Cmp,
    pub rhs: f64,
}

/// Variables of the polytope parametrization together with the linear map
/// onto child marginals.
struct PolytopeVars {
    lp: Lp,
    /// `marginal_terms[i]` expresses P_i as LP terms.
    marginal_terms: Vec<Vec<(usize, f64)>>,
}

fn polytope_vars(amb: &AmbiguitySet, objective: &[f64], sense: Sense) -> PolytopeVars {
    let n = amb.children();
    let mut lp = Lp::new(sense);
    let mut marginal_terms: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
    match amb {
        AmbiguitySet::ExtremePoints { measures } => {
            // Mixture weights over the extreme points.
            let mut simplex = Vec::with_capacity(measures.len());
            for m in measures {
                let obj: f64 = m.expect(objective);
                let v = lp.var(obj, 0.0, 1.0);
                simplex.push((v, 1.0));
                for i in 0..n {
                    if m[i] != 0.0 {
                        marginal_terms[i].push((v, m[i]));
                    }
                }
            }
            lp.constraint(&simplex, Cmp::Eq, 1.0);
        }
        AmbiguitySet::WassersteinBall {
            center,
            radius,
            cost,
        } => {
            // Transport plan with the given center as second marginal; the
            // represented measure is the first marginal.
            let mut plan = vec![vec![0usize; n]; n];
            let mut budget = Vec::new();
            for (i, row) in plan.iter_mut().enumerate() {
                for (j, cell) in row.iter_mut().enumerate() {
                    if cost[i][j].is_infinite() && i != j {
                        continue; // unusable route, keep variable out
                    }
                    let v = lp.var(objective[i], 0.0, 1.0);
                    *cell = v + 1; // shift so 0 marks a missing variable
                    marginal_terms[i].push((v, 1.0));
                    if cost[i][j] != 0.0 {
                        budget.push((v, cost[i][j]));
                    }
                }
            }
            for j in 0..n {
                let col: Vec<(usize, f64)> = (0..n)
                    .filter_map(|i| plan[i][j].checked_sub(1).map(|v| (v, 1.0)))
                    .collect();
                lp.constraint(&col, Cmp::Eq, center[j]);
            }
            if !budget.is_empty() {
                lp.constraint(&budget, Cmp::Le, *radius);
            }
        }
    }
    PolytopeVars { lp, marginal_terms }
}

fn marginal_from(x: &[f64], terms: &[Vec<(usize, f64)>]) -> Result<ProbVector> {
    let p: Vec<f64> = terms
        .iter()
        .map(|t| t.iter().map(|&(v, c)| x[v] * c).sum::<f64>().max(0.0))
        .collect();
    ProbVector::new(p)
}

/// Optimizes a linear functional of the child marginal over the ambiguity
/// polytope, subject to extra linear constraints on the marginal. Returns an
/// achieving measure and the optimal value.
pub(crate) fn ambiguity_optimize(
    amb: &AmbiguitySet,
    sense: Sense,
    objective: &[f64],
    extra: &[MarginalConstraint],
) -> Result<(ProbVector, f64)> {
    if objective.len() != amb.children() {
        return Err(Error::DimensionMismatch(
            "objective length does not match child count".into(),
        ));
    }
    // Fast paths: a hull optimum sits at a listed vertex; a ball optimum is
    // a continuous knapsack over single-hop mass moves.
    if extra.is_empty() {
        match amb {
            AmbiguitySet::ExtremePoints { measures } => {
                let mut best = 0usize;
                let mut best_val = measures[0].expect(objective);
                for (k, m) in measures.iter().enumerate().skip(1) {
                    let val = m.expect(objective);
                    let better = match sense {
                        Sense::Max => val > best_val,
                        Sense::Min => val < best_val,
                    };
                    if better {
                        best = k;
                        best_val = val;
                    }
                }
                return Ok((measures[best].clone(), best_val));
            }
            AmbiguitySet::WassersteinBall {
                center,
                radius,
                cost,
            } => {
                let flipped: Vec<f64>;
                let obj = match sense {
                    Sense::Max => objective,
                    Sense::Min => {
                        flipped = objective.iter().map(|v| -v).collect();
                        &flipped
                    }
                };
                let (p, v) = ball_maximize_greedy(center, *radius, cost, obj)?;
                let value = match sense {
                    Sense::Max => v,
                    Sense::Min => -v,
                };
                return Ok((p, value));
            }
        }
    }
    let PolytopeVars {
        mut lp,
        marginal_terms,
    } = polytope_vars(amb, objective, sense);
    for con in extra {
        let mut terms: Vec<(usize, f64)> = Vec::new();
        for (i, &c) in con.coeffs.iter().enumerate() {
            if c != 0.0 {
                for &(v, w) in &marginal_terms[i] {
                    terms.push((v, c * w));
                }
            }
        }
        lp.constraint(&terms, con.op, con.rhs);
    }
    let sol = lp.solve()?;
    let p = marginal_from(&sol.x, &marginal_terms)?;
    Ok((p, sol.value))
}

/// Minimizes the summed absolute values of `targets`-functionals over the
/// polytope slice `{P : P·value_coeffs >= floor}`. Used to pick a point of an
/// optimal face whose Gibbs tilt is a martingale measure.
pub(crate) fn ambiguity_min_residual(
    amb: &AmbiguitySet,
    value_coeffs: &[f64],
    floor: f64,
    targets: &[Vec<f64>],
) -> Result<(ProbVector, f64)> {
    let zeros = vec![0.0; amb.children()];
    let PolytopeVars {
        mut lp,
        marginal_terms,
    } = polytope_vars(amb, &zeros, Sense::Min);
    let floor_terms: Vec<(usize, f64)> = value_terms(value_coeffs, &marginal_terms);
    lp.constraint(&floor_terms, Cmp::Ge, floor);
    for t in targets {
        let pos = lp.var(1.0, 0.0, f64::INFINITY);
        let neg = lp.var(1.0, 0.0, f64::INFINITY);
        let mut terms = value_terms(t, &marginal_terms);
        terms.push((pos, -1.0));
        terms.push((neg, 1.0));
        lp.constraint(&terms, Cmp::Eq, 0.0);
    }
    let sol = lp.solve()?;
    let p = marginal_from(&sol.x, &marginal_terms)?;
    Ok((p, sol.value))
}

/// Maximizes `P -> P . objective` over a transport ball. A coupling moves
/// each unit of center mass at most one hop, so the program is a continuous
/// multiple-choice knapsack: per source, the efficient (cost, gain) options
/// form an upper concave envelope, and envelope segments are applied in
/// global gain-per-cost order until the budget is spent. Segment ratios
/// decrease along each envelope, so the global order respects per-source
/// upgrade order.
fn ball_maximize_greedy(
    center: &ProbVector,
    radius: f64,
    cost: &[Vec<f64>],
    objective: &[f64],
) -> Result<(ProbVector, f64)> {
    let n = center.len();
    let mut p: Vec<f64> = center.as_slice().to_vec();
    let mut value: f64 = p.iter().zip(objective).map(|(w, y)| w * y).sum();
    // Envelope segments: (ratio, source, from, to, unit_cost, unit_gain,
    // order within the source).
    struct Segment {
        ratio: f64,
        source: usize,
        from: usize,
        to: usize,
        dc: f64,
        dg: f64,
        rank: usize,
    }
    let mut segments: Vec<Segment> = Vec::new();
    for j in 0..n {
        if center[j] <= 0.0 {
            continue;
        }
        // Candidate targets with positive gain, as (cost, gain, index).
        let mut pts: Vec<(f64, f64, usize)> = (0..n)
            .filter(|&i| i != j && cost[j][i].is_finite() && objective[i] > objective[j])
            .map(|i| (cost[j][i], objective[i] - objective[j], i))
            .collect();
        pts.push((0.0, 0.0, j)); // staying home
        pts.sort_by(|a, b| a.0.total_cmp(&b.0).then(b.1.total_cmp(&a.1)));
        // Upper concave envelope over the cost axis.
        let mut hull: Vec<(f64, f64, usize)> = Vec::new();
        for pt in pts {
            if let Some(last) = hull.last() {
                if pt.1 <= last.1 {
                    continue; // dominated: dearer but no better
                }
            }
            while hull.len() >= 2 {
                let a = hull[hull.len() - 2];
                let b = hull[hull.len() - 1];
                // Drop b when the a->pt segment passes above it.
                if (b.1 - a.1) * (pt.0 - a.0) <= (pt.1 - a.1) * (b.0 - a.0) {
                    hull.pop();
                } else {
                    break;
                }
            }
            hull.push(pt);
        }
        for (rank, w) in hull.windows(2).enumerate() {
            let (c0, g0, i0) = w[0];
            let (c1, g1, i1) = w[1];
            let dc = c1 - c0;
            let dg = g1 - g0;
            segments.push(Segment {
                ratio: if dc > 0.0 { dg / dc } else { f64::INFINITY },
                source: j,
                from: i0,
                to: i1,
                dc,
                dg,
                rank,
            });
        }
    }
    segments.sort_by(|a, b| {
        b.ratio
            .total_cmp(&a.ratio)
            .then(a.source.cmp(&b.source))
            .then(a.rank.cmp(&b.rank))
    });
    // Mass currently sitting at each source's envelope frontier.
    let mut frontier: Vec<f64> = center.as_slice().to_vec();
    let mut budget = radius;
    for seg in segments {
        let cap = if seg.dc > 0.0 {
            if budget <= 0.0 {
                break;
            }
            budget / seg.dc
        } else {
            f64::INFINITY
        };
        let m = frontier[seg.source].min(cap);
        if m <= 0.0 {
            continue;
        }
        p[seg.from] -= m;
        p[seg.to] += m;
        value += seg.dg * m;
        budget -= seg.dc * m;
        frontier[seg.source] = m; // only upgraded mass continues upward
    }
    for w in &mut p {
        if *w < 0.0 {
            *w = w.max(-1e-12).max(0.0);
        }
    }
    Ok((ProbVector::new(p)?, value))
}

fn value_terms(coeffs: &[f64], marginal_terms: &[Vec<(usize, f64)>]) -> Vec<(usize, f64)> {
    let mut terms: Vec<(usize, f64)> = Vec::new();
    for (i, &c) in coeffs.iter().enumerate() {
        if c != 0.0 {
            for &(v, w) in &marginal_terms[i] {
                terms.push((v, c * w));
            }
        }
    }
    terms
}

impl AmbiguitySet {
    /// Maximizes `P -> P·objective` over the set; returns an achieving
    /// measure and the value.
    pub fn maximize_linear(&self, objective: &[f64]) -> Result<(ProbVector, f64)> {
        ambiguity_optimize(self, Sense::Max, objective, &[])
    }

    /// Children charged by at least one measure of the set. For balls with
    /// positive radius this is decided by one LP probe per child.
    pub fn support(&self) -> Result<Vec<usize>> {
        let n = self.children();
        match self {
            AmbiguitySet::ExtremePoints { measures } => {
                let mut sup: Vec<usize> = (0..n)
                    .filter(|&i| measures.iter().any(|m| m[i] > SUPPORT_TOL))
                    .collect();
                sup.sort_unstable();
                Ok(sup)
            }
            AmbiguitySet::WassersteinBall { center, radius, .. } => {
                if *radius == 0.0 {
                    return Ok(center.support());
                }
                let mut sup = Vec::new();
                for i in 0..n {
                    let mut obj = vec![0.0; n];
                    obj[i] = 1.0;
                    let (_, max_mass) = self.maximize_linear(&obj)?;
                    if max_mass > SUPPORT_TOL {
                        sup.push(i);
                    }
                }
                Ok(sup)
            }
        }
    }

    /// Tests whether `p` lies in the set up to an L1 tolerance. For hulls
    /// this is a mixture-fit LP, for balls a transport feasibility LP.
    pub fn contains(&self, p: &ProbVector, tol: f64) -> Result<bool> {
        if p.len() != self.children() {
            return Err(Error::DimensionMismatch(
                "measure length does not match child count".into(),
            ));
        }
        match self {
            AmbiguitySet::ExtremePoints { measures } => {
                // Minimize the L1 distance between p and the hull.
                let n = self.children();
                let mut lp = Lp::new(Sense::Min);
                let lambda: Vec<usize> = measures.iter().map(|_| lp.var(0.0, 0.0, 1.0)).collect();
                lp.constraint(
                    &lambda.iter().map(|&v| (v, 1.0)).collect::<Vec<_>>(),
                    Cmp::Eq,
                    1.0,
                );
                for i in 0..n {
                    let pos = lp.var(1.0, 0.0, f64::INFINITY);
                    let neg = lp.var(1.0, 0.0, f64::INFINITY);
                    let mut terms: Vec<(usize, f64)> = measures
                        .iter()
                        .zip(&lambda)
                        .map(|(m, &v)| (v, m[i]))
                        .collect();
                    terms.push((pos, 1.0));
                    terms.push((neg, -1.0));
                    lp.constraint(&terms, Cmp::Eq, p[i]);
                }
                let sol = lp.solve()?;
                Ok(sol.value <= tol)
            }
            AmbiguitySet::WassersteinBall {
                center,
                radius,
                cost,
            } => {
                // Cheapest transport between p and the center.
                let n = self.children();
                let mut lp = Lp::new(Sense::Min);
                let mut plan = vec![vec![usize::MAX; n]; n];
                for i in 0..n {
                    for j in 0..n {
                        if cost[i][j].is_finite() {
                            plan[i][j] = lp.var(cost[i][j], 0.0, 1.0);
                        }
                    }
                }
                for (i, row) in plan.iter().enumerate() {
                    let terms: Vec<(usize, f64)> = row
                        .iter()
                        .filter(|&&v| v != usize::MAX)
                        .map(|&v| (v, 1.0))
                        .collect();
                    lp.constraint(&terms, Cmp::Eq, p[i]);
                }
                for j in 0..n {
                    let terms: Vec<(usize, f64)> = (0..n)
                        .filter(|&i| plan[i][j] != usize::MAX)
                        .map(|i| (plan[i][j], 1.0))
                        .collect();
                    lp.constraint(&terms, Cmp::Eq, center[j]);
                }
                match lp.solve() {
                    Ok(sol) => Ok(sol.value <= radius + tol),
                    Err(Error::Infeasible(_)) => Ok(false),
                    Err(e) => Err(e),
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_atom_ball(center: Vec<f64>, radius: f64) -> AmbiguitySet {
        AmbiguitySet::wasserstein_ball(
            ProbVector::new(center).unwrap(),
            radius,
            vec![vec![0.0, 1.0], vec![1.0, 0.0]],
        )
        .unwrap()
    }

    #[test]
    fn hull_maximization_scans_vertices() {
        let amb = AmbiguitySet::extreme_points(vec![
            ProbVector::new(vec![0.6, 0.4]).unwrap(),
            ProbVector::new(vec![0.4, 0.6]).unwrap(),
        ])
        .unwrap();
        let (p, v) = amb.maximize_linear(&[1.0, 0.0]).unwrap();
        assert!((v - 0.6).abs() < 1e-12);
        assert_eq!(p.as_slice(), &[0.6, 0.4]);
    }

    #[test]
    fn full_radius_ball_is_whole_simplex() {
        let amb = two_atom_ball(vec![1.0, 0.0], 1.0);
        let (_, v) = amb.maximize_linear(&[0.0, 1.0]).unwrap();
        assert!((v - 1.0).abs() < 1e-9, "v = {v}");
        assert!(amb
            .contains(&ProbVector::new(vec![0.0, 1.0]).unwrap(), 1e-9)
            .unwrap());
    }

    #[test]
    fn half_radius_ball_caps_moved_mass() {
        let amb = two_atom_ball(vec![1.0, 0.0], 0.5);
        let (_, v) = amb.maximize_linear(&[0.0, 1.0]).unwrap();
        assert!((v - 0.5).abs() < 1e-9, "v = {v}");
        assert!(amb
            .contains(&ProbVector::new(vec![0.5, 0.5]).unwrap(), 1e-9)
            .unwrap());
        assert!(!amb
            .contains(&ProbVector::new(vec![0.4, 0.6]).unwrap(), 1e-9)
            .unwrap());
    }

    #[test]
    fn zero_radius_ball_is_its_center() {
        let amb = two_atom_ball(vec![0.7, 0.3], 0.0);
        let (p, v) = amb.maximize_linear(&[2.0, -1.0]).unwrap();
        assert!((v - (2.0 * 0.7 - 0.3)).abs() < 1e-9);
        assert!((p[0] - 0.7).abs() < 1e-9);
        assert_eq!(amb.support().unwrap(), vec![0, 1]);
    }

    #[test]
    fn ball_support_found_by_probes() {
        let amb = two_atom_ball(vec![1.0, 0.0], 0.25);
        assert_eq!(amb.support().unwrap(), vec![0, 1]);
        let point = two_atom_ball(vec![1.0, 0.0], 0.0);
        assert_eq!(point.support().unwrap(), vec![0]);
    }

    #[test]
    fn greedy_ball_optimizer_matches_the_transport_lp() {
        let mut seed = 0x51ed_2705u64;
        let mut next = move || {
            seed ^= seed << 13;
            seed ^= seed >> 7;
            seed ^= seed << 17;
            (seed >> 11) as f64 / (1u64 << 53) as f64
        };
        for case in 0..400 {
            let n = 2 + (next() * 5.0) as usize;
            let center =
                ProbVector::new((0..n).map(|_| next() + 0.01).collect()).unwrap();
            let mut cost = vec![vec![0.0; n]; n];
            for i in 0..n {
                for j in 0..i {
                    let c = next() * 2.0;
                    cost[i][j] = c;
                    cost[j][i] = c;
                }
            }
            let radius = next() * 1.5;
            let amb = AmbiguitySet::wasserstein_ball(center, radius, cost).unwrap();
            let objective: Vec<f64> = (0..n).map(|_| next() * 4.0 - 2.0).collect();
            let (_, greedy) = amb.maximize_linear(&objective).unwrap();
            // A vacuous constraint forces the transport-LP path.
            let vacuous = MarginalConstraint {
                coeffs: vec![0.0; n],
                op: Cmp::Ge,
                rhs: -1.0,
            };
            let (_, lp) =
                ambiguity_optimize(&amb, Sense::Max, &objective, &[vacuous]).unwrap();
            assert!(
                (greedy - lp).abs() <= 1e-8 * lp.abs().max(1.0),
                "case {case}: greedy {greedy} vs lp {lp}"
            );
        }
    }

    #[test]
    fn dense_fallback_agrees_with_primary_on_random_programs() {
        // Pseudo-random LPs with a known feasible point; both backends must
        // agree on the optimum whenever the primary succeeds.
        let mut seed = 0x9e3779b97f4a7c15u64;
        let mut next = move || {
            seed ^= seed << 13;
            seed ^= seed >> 7;
            seed ^= seed << 17;
            (seed >> 11) as f64 / (1u64 << 53) as f64
        };
        for _ in 0..300 {
            let nv = 2 + (next() * 4.0) as usize;
            let mut lp = Lp::new(Sense::Max);
            let mut dense_check = Lp::new(Sense::Max);
            for _ in 0..nv {
                let obj = next() * 2.0 - 1.0;
                let lo = -next();
                let hi = lo + next() + 0.1;
                lp.var(obj, lo, hi);
                dense_check.var(obj, lo, hi);
            }
            for _ in 0..nv {
                let terms: Vec<(usize, f64)> =
                    (0..nv).map(|i| (i, next() * 2.0 - 1.0)).collect();
                // Right-hand side chosen so x = 0 stays feasible.
                let rhs = next();
                lp.constraint(&terms, Cmp::Le, rhs);
                dense_check.constraint(&terms, Cmp::Le, rhs);
            }
            let primary = lp.solve_primary();
            let dense = dense_check.solve_fallback();
            match (primary, dense) {
                (Ok(p), Ok(d)) => {
                    assert!(
                        (p.value - d.value).abs() <= 1e-7 * p.value.abs().max(1.0),
                        "primary {} vs dense {}",
                        p.value,
                        d.value
                    );
                }
                (Ok(p), Err(e)) => {
                    panic!("dense rejected a solvable program ({}): {e}", p.value)
                }
                (Err(_), _) => {} // primary failed; the fallback arbitrates
            }
        }
    }

    #[test]
    fn min_residual_picks_face_point() {
        // Hull of (0.6,0.4) and (0.4,0.6); both give value 1 for coeffs
        // (1,1), so the floor keeps the whole hull; the residual target
        // P_1 - P_2 = 0 is met at the midpoint.
        let amb = AmbiguitySet::extreme_points(vec![
            ProbVector::new(vec![0.6, 0.4]).unwrap(),
            ProbVector::new(vec![0.4, 0.6]).unwrap(),
        ])
        .unwrap();
        let (p, res) =
            ambiguity_min_residual(&amb, &[1.0, 1.0], 1.0 - 1e-12, &[vec![1.0, -1.0]]).unwrap();
        assert!(res < 1e-10);
        assert!((p[0] - 0.5).abs() < 1e-9);
    }
}
