//! Relative entropy, robust entropy over ambiguity sets, the entropy chain
//! rule across time steps, Gibbs tilting and the variational formula for
//! log-exponential expectations.
//!
//! Conventions: `0 * log 0 = 0` and `x / 0 = +inf`, so the relative entropy is
//! `+inf` exactly when the first measure is not absolutely continuous with
//! respect to the second.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::lp::{Cmp, Lp, Sense};
use crate::market::{AmbiguitySet, NodeId, ProbVector, ScenarioTree};

/// Iteration cap for the simplex minimization inside [`robust_entropy`].
pub const ROBUST_ENTROPY_MAX_ITER: usize = 10_000;
/// Certified optimality gap for [`robust_entropy`].
pub const ROBUST_ENTROPY_TOL: f64 = 1e-10;

/// One kernel per non-leaf node, indexed by node id.
pub type KernelField = Vec<Option<ProbVector>>;

/// Stagewise decomposition of the entropy of a kernel tree: `per_node[id]`
/// carries the visitation-weighted stage entropy at that node and `total` is
/// their sum.
#[derive(Debug, Clone, serde::Serialize)]
pub struct EntropyDecomposition {
    pub total: f64,
    pub per_node: BTreeMap<NodeId, f64>,
}

/// `log E_P[exp(z)]`, max-shifted so that exponents never overflow.
pub(crate) fn log_exp_mean(p: &[f64], z: &[f64]) -> f64 {
    let m = p
        .iter()
        .zip(z)
        .filter(|(&w, _)| w > 0.0)
        .map(|(_, &v)| v)
        .fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    let s: f64 = p
        .iter()
        .zip(z)
        .map(|(&w, &v)| if w > 0.0 { w * (v - m).exp() } else { 0.0 })
        .sum();
    m + s.ln()
}

/// Relative entropy (KL divergence) of `q` with respect to `p` in nats;
/// `+inf` when `q` charges a child that `p` does not.
pub fn relative_entropy(q: &ProbVector, p: &ProbVector) -> Result<f64> {
    if q.len() != p.len() {
        return Err(Error::DimensionMismatch(
            "entropy arguments run over different child sets".into(),
        ));
    }
    let mut h = 0.0;
    for i in 0..q.len() {
        if q[i] > 0.0 {
            if p[i] <= 0.0 {
                return Ok(f64::INFINITY);
            }
            h += q[i] * (q[i] / p[i]).ln();
        }
    }
    Ok(h.max(0.0))
}

/// Minimizer data of a robust entropy evaluation.
#[derive(Debug, Clone)]
pub enum EntropyArgmin {
    /// Mixture weights over the extreme points of the set.
    Mixture(Vec<f64>),
    /// Achieving element of a Wasserstein ball.
    BallElement(ProbVector),
}

#[derive(Debug, Clone)]
pub struct RobustEntropy {
    pub value: f64,
    pub argmin: EntropyArgmin,
    pub iterations: usize,
}

/// Robust entropy `inf_P H(q, P)` over an ambiguity set.
///
/// For extreme-point sets the mixture weights are found by multiplicative
/// (mirror) updates on the simplex with a certified optimality gap of
/// [`ROBUST_ENTROPY_TOL`]; Wasserstein balls are reduced to the hull of their
/// polytope vertices, with a Lagrangian scheme for balls too large to
/// enumerate.
pub fn robust_entropy(q: &ProbVector, amb: &AmbiguitySet) -> Result<RobustEntropy> {
    if q.len() != amb.children() {
        return Err(Error::DimensionMismatch(
            "measure length does not match ambiguity child count".into(),
        ));
    }
    match amb {
        AmbiguitySet::ExtremePoints { measures } => {
            let (value, lambda, iterations) = mixture_entropy(q, measures)?;
            Ok(RobustEntropy {
                value,
                argmin: EntropyArgmin::Mixture(lambda),
                iterations,
            })
        }
        AmbiguitySet::WassersteinBall {
            center,
            radius,
            cost,
        } => {
            if *radius == 0.0 {
                return Ok(RobustEntropy {
                    value: relative_entropy(q, center)?,
                    argmin: EntropyArgmin::BallElement(center.clone()),
                    iterations: 0,
                });
            }
            if let Some(vertices) = ball_vertices(center, *radius, cost) {
                let (value, lambda, iterations) = mixture_entropy(q, &vertices)?;
                let mut p = vec![0.0; q.len()];
                for (w, v) in lambda.iter().zip(&vertices) {
                    for i in 0..p.len() {
                        p[i] += w * v[i];
                    }
                }
                Ok(RobustEntropy {
                    value,
                    argmin: EntropyArgmin::BallElement(ProbVector::new(p)?),
                    iterations,
                })
            } else {
                ball_entropy_lagrangian(q, center, *radius, cost)
            }
        }
    }
}

/// Minimizes `lambda -> H(q, sum_k lambda_k p_k)` over the simplex.
/// Returns (value, weights, iterations).
fn mixture_entropy(q: &ProbVector, measures: &[ProbVector]) -> Result<(f64, Vec<f64>, usize)> {
    let n = q.len();
    let k = measures.len();
    // No dominating mixture exists iff some charged child is missed by every
    // extreme point.
    for i in 0..n {
        if q[i] > 0.0 && measures.iter().all(|m| m[i] <= 0.0) {
            return Ok((f64::INFINITY, vec![1.0 / k as f64; k], 0));
        }
    }
    if k == 1 {
        return Ok((relative_entropy(q, &measures[0])?, vec![1.0], 0));
    }

    let mix = |lambda: &[f64]| -> Vec<f64> {
        (0..n)
            .map(|i| lambda.iter().zip(measures).map(|(w, m)| w * m[i]).sum())
            .collect()
    };
    let objective = |m: &[f64]| -> f64 {
        let mut f = 0.0;
        for i in 0..n {
            if q[i] > 0.0 {
                f += q[i] * (q[i] / m[i]).ln();
            }
        }
        f
    };
    // Ratios r_k = sum_i q_i p_k,i / m_i = -grad_k; lambda . r = 1 always,
    // so the linearization gap over the simplex is max_k r_k - 1.
    let ratios = |m: &[f64], r: &mut [f64]| {
        for (kk, rk) in r.iter_mut().enumerate() {
            let mut s = 0.0;
            for i in 0..n {
                if q[i] > 0.0 && m[i] > 0.0 {
                    s += q[i] * measures[kk][i] / m[i];
                }
            }
            *rk = s;
        }
    };
    let tol_at = |f: f64| ROBUST_ENTROPY_TOL.max(1e-12 * f.abs());

    let mut lambda = vec![1.0 / k as f64; k];
    let mut r = vec![0.0; k];
    let mut iter = 0usize;

    // Multiplicative (mirror) warm-up: lambda_k <- lambda_k r_k is monotone
    // for this objective and keeps the simplex invariant.
    while iter < 200 {
        iter += 1;
        let m = mix(&lambda);
        ratios(&m, &mut r);
        let gap = r.iter().cloned().fold(0.0f64, f64::max) - 1.0;
        if gap <= tol_at(objective(&m)) {
            return Ok((objective(&m).max(0.0), lambda, iter));
        }
        for (w, rk) in lambda.iter_mut().zip(&r) {
            *w *= rk;
        }
        let s: f64 = lambda.iter().sum();
        for w in &mut lambda {
            *w /= s;
        }
    }

    // Membership shortcut: if q is itself a mixture, the infimum is zero and
    // the fitted weights certify it (every ratio is then at most one).
    if let Ok((fit, dist)) = fit_mixture(q, measures) {
        if dist <= 1e-12 {
            let m = mix(&fit);
            ratios(&m, &mut r);
            let gap = r.iter().cloned().fold(0.0f64, f64::max) - 1.0;
            let f = objective(&m);
            if gap <= tol_at(f) {
                return Ok((f.max(0.0), fit, iter));
            }
        }
        if dist < 1e-2 {
            let total: f64 = fit.iter().sum();
            if total > 0.0 {
                lambda = fit.into_iter().map(|w| (w / total).max(0.0)).collect();
            }
        }
    }

    // Projected Newton on the current face: minimizes the objective with the
    // last active weight eliminated, clamping at the boundary. Monotone in
    // the objective and quadratic once the face is right.
    let face_newton = |lambda: &mut Vec<f64>, iter: &mut usize| {
        for _ in 0..60 {
            *iter += 1;
            let active: Vec<usize> = (0..k).filter(|&kk| lambda[kk] > 0.0).collect();
            let a = active.len();
            if a <= 1 {
                return;
            }
            let m = mix(lambda);
            let f0 = objective(&m);
            let base = active[a - 1];
            let mut rg = nalgebra::DVector::<f64>::zeros(a - 1);
            let mut rh = nalgebra::DMatrix::<f64>::zeros(a - 1, a - 1);
            for (row, &kk) in active[..a - 1].iter().enumerate() {
                let mut g = 0.0;
                for i in 0..n {
                    if q[i] > 0.0 && m[i] > 0.0 {
                        g -= q[i] * (measures[kk][i] - measures[base][i]) / m[i];
                    }
                }
                rg[row] = g;
                for (col, &jj) in active[..a - 1].iter().enumerate() {
                    let mut h = 0.0;
                    for i in 0..n {
                        if q[i] > 0.0 && m[i] > 0.0 {
                            h += q[i] * (measures[kk][i] - measures[base][i])
                                * (measures[jj][i] - measures[base][i])
                                / (m[i] * m[i]);
                        }
                    }
                    rh[(row, col)] = h;
                }
            }
            if rg.norm() <= 1e-15 {
                return;
            }
            for d in 0..a - 1 {
                rh[(d, d)] += 1e-13 * (1.0 + rh[(d, d)].abs());
            }
            let Ok(dir) = rh.clone().svd(true, true).solve(&(-&rg), 1e-14) else {
                return;
            };
            // Step cap keeping all weights nonnegative (base moves by the
            // negated sum).
            let dir_base: f64 = -dir.iter().sum::<f64>();
            let mut t_cap = 1.0f64;
            for (row, &kk) in active[..a - 1].iter().enumerate() {
                if dir[row] < 0.0 {
                    t_cap = t_cap.min(-lambda[kk] / dir[row]);
                }
            }
            if dir_base < 0.0 {
                t_cap = t_cap.min(-lambda[base] / dir_base);
            }
            let mut t = t_cap.min(1.0);
            let mut moved = false;
            for _ in 0..50 {
                let mut cand = lambda.clone();
                for (row, &kk) in active[..a - 1].iter().enumerate() {
                    cand[kk] = (cand[kk] + t * dir[row]).max(0.0);
                }
                cand[base] = (cand[base] + t * dir_base).max(0.0);
                let s: f64 = cand.iter().sum();
                if s > 0.0 {
                    for w in &mut cand {
                        *w /= s;
                    }
                    let fc = objective(&mix(&cand));
                    if fc < f0 - 1e-16 {
                        *lambda = cand;
                        moved = true;
                        break;
                    }
                }
                t *= 0.5;
            }
            if !moved {
                return;
            }
        }
    };

    // Frank-Wolfe with away steps and exact line search. Away steps retract
    // weights to the face boundary exactly, so optimal faces are identified
    // in finitely many drops; the Newton polish finishes each face.
    while iter < ROBUST_ENTROPY_MAX_ITER {
        iter += 1;
        if iter % 40 == 0 {
            face_newton(&mut lambda, &mut iter);
        }
        let m = mix(&lambda);
        ratios(&m, &mut r);
        let f = objective(&m);
        let gap = r.iter().cloned().fold(0.0f64, f64::max) - 1.0;
        if gap <= tol_at(f) {
            return Ok((f.max(0.0), lambda, iter));
        }
        let toward = r
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .map(|(i, _)| i)
            .unwrap();
        let away = lambda
            .iter()
            .enumerate()
            .filter(|(_, &w)| w > 0.0)
            .min_by(|a, b| r[a.0].total_cmp(&r[b.0]))
            .map(|(i, _)| i)
            .unwrap();
        let fw_gain = r[toward] - 1.0;
        let aw_gain = 1.0 - r[away];
        // Direction in mixture space and the admissible step range.
        let (dm, t_max, is_away): (Vec<f64>, f64, bool) = if fw_gain >= aw_gain {
            let d = (0..n).map(|i| measures[toward][i] - m[i]).collect();
            (d, 1.0, false)
        } else {
            let d = (0..n).map(|i| m[i] - measures[away][i]).collect();
            let w = lambda[away];
            (d, if w < 1.0 { w / (1.0 - w) } else { 1e6 }, true)
        };
        // Exact line search on the convex restriction: the derivative
        // -sum_i q_i dm_i / (m_i + t dm_i) is increasing in t.
        let slope = |t: f64| -> f64 {
            let mut s = 0.0;
            for i in 0..n {
                if q[i] > 0.0 {
                    let denom = m[i] + t * dm[i];
                    if denom <= 0.0 {
                        return f64::INFINITY;
                    }
                    s -= q[i] * dm[i] / denom;
                }
            }
            s
        };
        let t = if slope(t_max) <= 0.0 {
            t_max
        } else {
            let (mut lo, mut hi) = (0.0f64, t_max);
            for _ in 0..90 {
                let mid = 0.5 * (lo + hi);
                if slope(mid) <= 0.0 {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            0.5 * (lo + hi)
        };
        if t <= 0.0 {
            break;
        }
        if is_away {
            for (pos, w) in lambda.iter_mut().enumerate() {
                if pos == away {
                    *w = (*w * (1.0 + t) - t).max(0.0);
                } else {
                    *w *= 1.0 + t;
                }
            }
        } else {
            for (pos, w) in lambda.iter_mut().enumerate() {
                *w *= 1.0 - t;
                if pos == toward {
                    *w += t;
                }
            }
        }
        let s: f64 = lambda.iter().sum();
        for w in &mut lambda {
            *w /= s;
        }
    }
    let m = mix(&lambda);
    ratios(&m, &mut r);
    let f = objective(&m);
    let gap = r.iter().cloned().fold(0.0f64, f64::max) - 1.0;
    Err(Error::NoConvergence(format!(
        "robust entropy stalled at f = {f:.9} with gap {gap:.3e}"
    )))
}


/// Closest mixture of the measures to `q` in L1, via a small LP. Returns the
/// weights and the attained distance.
fn fit_mixture(q: &ProbVector, measures: &[ProbVector]) -> Result<(Vec<f64>, f64)> {
    let n = q.len();
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
        lp.constraint(&terms, Cmp::Eq, q[i]);
    }
    let sol = lp.solve()?;
    Ok((lambda.iter().map(|&v| sol.x[v].max(0.0)).collect(), sol.value))
}

/// Vertices of the ball polytope in marginal space, found by enumerating
/// basic feasible solutions of the transport system. `None` when the child
/// count makes enumeration too expensive.
fn ball_vertices(center: &ProbVector, radius: f64, cost: &[Vec<f64>]) -> Option<Vec<ProbVector>> {
    let n = center.len();
    if n > 5 {
        return None;
    }
    // Variables: the n^2 plan entries plus one slack for the budget row.
    // Equalities: n column sums and the budget with slack.
    let nv = n * n + 1;
    let ne = n + 1;
    let mut a = nalgebra::DMatrix::<f64>::zeros(ne, nv);
    let mut b = nalgebra::DVector::<f64>::zeros(ne);
    for i in 0..n {
        for j in 0..n {
            a[(j, i * n + j)] = 1.0;
            a[(n, i * n + j)] = cost[i][j];
        }
    }
    for j in 0..n {
        b[j] = center[j];
    }
    a[(n, nv - 1)] = 1.0;
    b[n] = radius;

    let mut seen: std::collections::BTreeSet<Vec<i64>> = std::collections::BTreeSet::new();
    let mut vertices = Vec::new();
    let mut basis: Vec<usize> = (0..ne).collect();
    loop {
        // Solve for the current basis.
        let cols: Vec<usize> = basis.clone();
        let ab = a.select_columns(cols.iter());
        if let Some(sol) = ab.clone().lu().solve(&b) {
            let residual = (&ab * &sol - &b).norm();
            if residual < 1e-9 && sol.iter().all(|&x| x >= -1e-9) {
                let mut p = vec![0.0; n];
                for (pos, &col) in cols.iter().enumerate() {
                    if col < n * n {
                        p[col / n] += sol[pos].max(0.0);
                    }
                }
                let key: Vec<i64> = p.iter().map(|x| (x * 1e10).round() as i64).collect();
                if seen.insert(key) {
                    if let Ok(pv) = ProbVector::new(p) {
                        vertices.push(pv);
                    }
                }
            }
        }
        // Next combination of basis columns.
        let mut i = ne;
        loop {
            if i == 0 {
                if vertices.is_empty() {
                    return None;
                }
                return Some(vertices);
            }
            i -= 1;
            if basis[i] < nv - (ne - i) {
                basis[i] += 1;
                for jj in i + 1..ne {
                    basis[jj] = basis[jj - 1] + 1;
                }
                break;
            }
        }
    }
}

/// Lagrangian dual scheme for balls whose vertex set is too large: the
/// transport budget is dualized and the inner problem solved by
/// multiplicative updates per plan column.
fn ball_entropy_lagrangian(
    q: &ProbVector,
    center: &ProbVector,
    radius: f64,
    cost: &[Vec<f64>],
) -> Result<RobustEntropy> {
    let n = q.len();
    let feasible_value = |plan: &Vec<Vec<f64>>| -> f64 {
        let mut h = 0.0;
        for i in 0..n {
            let pi: f64 = plan[i].iter().sum();
            if q[i] > 0.0 {
                if pi <= 0.0 {
                    return f64::INFINITY;
                }
                h += q[i] * (q[i] / pi).ln();
            }
        }
        h
    };
    // Inner minimization for a fixed multiplier; returns (plan, lagrangian value).
    let inner = |mu: f64| -> (Vec<Vec<f64>>, f64) {
        let mut plan: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..n).map(|j| center[j] / n as f64).collect())
            .collect();
        let mut iterations = 0usize;
        let mut step = 0.5;
        let mut value = f64::INFINITY;
        while iterations < 20_000 {
            iterations += 1;
            let p: Vec<f64> = (0..n).map(|i| plan[i].iter().sum()).collect();
            let mut grad = vec![vec![0.0; n]; n];
            let mut lin_gap = 0.0;
            let mut cur = 0.0;
            for i in 0..n {
                for j in 0..n {
                    let g = if q[i] > 0.0 { -q[i] / p[i] } else { 0.0 } + mu * cost[i][j];
                    grad[i][j] = g;
                }
            }
            for i in 0..n {
                if q[i] > 0.0 {
                    cur += q[i] * (q[i] / p[i]).ln();
                }
            }
            for j in 0..n {
                let mut dot = 0.0;
                let mut min_g = f64::INFINITY;
                for i in 0..n {
                    dot += plan[i][j] * grad[i][j];
                    min_g = min_g.min(grad[i][j]);
                }
                lin_gap += dot - center[j] * min_g;
            }
            let budget: f64 = (0..n)
                .map(|i| (0..n).map(|j| plan[i][j] * cost[i][j]).sum::<f64>())
                .sum();
            value = cur + mu * (budget - radius);
            if lin_gap <= 1e-12 {
                break;
            }
            // Multiplicative step per column.
            let mut best = plan.clone();
            let mut improved = false;
            for _ in 0..40 {
                let mut cand = plan.clone();
                for j in 0..n {
                    let mut sum = 0.0;
                    for i in 0..n {
                        cand[i][j] = (plan[i][j].max(center[j] * 1e-16))
                            * (-step * grad[i][j]).exp();
                        sum += cand[i][j];
                    }
                    if sum > 0.0 {
                        for i in 0..n {
                            cand[i][j] *= center[j] / sum;
                        }
                    }
                }
                let pc: Vec<f64> = (0..n).map(|i| cand[i].iter().sum()).collect();
                let mut fc = 0.0;
                for i in 0..n {
                    if q[i] > 0.0 {
                        fc += q[i] * (q[i] / pc[i].max(1e-300)).ln();
                    }
                }
                let bc: f64 = (0..n)
                    .map(|i| (0..n).map(|j| cand[i][j] * cost[i][j]).sum::<f64>())
                    .sum();
                if fc + mu * (bc - radius) < value {
                    best = cand;
                    step *= 1.2;
                    improved = true;
                    break;
                }
                step *= 0.5;
            }
            if !improved {
                break;
            }
            plan = best;
        }
        (plan, value)
    };

    // Golden-section maximization of the concave dual over the multiplier.
    let mut lo = 0.0;
    let mut hi = 1.0;
    while inner(hi).1 > inner(hi * 2.0).1 && hi < 1e8 {
        hi *= 2.0;
    }
    let phi = (5f64.sqrt() - 1.0) / 2.0;
    for _ in 0..80 {
        let m1 = hi - phi * (hi - lo);
        let m2 = lo + phi * (hi - lo);
        if inner(m1).1 >= inner(m2).1 {
            hi = m2;
        } else {
            lo = m1;
        }
    }
    let mu = 0.5 * (lo + hi);
    let (plan, dual) = inner(mu);
    // Restore feasibility by mixing toward the zero-cost diagonal plan.
    let budget: f64 = (0..n)
        .map(|i| (0..n).map(|j| plan[i][j] * cost[i][j]).sum::<f64>())
        .sum();
    let mut feas = plan.clone();
    if budget > radius {
        let theta = ((budget - radius) / budget).min(1.0);
        for i in 0..n {
            for j in 0..n {
                feas[i][j] *= 1.0 - theta;
                if i == j {
                    feas[i][j] += theta * center[j];
                }
            }
        }
    }
    let value = feasible_value(&feas);
    let gap = (value - dual).abs();
    if gap > 1e-6 * value.abs().max(1.0) {
        return Err(Error::NoConvergence(format!(
            "ball entropy gap {gap:.3e} not certified"
        )));
    }
    let p = ProbVector::new((0..n).map(|i| feas[i].iter().sum()).collect())?;
    Ok(RobustEntropy {
        value: value.max(0.0),
        argmin: EntropyArgmin::BallElement(p),
        iterations: 0,
    })
}

/// Stagewise entropy decomposition of a kernel tree against a reference
/// kernel tree on the same scenario tree.
pub fn entropy_chain(
    tree: &ScenarioTree,
    q: &KernelField,
    p: &KernelField,
) -> Result<EntropyDecomposition> {
    let visit = visitation(tree, q)?;
    let mut per_node = BTreeMap::new();
    let mut total = 0.0;
    for id in tree.interior() {
        let qk = kernel_at(q, id)?;
        let pk = kernel_at(p, id)?;
        let stage = if visit[id] > 0.0 {
            visit[id] * relative_entropy(qk, pk)?
        } else {
            0.0
        };
        per_node.insert(id, stage);
        total += stage;
    }
    Ok(EntropyDecomposition { total, per_node })
}

/// Stagewise robust entropy of a kernel tree against per-node ambiguity.
pub fn robust_entropy_chain(
    tree: &ScenarioTree,
    q: &KernelField,
    ambiguity: &[Option<AmbiguitySet>],
) -> Result<EntropyDecomposition> {
    let visit = visitation(tree, q)?;
    let mut per_node = BTreeMap::new();
    let mut total = 0.0;
    for id in tree.interior() {
        let qk = kernel_at(q, id)?;
        let amb = ambiguity[id].as_ref().ok_or_else(|| {
            Error::DimensionMismatch(format!("node {id} is missing an ambiguity set"))
        })?;
        let stage = if visit[id] > 0.0 {
            visit[id] * robust_entropy(qk, amb)?.value
        } else {
            0.0
        };
        per_node.insert(id, stage);
        total += stage;
    }
    Ok(EntropyDecomposition { total, per_node })
}

fn kernel_at<'a>(field: &'a KernelField, id: NodeId) -> Result<&'a ProbVector> {
    field
        .get(id)
        .and_then(|k| k.as_ref())
        .ok_or_else(|| Error::DimensionMismatch(format!("node {id} is missing a kernel")))
}

/// Probability of reaching each node under the kernel tree.
pub(crate) fn visitation(tree: &ScenarioTree, q: &KernelField) -> Result<Vec<f64>> {
    let mut visit = vec![0.0; tree.len()];
    visit[tree.root()] = 1.0;
    for id in tree.interior() {
        let qk = kernel_at(q, id)?;
        let node = tree.node(id);
        if qk.len() != node.children.len() {
            return Err(Error::DimensionMismatch(format!(
                "kernel at node {id} has {} entries for {} children",
                qk.len(),
                node.children.len()
            )));
        }
        for (pos, &c) in node.children.iter().enumerate() {
            visit[c] = visit[id] * qk[pos];
        }
    }
    Ok(visit)
}

/// Exponential tilting of `p` by `z`: the measure with weights proportional
/// to `p_i * exp(z_i)`, computed with max-shifted exponentials.
pub fn gibbs_tilt(p: &ProbVector, z: &[f64]) -> Result<ProbVector> {
    if p.len() != z.len() {
        return Err(Error::DimensionMismatch(
            "tilt vector length does not match measure".into(),
        ));
    }
    if z.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteClaim);
    }
    let m = p
        .as_slice()
        .iter()
        .zip(z)
        .filter(|(&w, _)| w > 0.0)
        .map(|(_, &v)| v)
        .fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = p
        .as_slice()
        .iter()
        .zip(z)
        .map(|(&pi, &zi)| if pi > 0.0 { pi * (zi - m).exp() } else { 0.0 })
        .collect();
    ProbVector::new(w)
}

/// Both sides of the variational identity
/// `log E_P[exp z] = sup_Q (E_Q[z] - H(Q, P))` together with the maximizing
/// measure (the Gibbs tilt).
#[derive(Debug, Clone)]
pub struct VariationalCheck {
    pub lhs: f64,
    pub rhs: f64,
    pub witness: ProbVector,
}

pub fn variational_check(p: &ProbVector, z: &[f64]) -> Result<VariationalCheck> {
    let lhs = log_exp_mean(p.as_slice(), z);
    let witness = gibbs_tilt(p, z)?;
    let rhs = witness.expect(z) - relative_entropy(&witness, p)?;
    debug_assert!(
        (lhs - rhs).abs() <= 1e-10 * lhs.abs().max(1.0),
        "variational identity violated: {lhs} vs {rhs}"
    );
    Ok(VariationalCheck { lhs, rhs, witness })
}

/// Euclidean projection onto the probability simplex.
fn project_simplex(v: &[f64]) -> Vec<f64> {
    let mut sorted = v.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let mut cumsum = 0.0;
    let mut tau = (sorted.iter().sum::<f64>() - 1.0) / sorted.len() as f64;
    for (k, &s) in sorted.iter().enumerate() {
        cumsum += s;
        let t = (cumsum - 1.0) / (k + 1) as f64;
        if s - t > 0.0 {
            tau = t;
        }
    }
    v.iter().map(|&x| (x - tau).max(0.0)).collect()
}

/// Maximizes `Q -> E_Q[z] - H(Q, p)` by projected gradient ascent with a
/// backtracking line search; test-grade reference used to cross-check the
/// Gibbs tilt.
pub fn variational_ascent(p: &ProbVector, z: &[f64], iterations: usize) -> Result<ProbVector> {
    let n = p.len();
    let objective = |q: &[f64]| -> f64 {
        let mut val = 0.0;
        for i in 0..n {
            val += q[i] * z[i];
            if q[i] > 0.0 {
                if p[i] <= 0.0 {
                    return f64::NEG_INFINITY;
                }
                val -= q[i] * (q[i] / p[i]).ln();
            }
        }
        val
    };
    let mut q: Vec<f64> = p.as_slice().to_vec();
    let mut best = objective(&q);
    let mut step = 1.0;
    for _ in 0..iterations {
        let grad: Vec<f64> = (0..n)
            .map(|i| {
                if p[i] <= 0.0 {
                    -1e6
                } else {
                    z[i] - ((q[i].max(1e-300)) / p[i]).ln() - 1.0
                }
            })
            .collect();
        let mut improved = false;
        for _ in 0..50 {
            let trial: Vec<f64> = (0..n).map(|i| q[i] + step * grad[i]).collect();
            let cand = project_simplex(&trial);
            let val = objective(&cand);
            if val > best + 1e-16 {
                best = val;
                q = cand;
                step *= 1.5;
                improved = true;
                break;
            }
            step *= 0.5;
        }
        if !improved {
            break;
        }
    }
    ProbVector::new(q)
}

/// L1 projection of a measure onto the affine slice
/// `{Q : Q . column = 0 for every column, supp Q within support}` of the
/// simplex; errors with `Infeasible` when the slice is empty.
pub fn nearest_feasible_measure(
    q: &ProbVector,
    columns: &[Vec<f64>],
    support: &[usize],
) -> Result<ProbVector> {
    let n = q.len();
    let mut lp = Lp::new(Sense::Min);
    let vars: Vec<Option<usize>> = (0..n)
        .map(|i| {
            if support.contains(&i) {
                Some(lp.var(0.0, 0.0, 1.0))
            } else {
                None
            }
        })
        .collect();
    let simplex: Vec<(usize, f64)> = vars.iter().flatten().map(|&v| (v, 1.0)).collect();
    lp.constraint(&simplex, Cmp::Eq, 1.0);
    for col in columns {
        let terms: Vec<(usize, f64)> = (0..n)
            .filter_map(|i| vars[i].map(|v| (v, col[i])))
            .collect();
        lp.constraint(&terms, Cmp::Eq, 0.0);
    }
    for i in 0..n {
        if let Some(v) = vars[i] {
            let pos = lp.var(1.0, 0.0, f64::INFINITY);
            let neg = lp.var(1.0, 0.0, f64::INFINITY);
            lp.constraint(&[(v, 1.0), (pos, 1.0), (neg, -1.0)], Cmp::Eq, q[i]);
        }
    }
    let sol = lp.solve()?;
    let w: Vec<f64> = (0..n)
        .map(|i| vars[i].map(|v| sol.x[v].max(0.0)).unwrap_or(0.0))
        .collect();
    ProbVector::new(w)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::market::fixtures;

    fn pv(w: &[f64]) -> ProbVector {
        ProbVector::new(w.to_vec()).unwrap()
    }

    #[test]
    fn entropy_of_measure_against_itself_is_zero() {
        let p = pv(&[0.6, 0.4]);
        assert_eq!(relative_entropy(&p, &p).unwrap(), 0.0);
    }

    #[test]
    fn entropy_matches_direct_formula() {
        let expected = 0.5 * (0.5f64 / 0.6).ln() + 0.5 * (0.5f64 / 0.4).ln();
        let got = relative_entropy(&pv(&[0.5, 0.5]), &pv(&[0.6, 0.4])).unwrap();
        assert!((got - expected).abs() < 1e-15, "{got} vs {expected}");
        // Direct high-precision evaluation of the same expression.
        assert!((expected - 0.020410997260127572).abs() < 1e-15);
    }

    #[test]
    fn entropy_infinite_without_absolute_continuity() {
        let h = relative_entropy(&pv(&[1.0, 0.0]), &pv(&[0.0, 1.0])).unwrap();
        assert!(h.is_infinite());
    }

    #[test]
    fn robust_entropy_zero_at_hull_midpoint() {
        let m = fixtures::b2();
        let re = robust_entropy(&pv(&[0.5, 0.5]), m.ambiguity_at(0)).unwrap();
        assert!(re.value.abs() <= 1e-10, "value {}", re.value);
        match re.argmin {
            EntropyArgmin::Mixture(l) => {
                assert!((l[0] - 0.5).abs() < 1e-5 && (l[1] - 0.5).abs() < 1e-5)
            }
            _ => panic!("expected mixture weights"),
        }
    }

    #[test]
    fn robust_entropy_singleton_reduces_to_relative_entropy() {
        let m = fixtures::b1();
        let re = robust_entropy(&pv(&[0.5, 0.5]), m.ambiguity_at(0)).unwrap();
        let expected = relative_entropy(&pv(&[0.5, 0.5]), &pv(&[0.6, 0.4])).unwrap();
        assert!((re.value - expected).abs() < 1e-12);
    }

    #[test]
    fn robust_entropy_infinite_when_nothing_dominates() {
        let amb = AmbiguitySet::singleton(ProbVector::dirac(0, 2));
        let re = robust_entropy(&pv(&[0.5, 0.5]), &amb).unwrap();
        assert!(re.value.is_infinite());
    }

    #[test]
    fn chain_on_one_period_is_the_single_stage() {
        let m = fixtures::b1();
        let q: KernelField = vec![Some(pv(&[0.5, 0.5])), None, None];
        let p: KernelField = vec![Some(pv(&[0.6, 0.4])), None, None];
        let dec = entropy_chain(&m.tree, &q, &p).unwrap();
        let expected = relative_entropy(&pv(&[0.5, 0.5]), &pv(&[0.6, 0.4])).unwrap();
        assert!((dec.total - expected).abs() < 1e-15);
        assert_eq!(dec.per_node.len(), 1);
    }

    #[test]
    fn chain_vanishes_when_kernels_agree() {
        let m = fixtures::t2();
        let mut q: KernelField = vec![None; m.tree.len()];
        for id in m.tree.interior() {
            q[id] = Some(pv(&[0.55, 0.45]));
        }
        let dec = entropy_chain(&m.tree, &q, &q.clone()).unwrap();
        assert_eq!(dec.total, 0.0);
        assert!(dec.per_node.values().all(|&v| v == 0.0));
    }

    #[test]
    fn chain_total_matches_path_space_kl() {
        let m = fixtures::t2();
        let qs = [[0.5, 0.5], [0.3, 0.7], [0.8, 0.2]];
        let ps = [[0.6, 0.4], [0.5, 0.5], [0.7, 0.3]];
        let mut q: KernelField = vec![None; m.tree.len()];
        let mut p: KernelField = vec![None; m.tree.len()];
        for (pos, id) in m.tree.interior().enumerate() {
            q[id] = Some(pv(&qs[pos]));
            p[id] = Some(pv(&ps[pos]));
        }
        let dec = entropy_chain(&m.tree, &q, &p).unwrap();
        // Brute force: KL of the induced leaf laws.
        let qv = visitation(&m.tree, &q).unwrap();
        let pvis = visitation(&m.tree, &p).unwrap();
        let mut kl = 0.0;
        for &l in m.tree.leaves() {
            if qv[l] > 0.0 {
                kl += qv[l] * (qv[l] / pvis[l]).ln();
            }
        }
        assert!((dec.total - kl).abs() <= 1e-12, "{} vs {kl}", dec.total);
    }

    #[test]
    fn constant_tilt_leaves_measure_unchanged() {
        let p = pv(&[0.6, 0.4]);
        let q = gibbs_tilt(&p, &[3.0, 3.0]).unwrap();
        assert!((q[0] - 0.6).abs() < 1e-15);
    }

    #[test]
    fn tilt_solves_the_balanced_equation() {
        // 0.6 e^h = 0.4 e^{-h} at h = 0.5 ln(2/3).
        let h = 0.5 * (2f64 / 3.0).ln();
        let q = gibbs_tilt(&pv(&[0.6, 0.4]), &[h, -h]).unwrap();
        assert!((q[0] - 0.5).abs() < 1e-12 && (q[1] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn tilt_survives_huge_arguments() {
        let q = gibbs_tilt(&pv(&[0.5, 0.5]), &[1000.0, 0.0]).unwrap();
        assert!(q[0] > 1.0 - 1e-12 && q[1] < 1e-12);
        assert!(q.as_slice().iter().all(|w| w.is_finite()));
    }

    #[test]
    fn variational_identity_on_b1_payoff() {
        let p = pv(&[0.6, 0.4]);
        let chk = variational_check(&p, &[1.0, -1.0]).unwrap();
        let direct = (0.6 * 1f64.exp() + 0.4 * (-1f64).exp()).ln();
        assert!((chk.lhs - direct).abs() < 1e-14);
        assert!((chk.lhs - chk.rhs).abs() <= 1e-10);
    }

    #[test]
    fn variational_identity_trivial_at_zero() {
        let p = pv(&[0.3, 0.3, 0.4]);
        let chk = variational_check(&p, &[0.0, 0.0, 0.0]).unwrap();
        assert_eq!(chk.lhs, 0.0);
        assert!((chk.rhs).abs() < 1e-14);
        assert_eq!(chk.witness.as_slice(), p.as_slice());
    }

    #[test]
    fn gibbs_beats_gradient_ascent_witness() {
        let p = pv(&[0.2, 0.1, 0.4, 0.3]);
        let z = [0.7, -1.2, 0.3, 2.0];
        let chk = variational_check(&p, &z).unwrap();
        let contender = variational_ascent(&p, &z, 5000).unwrap();
        let val = contender.expect(&z) - relative_entropy(&contender, &p).unwrap();
        assert!(chk.rhs >= val - 1e-8, "gibbs {} vs ascent {val}", chk.rhs);
        for i in 0..4 {
            assert!((chk.witness[i] - contender[i]).abs() < 1e-4);
        }
    }

    #[test]
    fn ball_entropy_clipped_at_the_boundary() {
        // Two atoms at distance one, center on the first, quarter radius:
        // the ball is {P : P_2 <= 0.25} and the minimizer caps the second
        // coordinate of q at the boundary.
        let amb = AmbiguitySet::wasserstein_ball(
            pv(&[1.0, 0.0]),
            0.25,
            vec![vec![0.0, 1.0], vec![1.0, 0.0]],
        )
        .unwrap();
        let q = pv(&[0.3, 0.7]);
        let re = robust_entropy(&q, &amb).unwrap();
        // Oracle: dense grid over the one free parameter.
        let mut best = f64::INFINITY;
        for k in 0..=250_000 {
            let p2 = 0.25 * k as f64 / 250_000.0;
            let p = pv(&[1.0 - p2, p2]);
            best = best.min(relative_entropy(&q, &p).unwrap());
        }
        assert!((re.value - best).abs() < 1e-9, "{} vs {best}", re.value);
        match re.argmin {
            EntropyArgmin::BallElement(p) => assert!((p[1] - 0.25).abs() < 1e-8),
            _ => panic!("expected ball element"),
        }
    }
}
