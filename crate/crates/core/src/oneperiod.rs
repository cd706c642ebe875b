//! One-period robust solver: minimizes `h -> sup_P log E_P[exp(x + h.dS)]`
//! over strategies and extracts the matching entropy-penalized dual
//! certificate.
//!
//! The objective is a max of smooth log-sum-exp pieces, one per extreme
//! measure (or lazily discovered ball vertex). Minimization runs a
//! golden-section bracket in one dimension and a cutting-plane scheme with a
//! certified lower bound otherwise, followed by a Newton polish on the active
//! pieces. The dual measure is the Gibbs tilt of the worst-case mixture,
//! projected onto the martingale constraints, and its value is re-derived
//! through an independent robust-entropy minimization.

use crate::arbitrage::{effective_span_for, na_check, quasi_sure_support, NodeMarket, SpanBasis};
use crate::entropy::{
    gibbs_tilt, log_exp_mean, nearest_feasible_measure, robust_entropy,
};
use crate::error::{Error, Result};
use crate::lp::{ambiguity_min_residual, ambiguity_optimize, Cmp, Lp, Sense};
use crate::market::{AmbiguitySet, ProbVector};
use crate::SolverConfig;

/// Identification of a worst-case measure inside the ambiguity set.
#[derive(Debug, Clone)]
pub enum WorstCase {
    /// Mixture weights over the extreme points.
    Mixture(Vec<f64>),
    /// Achieving element of a Wasserstein ball.
    BallElement(ProbVector),
}

impl WorstCase {
    /// Materializes the worst-case measure over the children.
    pub fn measure(&self, amb: &AmbiguitySet) -> ProbVector {
        match (self, amb) {
            (WorstCase::Mixture(lambda), AmbiguitySet::ExtremePoints { measures }) => {
                let n = measures[0].len();
                let mut p = vec![0.0; n];
                for (w, m) in lambda.iter().zip(measures) {
                    for i in 0..n {
                        p[i] += w * m[i];
                    }
                }
                ProbVector::new(p).expect("mixture of measures is a measure")
            }
            (WorstCase::BallElement(p), _) => p.clone(),
            (WorstCase::Mixture(_), AmbiguitySet::WassersteinBall { center, .. }) => {
                center.clone()
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct PrimalSolution {
    pub value: f64,
    pub h_star: Vec<f64>,
    pub worst_case: WorstCase,
    pub iterations: usize,
}

#[derive(Debug, Clone)]
pub struct DualSolution {
    pub dual_value: f64,
    pub dual_q: ProbVector,
    /// Robust entropy of the dual measure.
    pub entropy: f64,
    /// Largest martingale residual of the dual measure across assets.
    pub martingale_residual: f64,
    pub attained: bool,
    pub iterations: usize,
}

/// Matched primal/dual solution of the one-period problem.
#[derive(Debug, Clone)]
pub struct OnePeriodSolution {
    pub value: f64,
    pub h_star: Vec<f64>,
    pub worst_case: WorstCase,
    pub dual_q: ProbVector,
    pub dual_value: f64,
    pub entropy: f64,
    pub gap: f64,
    pub iterations: usize,
    pub attained: bool,
}

/// `sup_P log E_P[exp(x + h.dS)]` over the ambiguity set, max-shift
/// stabilized, together with an achieving measure.
pub fn robust_logsumexp(m: &NodeMarket, x: &[f64], h: &[f64]) -> Result<(f64, ProbVector)> {
    check_payoff(m, x)?;
    if h.len() != m.dim() {
        return Err(Error::DimensionMismatch(
            "strategy length does not match asset count".into(),
        ));
    }
    let z: Vec<f64> = (0..m.children())
        .map(|i| x[i] + dot(h, &m.deltas[i]))
        .collect();
    match &m.ambiguity {
        AmbiguitySet::ExtremePoints { measures } => {
            let mut best = 0usize;
            let mut best_val = f64::NEG_INFINITY;
            for (k, p) in measures.iter().enumerate() {
                let v = log_exp_mean(p.as_slice(), &z);
                if v > best_val {
                    best_val = v;
                    best = k;
                }
            }
            Ok((best_val, measures[best].clone()))
        }
        amb => {
            let support = amb.support()?;
            let shift = support
                .iter()
                .map(|&i| z[i])
                .fold(f64::NEG_INFINITY, f64::max);
            let mut coeffs = vec![0.0; z.len()];
            for &i in &support {
                coeffs[i] = (z[i] - shift).exp();
            }
            let (p, v) = ambiguity_optimize(amb, Sense::Max, &coeffs, &[])?;
            Ok((shift + v.max(1e-300).ln(), p))
        }
    }
}

// ---------------------------------------------------------------------------
// Internal problem representation
// ---------------------------------------------------------------------------

/// A smooth piece of the objective: one candidate worst-case measure.
#[derive(Debug, Clone)]
struct Piece {
    p: ProbVector,
    /// Mixture weights when the piece is an extreme point (unit vector).
    lambda: Option<Vec<f64>>,
}

struct Problem<'a> {
    m: &'a NodeMarket,
    x: &'a [f64],
    support: Vec<usize>,
    span: SpanBasis,
    /// Span coordinates of the stock increments, one row per child.
    proj: Vec<Vec<f64>>,
    /// Candidate worst-case measures; fixed for hulls, grown lazily for balls.
    pieces: Vec<Piece>,
    is_ball: bool,
}

impl<'a> Problem<'a> {
    fn new(m: &'a NodeMarket, x: &'a [f64]) -> Result<Self> {
        check_payoff(m, x)?;
        let support = quasi_sure_support(m)?;
        let span = effective_span_for(m, &support)?;
        let proj: Vec<Vec<f64>> = m.deltas.iter().map(|d| span.project(d)).collect();
        let (pieces, is_ball) = match &m.ambiguity {
            AmbiguitySet::ExtremePoints { measures } => {
                let k = measures.len();
                let pieces = measures
                    .iter()
                    .enumerate()
                    .map(|(i, p)| {
                        let mut lambda = vec![0.0; k];
                        lambda[i] = 1.0;
                        Piece {
                            p: p.clone(),
                            lambda: Some(lambda),
                        }
                    })
                    .collect();
                (pieces, false)
            }
            AmbiguitySet::WassersteinBall { .. } => (Vec::new(), true),
        };
        Ok(Self {
            m,
            x,
            support,
            span,
            proj,
            pieces,
            is_ball,
        })
    }

    fn rank(&self) -> usize {
        self.span.rank()
    }

    fn z(&self, u: &[f64]) -> Vec<f64> {
        (0..self.m.children())
            .map(|i| self.x[i] + dot(u, &self.proj[i]))
            .collect()
    }

    fn piece_value(&self, piece: &Piece, z: &[f64]) -> f64 {
        log_exp_mean(piece.p.as_slice(), z)
    }

    /// Gradient (in span coordinates) of a piece at `z`.
    fn piece_grad(&self, piece: &Piece, z: &[f64]) -> Vec<f64> {
        let tilt = gibbs_tilt(&piece.p, z).expect("finite payoff tilts");
        let r = self.rank();
        let mut g = vec![0.0; r];
        for i in 0..z.len() {
            if tilt[i] > 0.0 {
                for c in 0..r {
                    g[c] += tilt[i] * self.proj[i][c];
                }
            }
        }
        g
    }

    fn piece_hessian(&self, piece: &Piece, z: &[f64]) -> nalgebra::DMatrix<f64> {
        let tilt = gibbs_tilt(&piece.p, z).expect("finite payoff tilts");
        let r = self.rank();
        let g = self.piece_grad(piece, z);
        let mut h = nalgebra::DMatrix::<f64>::zeros(r, r);
        for i in 0..z.len() {
            if tilt[i] > 0.0 {
                for a in 0..r {
                    for b in 0..r {
                        h[(a, b)] += tilt[i] * self.proj[i][a] * self.proj[i][b];
                    }
                }
            }
        }
        for a in 0..r {
            for b in 0..r {
                h[(a, b)] -= g[a] * g[b];
            }
        }
        h
    }

    /// Objective value at `u`; for balls this may add the achieving vertex to
    /// the piece pool.
    fn eval(&mut self, u: &[f64]) -> Result<f64> {
        let z = self.z(u);
        if self.is_ball {
            let shift = self
                .support
                .iter()
                .map(|&i| z[i])
                .fold(f64::NEG_INFINITY, f64::max);
            let mut coeffs = vec![0.0; z.len()];
            for &i in &self.support {
                coeffs[i] = (z[i] - shift).exp();
            }
            let (p, v) = ambiguity_optimize(&self.m.ambiguity, Sense::Max, &coeffs, &[])?;
            self.remember(p);
            let mut best = shift + v.max(1e-300).ln();
            for piece in &self.pieces {
                best = best.max(self.piece_value(piece, &z));
            }
            Ok(best)
        } else {
            Ok(self
                .pieces
                .iter()
                .map(|p| self.piece_value(p, &z))
                .fold(f64::NEG_INFINITY, f64::max))
        }
    }

    fn remember(&mut self, p: ProbVector) {
        let close = self.pieces.iter().any(|q| {
            q.p.as_slice()
                .iter()
                .zip(p.as_slice())
                .all(|(a, b)| (a - b).abs() < 1e-10)
        });
        if !close && self.pieces.len() < 128 {
            self.pieces.push(Piece { p, lambda: None });
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn check_payoff(m: &NodeMarket, x: &[f64]) -> Result<()> {
    if x.len() != m.children() {
        return Err(Error::DimensionMismatch(
            "payoff length does not match child count".into(),
        ));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteClaim);
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Primal minimization
// ---------------------------------------------------------------------------

/// Minimizes the robust log-sum-exp objective over the effective span.
/// Components of the strategy orthogonal to the span are free and set to 0.
pub fn primal_solve(m: &NodeMarket, x: &[f64], cfg: &SolverConfig) -> Result<PrimalSolution> {
    if !cfg.force {
        if let crate::arbitrage::NaVerdict::Arbitrage { witness } = na_check(m)? {
            return Err(Error::Arbitrage { witness });
        }
    }
    let mut problem = Problem::new(m, x)?;
    let (u, iterations) = minimize(&mut problem, cfg)?;
    let (value, worst_case, u, extra) = polish_and_certify(&mut problem, u, cfg)?;
    Ok(PrimalSolution {
        value,
        h_star: problem.span.lift(&u),
        worst_case,
        iterations: iterations + extra,
    })
}

/// Raw minimization loop: golden section in rank one, cutting planes above.
fn minimize(problem: &mut Problem, cfg: &SolverConfig) -> Result<(Vec<f64>, usize)> {
    match problem.rank() {
        0 => Ok((Vec::new(), 0)),
        1 => golden_section(problem, cfg),
        _ => cutting_plane(problem, cfg),
    }
}

fn golden_section(problem: &mut Problem, cfg: &SolverConfig) -> Result<(Vec<f64>, usize)> {
    let mut iters = 0usize;
    let mut radius = 1.0;
    let f = |p: &mut Problem, u: f64| p.eval(&[u]);
    let mut f_mid = f(problem, 0.0)?;
    loop {
        let f_lo = f(problem, -radius)?;
        let f_hi = f(problem, radius)?;
        iters += 3;
        if f_mid <= f_lo && f_mid <= f_hi {
            break;
        }
        f_mid = f_mid.min(f_lo).min(f_hi);
        radius *= 4.0;
        if radius > cfg.h_norm_cap {
            return Err(Error::Diverging(format!(
                "strategy bracket exceeded {:e}; the market is at or near arbitrage",
                cfg.h_norm_cap
            )));
        }
    }
    let (mut lo, mut hi) = (-radius, radius);
    let phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut m1 = hi - phi * (hi - lo);
    let mut m2 = lo + phi * (hi - lo);
    let mut f1 = f(problem, m1)?;
    let mut f2 = f(problem, m2)?;
    while hi - lo > 1e-12 * (1.0 + lo.abs().max(hi.abs())) && iters < cfg.max_iterations {
        iters += 1;
        if f1 <= f2 {
            hi = m2;
            m2 = m1;
            f2 = f1;
            m1 = hi - phi * (hi - lo);
            f1 = f(problem, m1)?;
        } else {
            lo = m1;
            m1 = m2;
            f1 = f2;
            m2 = lo + phi * (hi - lo);
            f2 = f(problem, m2)?;
        }
    }
    Ok((vec![0.5 * (lo + hi)], iters))
}

struct CutPool {
    /// (point, value, gradient) triples defining lower supports.
    cuts: Vec<(Vec<f64>, f64, Vec<f64>)>,
}

fn cutting_plane(problem: &mut Problem, cfg: &SolverConfig) -> Result<(Vec<f64>, usize)> {
    let r = problem.rank();
    let scale = 1.0 + problem.x.iter().fold(0.0f64, |a, &b| a.max(b.abs()));
    let mut radius = 32.0 * scale;
    let mut pool = CutPool { cuts: Vec::new() };
    let mut u_best = vec![0.0; r];
    let mut f_best = problem.eval(&u_best)?;
    add_cuts(problem, &u_best, &mut pool);
    let mut iters = 0usize;
    loop {
        iters += 1;
        if iters > cfg.max_iterations {
            return Err(Error::NoConvergence(format!(
                "cutting-plane iteration cap hit at value {f_best:.9}"
            )));
        }
        // Master problem over the current box.
        let mut lp = Lp::new(Sense::Min);
        let t = lp.var(1.0, f64::NEG_INFINITY, f64::INFINITY);
        let u_vars: Vec<usize> = (0..r).map(|_| lp.var(0.0, -radius, radius)).collect();
        for (at, val, grad) in &pool.cuts {
            let mut terms = vec![(t, 1.0)];
            for c in 0..r {
                terms.push((u_vars[c], -grad[c]));
            }
            lp.constraint(&terms, Cmp::Ge, val - dot(grad, at));
        }
        let sol = lp.solve()?;
        let u_next: Vec<f64> = u_vars.iter().map(|&v| sol.x[v]).collect();
        let lower = sol.value;
        let on_boundary = u_next.iter().any(|&c| c.abs() > 0.999 * radius);
        let f_next = problem.eval(&u_next)?;
        add_cuts(problem, &u_next, &mut pool);
        if f_next < f_best {
            f_best = f_next;
            u_best = u_next;
        }
        if on_boundary {
            radius *= 8.0;
            if radius > cfg.h_norm_cap {
                return Err(Error::Diverging(format!(
                    "strategy box exceeded {:e}; the market is at or near arbitrage",
                    cfg.h_norm_cap
                )));
            }
            continue;
        }
        let tol = (0.1 * cfg.tol_gap * f_best.abs().max(1.0)).max(1e-11);
        if f_best - lower <= tol {
            return Ok((u_best, iters));
        }
    }
}

fn add_cuts(problem: &Problem, u: &[f64], pool: &mut CutPool) {
    let z = problem.z(u);
    for piece in &problem.pieces {
        let val = problem.piece_value(piece, &z);
        if val.is_finite() {
            let grad = problem.piece_grad(piece, &z);
            pool.cuts.push((u.to_vec(), val, grad));
        }
    }
    if pool.cuts.len() > 4000 {
        let keep = pool.cuts.len() - 2000;
        pool.cuts.drain(..keep);
    }
}

// ---------------------------------------------------------------------------
// Newton polish on the active pieces
// ---------------------------------------------------------------------------

/// Refines the minimizer by solving the stationarity system of the active
/// pieces and returns the value, the worst-case mixture and the refined point.
fn polish_and_certify(
    problem: &mut Problem,
    u0: Vec<f64>,
    _cfg: &SolverConfig,
) -> Result<(f64, WorstCase, Vec<f64>, usize)> {
    let f0 = problem.eval(&u0)?;
    let z0 = problem.z(&u0);

    // Active pieces at the incumbent.
    let tol_active = 1e-6 * f0.abs().max(1.0);
    let mut active: Vec<usize> = (0..problem.pieces.len())
        .filter(|&k| problem.piece_value(&problem.pieces[k], &z0) >= f0 - tol_active)
        .collect();
    if active.is_empty() {
        // No finite piece (all measures miss the support); fall back.
        return Ok((f0, fallback_worst_case(problem, &z0), u0, 0));
    }

    let mut best = (f0, u0.clone(), weights_for(problem, &active, &z0, f0));
    let mut steps = 0usize;
    'outer: loop {
        match newton_system(problem, &active, &best.1) {
            Some((u, w, residual)) if residual.is_finite() => {
                steps += 1;
                // Drop pieces assigned negative weight and retry.
                if let Some(pos) = w.iter().position(|&wi| wi < -1e-9) {
                    if active.len() > 1 {
                        active.remove(pos);
                        continue 'outer;
                    }
                }
                let f = problem.eval(&u)?;
                if f <= best.0 + 1e-12 * best.0.abs().max(1.0) {
                    let mut full_w = vec![0.0; problem.pieces.len()];
                    for (i, &k) in active.iter().enumerate() {
                        full_w[k] = w[i].max(0.0);
                    }
                    best = (f.min(best.0), u, full_w);
                }
                break;
            }
            _ => break,
        }
    }

    let (f_star, u_star, w) = best;
    let wsum: f64 = w.iter().sum();
    let worst = if wsum > 0.0 {
        let w: Vec<f64> = w.iter().map(|x| x / wsum).collect();
        if problem.is_ball {
            let n = problem.m.children();
            let mut p = vec![0.0; n];
            for (wi, piece) in w.iter().zip(&problem.pieces) {
                for i in 0..n {
                    p[i] += wi * piece.p[i];
                }
            }
            WorstCase::BallElement(ProbVector::new(p)?)
        } else {
            WorstCase::Mixture(w)
        }
    } else {
        fallback_worst_case(problem, &problem.z(&u_star))
    };
    Ok((f_star, worst, u_star, steps))
}

/// Initial weights: concentrate on the single best piece.
fn weights_for(problem: &Problem, active: &[usize], z: &[f64], _f: f64) -> Vec<f64> {
    let mut w = vec![0.0; problem.pieces.len()];
    let best = active
        .iter()
        .max_by(|&&a, &&b| {
            problem
                .piece_value(&problem.pieces[a], z)
                .total_cmp(&problem.piece_value(&problem.pieces[b], z))
        })
        .copied()
        .unwrap();
    w[best] = 1.0;
    w
}

fn fallback_worst_case(problem: &Problem, z: &[f64]) -> WorstCase {
    let (best, _) = problem
        .pieces
        .iter()
        .enumerate()
        .map(|(k, p)| (k, problem.piece_value(p, z)))
        .max_by(|a, b| a.1.total_cmp(&b.1))
        .unwrap_or((0, 0.0));
    if problem.pieces.is_empty() {
        return WorstCase::Mixture(Vec::new());
    }
    match &problem.pieces[best].lambda {
        Some(l) => WorstCase::Mixture(l.clone()),
        None => WorstCase::BallElement(problem.pieces[best].p.clone()),
    }
}

/// Newton iteration on the stationarity system of the pieces in `active`:
/// weighted gradients vanish, active values agree, weights sum to one.
/// Returns the refined point, weights and the final residual norm.
fn newton_system(
    problem: &Problem,
    active: &[usize],
    u0: &[f64],
) -> Option<(Vec<f64>, Vec<f64>, f64)> {
    let r = problem.rank();
    let a = active.len();
    let dim = r + a;
    let mut u = u0.to_vec();
    let mut w = vec![1.0 / a as f64; a];

    let residual = |u: &[f64], w: &[f64]| -> (nalgebra::DVector<f64>, f64) {
        let z = problem.z(u);
        let mut res = nalgebra::DVector::<f64>::zeros(dim);
        let grads: Vec<Vec<f64>> = active
            .iter()
            .map(|&k| problem.piece_grad(&problem.pieces[k], &z))
            .collect();
        let vals: Vec<f64> = active
            .iter()
            .map(|&k| problem.piece_value(&problem.pieces[k], &z))
            .collect();
        for c in 0..r {
            res[c] = w.iter().zip(&grads).map(|(wi, g)| wi * g[c]).sum();
        }
        for i in 1..a {
            res[r + i - 1] = vals[i] - vals[0];
        }
        res[dim - 1] = w.iter().sum::<f64>() - 1.0;
        let norm = res.norm();
        (res, norm)
    };

    let (_, mut norm) = residual(&u, &w);
    for _ in 0..60 {
        let z = problem.z(&u);
        let grads: Vec<Vec<f64>> = active
            .iter()
            .map(|&k| problem.piece_grad(&problem.pieces[k], &z))
            .collect();
        let hessians: Vec<nalgebra::DMatrix<f64>> = active
            .iter()
            .map(|&k| problem.piece_hessian(&problem.pieces[k], &z))
            .collect();
        let mut jac = nalgebra::DMatrix::<f64>::zeros(dim, dim);
        for c in 0..r {
            for c2 in 0..r {
                let mut s = 0.0;
                for (wi, h) in w.iter().zip(&hessians) {
                    s += wi * h[(c, c2)];
                }
                jac[(c, c2)] = s;
            }
            for i in 0..a {
                jac[(c, r + i)] = grads[i][c];
            }
        }
        for i in 1..a {
            for c in 0..r {
                jac[(r + i - 1, c)] = grads[i][c] - grads[0][c];
            }
        }
        for i in 0..a {
            jac[(dim - 1, r + i)] = 1.0;
        }
        // Tikhonov guard for rank-deficient systems.
        for c in 0..dim {
            jac[(c, c)] += 1e-14;
        }
        let (res, _) = residual(&u, &w);
        let step = jac.lu().solve(&(-&res))?;
        let mut alpha = 1.0;
        let mut improved = false;
        for _ in 0..40 {
            let u_try: Vec<f64> = (0..r).map(|c| u[c] + alpha * step[c]).collect();
            let w_try: Vec<f64> = (0..a).map(|i| w[i] + alpha * step[r + i]).collect();
            let (_, n_try) = residual(&u_try, &w_try);
            if n_try < norm * (1.0 - 1e-4 * alpha) {
                u = u_try;
                w = w_try;
                norm = n_try;
                improved = true;
                break;
            }
            alpha *= 0.5;
        }
        if !improved || norm < 1e-14 {
            break;
        }
    }
    Some((u, w, norm))
}

// ---------------------------------------------------------------------------
// Dual certificate
// ---------------------------------------------------------------------------

/// Maximizes `Q -> E_Q[x] - H(Q, ambiguity)` over martingale measures
/// supported in the quasi-sure support. The maximizer is constructed from
/// the minimax saddle (Gibbs tilt of the worst-case mixture) and its value is
/// recomputed through an independent robust-entropy minimization.
pub fn dual_solve(m: &NodeMarket, x: &[f64], cfg: &SolverConfig) -> Result<DualSolution> {
    let primal = primal_solve(m, x, cfg)?;
    dual_from_primal(m, x, &primal, cfg)
}

fn dual_from_primal(
    m: &NodeMarket,
    x: &[f64],
    primal: &PrimalSolution,
    cfg: &SolverConfig,
) -> Result<DualSolution> {
    let support = quasi_sure_support(m)?;
    let span = effective_span_for(m, &support)?;
    let proj: Vec<Vec<f64>> = m.deltas.iter().map(|d| span.project(d)).collect();
    let r = span.rank();
    let n = m.children();

    // Martingale feasibility inside the support.
    let span_columns: Vec<Vec<f64>> = (0..r)
        .map(|c| (0..n).map(|i| proj[i][c]).collect())
        .collect();
    nearest_feasible_measure(&ProbVector::uniform(n), &span_columns, &support).map_err(|_| {
        Error::Infeasible(
            "no martingale measure inside the quasi-sure support; the market has arbitrage"
                .into(),
        )
    })?;

    let z: Vec<f64> = (0..n)
        .map(|i| x[i] + dot(&primal.h_star, &m.deltas[i]))
        .collect();
    let p_mix = primal.worst_case.measure(&m.ambiguity);
    let mut q = gibbs_tilt(&p_mix, &z)?;
    let mut residual = martingale_residual(m, &q);

    if residual > cfg.tol_lp {
        // Walk along the optimal face of the sup side looking for a point
        // whose tilt is a martingale measure.
        let shift = support
            .iter()
            .map(|&i| z[i])
            .fold(f64::NEG_INFINITY, f64::max);
        let mut y = vec![0.0; n];
        for &i in &support {
            y[i] = (z[i] - shift).exp();
        }
        let (_, v) = ambiguity_optimize(&m.ambiguity, Sense::Max, &y, &[])?;
        let floor = v - v.abs() * 1e-11;
        let targets: Vec<Vec<f64>> = (0..r)
            .map(|c| (0..n).map(|i| y[i] * proj[i][c]).collect())
            .collect();
        if let Ok((p2, _)) = ambiguity_min_residual(&m.ambiguity, &y, floor, &targets) {
            let q2 = gibbs_tilt(&p2, &z)?;
            let r2 = martingale_residual(m, &q2);
            if r2 < residual {
                q = q2;
                residual = r2;
            }
        }
    }

    // Exact feasibility by an L1 projection onto the martingale slice.
    let mut attained = true;
    if residual > 1e-12 {
        let projected = nearest_feasible_measure(&q, &span_columns, &support)?;
        let moved: f64 = projected
            .as_slice()
            .iter()
            .zip(q.as_slice())
            .map(|(a, b)| (a - b).abs())
            .sum();
        if moved > 1e-4 {
            attained = false;
        }
        q = projected;
        residual = martingale_residual(m, &q);
    }

    let ent = robust_entropy(&q, &m.ambiguity)?;
    let dual_value = q.expect(x) - ent.value;
    Ok(DualSolution {
        dual_value,
        dual_q: q,
        entropy: ent.value,
        martingale_residual: residual,
        attained,
        iterations: ent.iterations,
    })
}

fn martingale_residual(m: &NodeMarket, q: &ProbVector) -> f64 {
    let d = m.dim();
    (0..d)
        .map(|k| {
            (0..m.children())
                .map(|i| q[i] * m.deltas[i][k])
                .sum::<f64>()
                .abs()
        })
        .fold(0.0, f64::max)
}

/// Full one-period solve: primal, dual certificate and the certified gap.
/// When the ambiguity set is a single measure, the dual measure is checked
/// against the direct Gibbs tilt of that measure.
pub fn solve_pair(m: &NodeMarket, x: &[f64], cfg: &SolverConfig) -> Result<OnePeriodSolution> {
    let primal = primal_solve(m, x, cfg)?;
    let dual = dual_from_primal(m, x, &primal, cfg)?;
    let gap = (primal.value - dual.dual_value).abs();
    if !gap.is_finite() || gap > cfg.tol_gap * primal.value.abs().max(1.0) * 10.0 {
        return Err(Error::GapExceeded(format!(
            "primal {:.12} vs dual {:.12} (gap {gap:.3e})",
            primal.value, dual.dual_value
        )));
    }
    if m.ambiguity.is_singleton() {
        let p = match &m.ambiguity {
            AmbiguitySet::ExtremePoints { measures } => measures[0].clone(),
            AmbiguitySet::WassersteinBall { center, .. } => center.clone(),
        };
        let z: Vec<f64> = (0..m.children())
            .map(|i| x[i] + dot(&primal.h_star, &m.deltas[i]))
            .collect();
        let direct = gibbs_tilt(&p, &z)?;
        let dev = direct
            .as_slice()
            .iter()
            .zip(dual.dual_q.as_slice())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        if dev > 1e-5 {
            return Err(Error::GapExceeded(format!(
                "dual measure deviates from the Gibbs tilt by {dev:.3e}"
            )));
        }
    }
    Ok(OnePeriodSolution {
        value: primal.value,
        h_star: primal.h_star,
        worst_case: primal.worst_case,
        dual_q: dual.dual_q,
        dual_value: dual.dual_value,
        entropy: dual.entropy,
        gap,
        iterations: primal.iterations + dual.iterations,
        attained: dual.attained,
    })
}
