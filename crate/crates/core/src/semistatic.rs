//! Semi-static extension of the dynamic solver: joint optimization over the
//! dynamic strategy and a static option position, with a dual calibrated to
//! the option prices.
//!
//! The value as a function of the static position is convex (an infimum of
//! convex functions over the dynamic strategies), and its subgradient at a
//! point is read off the dual certificate as the vector of option
//! expectations. The default mode minimizes jointly over the position; an
//! induction mode replays the nested per-option scalar minimizations instead
//! and serves as a cross-check.

use crate::dynprog::{backward_solve, check_na_everywhere, DualCertificate, Strategy};
use crate::error::{Error, Result};
use crate::lp::{Cmp, Lp, Sense};
use crate::market::{AmbiguitySet, ClaimVector, OptionSet, ScenarioTree};
use crate::treelp::leaf_polytope;
use crate::SolverConfig;

/// How the static position is optimized.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum AlphaMode {
    /// Joint convex minimization over the whole position vector.
    #[default]
    Joint,
    /// Nested scalar minimizations, one option at a time.
    Induction,
}

/// Solution of the semi-static problem.
#[derive(Debug, Clone)]
pub struct SemiStaticSolution {
    pub value: f64,
    /// Dynamic strategy with the static position in `alpha`.
    pub strategy: Strategy,
    pub certificate: DualCertificate,
    /// `|E_Q[g_i]|` under the certificate measure, one per option.
    pub calibration_residuals: Vec<f64>,
    pub gap: f64,
}

/// Checks the no-arbitrage condition extended by static option positions:
/// no semi-static strategy may have quasi-surely nonnegative, somewhere
/// positive terminal gain. Returns the offending root strategy and position
/// when it fails.
pub fn na_with_options(
    tree: &ScenarioTree,
    ambiguity: &[Option<AmbiguitySet>],
    options: &OptionSet,
) -> Result<Option<(Vec<f64>, Vec<f64>)>> {
    let poly = leaf_polytope(tree, ambiguity)?;
    let d = tree.dim();
    let mut lp = Lp::new(Sense::Max);
    // Strategy variables per interior node and asset, plus the position;
    // any arbitrage scales into the unit box.
    let interior: Vec<usize> = tree.interior().collect();
    let mut h_vars = vec![Vec::new(); tree.len()];
    for &id in &interior {
        h_vars[id] = (0..d).map(|_| lp.var(0.0, -1.0, 1.0)).collect();
    }
    let alpha: Vec<usize> = (0..options.e()).map(|_| lp.var(0.0, -1.0, 1.0)).collect();
    for (j, &leaf) in poly.leaves.iter().enumerate() {
        let mut terms: Vec<(usize, f64)> = Vec::new();
        // Walk the path from the leaf back to the root.
        let mut node = leaf;
        while let Some(parent) = tree.node(node).parent {
            let delta = tree.delta(node);
            for k in 0..d {
                terms.push((h_vars[parent][k], delta[k]));
            }
            node = parent;
        }
        let pos = poly.positions[j];
        for (i, g) in options.payoffs.iter().enumerate() {
            terms.push((alpha[i], g.values()[pos]));
        }
        // Explicit nonnegative gain variable per leaf, tied by equality.
        let gain = lp.var(0.0, 0.0, f64::INFINITY);
        terms.push((gain, -1.0));
        lp.constraint(&terms, Cmp::Eq, 0.0);
        let s = lp.var(1.0, 0.0, 1.0);
        lp.constraint(&[(s, 1.0), (gain, -1.0)], Cmp::Le, 0.0);
    }
    let sol = lp.solve()?;
    if sol.value > 1e-9 {
        let root_h: Vec<f64> = h_vars[tree.root()].iter().map(|&v| sol.x[v]).collect();
        let a: Vec<f64> = alpha.iter().map(|&v| sol.x[v]).collect();
        Ok(Some((root_h, a)))
    } else {
        Ok(None)
    }
}

/// Calibration rows `E_mu[g_i] = 0` over the reachable leaves for the first
/// `upto` options.
fn calibration_rows(
    poly: &crate::treelp::LeafPolytope,
    options: &OptionSet,
    upto: usize,
) -> Vec<(Vec<f64>, f64)> {
    options.payoffs[..upto]
        .iter()
        .map(|g| (poly.restrict(g), 0.0))
        .collect()
}

/// For each option, decides whether 0 lies in the relative interior of its
/// expectation range over martingale measures calibrated to the preceding
/// options. `false` marks a redundant-or-mispriced option: the value is
/// still computable but attainment of its position is not guaranteed.
pub fn option_span_check(
    tree: &ScenarioTree,
    ambiguity: &[Option<AmbiguitySet>],
    options: &OptionSet,
    cfg: &SolverConfig,
) -> Result<Vec<bool>> {
    let poly = leaf_polytope(tree, ambiguity)?;
    let tol = cfg.tol_lp.max(1e-9);
    let mut out = Vec::with_capacity(options.e());
    for i in 0..options.e() {
        let extra = calibration_rows(&poly, options, i);
        let obj = poly.restrict(&options.payoffs[i]);
        let lo = match poly.optimize(Sense::Min, &obj, &extra) {
            Ok((_, v)) => v,
            Err(Error::Infeasible(_)) => {
                out.push(false);
                continue;
            }
            Err(e) => return Err(e),
        };
        let (_, hi) = poly.optimize(Sense::Max, &obj, &extra)?;
        let degenerate_zero = lo.abs() <= tol && hi.abs() <= tol;
        let straddles = lo < -tol && hi > tol;
        out.push(degenerate_zero || straddles);
    }
    Ok(out)
}

/// Value of the dynamic problem with the claim shifted by a position in the
/// options, together with the option expectations under its certificate
/// (a subgradient of the value in the position).
fn value_and_subgradient(
    tree: &ScenarioTree,
    ambiguity: &[Option<AmbiguitySet>],
    claim: &ClaimVector,
    options: &OptionSet,
    alpha: &[f64],
    cfg: &SolverConfig,
) -> Result<(f64, Vec<f64>)> {
    let shifted = shift_claim(claim, options, alpha)?;
    let sol = backward_solve(tree, ambiguity, &shifted, cfg)?;
    let grads = options
        .payoffs
        .iter()
        .map(|g| sol.certificate.measure.expect(g))
        .collect();
    Ok((sol.value, grads))
}

fn shift_claim(claim: &ClaimVector, options: &OptionSet, alpha: &[f64]) -> Result<ClaimVector> {
    let mut shifted = claim.clone();
    for (a, g) in alpha.iter().zip(&options.payoffs) {
        shifted = shifted.axpy(*a, g)?;
    }
    Ok(shifted)
}

/// Solves the semi-static problem in the default joint mode.
pub fn solve_with_options(
    tree: &ScenarioTree,
    ambiguity: &[Option<AmbiguitySet>],
    claim: &ClaimVector,
    options: &OptionSet,
    cfg: &SolverConfig,
) -> Result<SemiStaticSolution> {
    solve_with_options_mode(tree, ambiguity, claim, options, cfg, AlphaMode::Joint)
}

/// Solves the semi-static problem with the chosen position-search mode.
pub fn solve_with_options_mode(
    tree: &ScenarioTree,
    ambiguity: &[Option<AmbiguitySet>],
    claim: &ClaimVector,
    options: &OptionSet,
    cfg: &SolverConfig,
    mode: AlphaMode,
) -> Result<SemiStaticSolution> {
    if !cfg.force {
        check_na_everywhere(tree, ambiguity)?;
        if let Some((h, alpha)) = na_with_options(tree, ambiguity, options)? {
            let witness = if alpha.iter().any(|a| a.abs() > 1e-9) {
                alpha
            } else {
                h
            };
            return Err(Error::Arbitrage { witness });
        }
    }
    let inner_cfg = SolverConfig {
        force: true,
        ..cfg.clone()
    };
    let e = options.e();
    let alpha = if e == 0 {
        Vec::new()
    } else {
        match mode {
            AlphaMode::Joint => joint_alpha(tree, ambiguity, claim, options, &inner_cfg)?,
            AlphaMode::Induction => {
                induction_alpha(tree, ambiguity, claim, options, e, &inner_cfg)?.1
            }
        }
    };
    assemble(tree, ambiguity, claim, options, alpha, &inner_cfg, cfg)
}

fn assemble(
    tree: &ScenarioTree,
    ambiguity: &[Option<AmbiguitySet>],
    claim: &ClaimVector,
    options: &OptionSet,
    alpha: Vec<f64>,
    inner_cfg: &SolverConfig,
    cfg: &SolverConfig,
) -> Result<SemiStaticSolution> {
    let shifted = shift_claim(claim, options, &alpha)?;
    let sol = backward_solve(tree, ambiguity, &shifted, inner_cfg)?;
    let calibration_residuals: Vec<f64> = options
        .payoffs
        .iter()
        .map(|g| sol.certificate.measure.expect(g).abs())
        .collect();
    // At the optimal position the certificate is calibrated, so its value
    // can be rebased to the original claim.
    let e_claim = sol.certificate.measure.expect(claim);
    let dual_value = e_claim - sol.certificate.entropy.total;
    let mut certificate = sol.certificate;
    certificate.dual_value = dual_value;
    let gap = (sol.value - dual_value).abs();
    let residual_bound = 1e-6f64;
    if calibration_residuals.iter().any(|r| *r > residual_bound) && !cfg.force {
        return Err(Error::NoConvergence(format!(
            "calibration residuals {calibration_residuals:?} exceed {residual_bound:e}"
        )));
    }
    let gap_bound = cfg.tol_gap * sol.value.abs().max(1.0) * (tree.len() as f64);
    if gap > gap_bound.max(1e-7) && !cfg.force {
        return Err(Error::GapExceeded(format!(
            "calibrated certificate value {dual_value:.12} vs primal {:.12}",
            sol.value
        )));
    }
    let mut strategy = sol.strategy;
    strategy.alpha = alpha;
    Ok(SemiStaticSolution {
        value: sol.value,
        strategy,
        certificate,
        calibration_residuals,
        gap,
    })
}

/// Joint convex minimization over the position: golden section for one
/// option, coordinate-wise golden sweeps above, with the option expectations
/// of the certificate as a stationarity certificate.
fn joint_alpha(
    tree: &ScenarioTree,
    ambiguity: &[Option<AmbiguitySet>],
    claim: &ClaimVector,
    options: &OptionSet,
    cfg: &SolverConfig,
) -> Result<Vec<f64>> {
    let e = options.e();
    let mut alpha = vec![0.0; e];
    let value_at = |alpha: &[f64]| -> Result<f64> {
        let shifted = shift_claim(claim, options, alpha)?;
        Ok(backward_solve(tree, ambiguity, &shifted, cfg)?.value)
    };
    let sweeps = if e == 1 { 1 } else { 12 };
    let mut last = value_at(&alpha)?;
    for _ in 0..sweeps {
        for i in 0..e {
            let base = alpha.clone();
            alpha[i] = scalar_golden(
                |b| {
                    let mut a = base.clone();
                    a[i] = b;
                    value_at(&a)
                },
                alpha[i],
                cfg,
            )?;
        }
        let now = value_at(&alpha)?;
        if (last - now).abs() <= 1e-12 * now.abs().max(1.0) {
            break;
        }
        last = now;
    }
    // Extra rounds while the stationarity certificate is loose.
    for _ in 0..4 {
        let (_, grads) = value_and_subgradient(tree, ambiguity, claim, options, &alpha, cfg)?;
        if grads.iter().all(|g| g.abs() <= 1e-8) {
            break;
        }
        for i in 0..e {
            if grads[i].abs() > 1e-8 {
                let base = alpha.clone();
                alpha[i] = scalar_golden(
                    |b| {
                        let mut a = base.clone();
                        a[i] = b;
                        value_at(&a)
                    },
                    alpha[i],
                    cfg,
                )?;
            }
        }
    }
    Ok(alpha)
}

/// Bracketing golden-section minimization of a convex scalar function,
/// centered at `start`, with divergence detection at the position box.
fn scalar_golden(
    mut f: impl FnMut(f64) -> Result<f64>,
    start: f64,
    cfg: &SolverConfig,
) -> Result<f64> {
    let mut radius = 1.0;
    let f_mid = f(start)?;
    let mut best_mid = f_mid;
    loop {
        let f_lo = f(start - radius)?;
        let f_hi = f(start + radius)?;
        // Inner solves carry ~1e-10 noise; only a clear decrease means the
        // bracket is too small.
        let noise = 1e-9 * (1.0 + best_mid.abs());
        if best_mid <= f_lo + noise && best_mid <= f_hi + noise {
            break;
        }
        best_mid = best_mid.min(f_lo).min(f_hi);
        radius *= 4.0;
        if radius > cfg.alpha_box {
            return Err(Error::Diverging(format!(
                "static position escaped the search box {:e}; no-arbitrage with options fails",
                cfg.alpha_box
            )));
        }
    }
    let (mut lo, mut hi) = (start - radius, start + radius);
    let phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut m1 = hi - phi * (hi - lo);
    let mut m2 = lo + phi * (hi - lo);
    let mut fv1 = f(m1)?;
    let mut fv2 = f(m2)?;
    while hi - lo > 1e-11 * (1.0 + lo.abs().max(hi.abs())) {
        if fv1 <= fv2 {
            hi = m2;
            m2 = m1;
            fv2 = fv1;
            m1 = hi - phi * (hi - lo);
            fv1 = f(m1)?;
        } else {
            lo = m1;
            m1 = m2;
            fv1 = fv2;
            m2 = lo + phi * (hi - lo);
            fv2 = f(m2)?;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Nested scalar minimizations mirroring the per-option induction: the last
/// option's position is optimized on the value of the problem with one
/// option fewer.
fn induction_alpha(
    tree: &ScenarioTree,
    ambiguity: &[Option<AmbiguitySet>],
    claim: &ClaimVector,
    options: &OptionSet,
    upto: usize,
    cfg: &SolverConfig,
) -> Result<(f64, Vec<f64>)> {
    if upto == 0 {
        let v = backward_solve(tree, ambiguity, claim, cfg)?.value;
        return Ok((v, Vec::new()));
    }
    let g = &options.payoffs[upto - 1];
    let beta = scalar_golden(
        |b| {
            let shifted = claim.axpy(b, g)?;
            Ok(induction_alpha(tree, ambiguity, &shifted, options, upto - 1, cfg)?.0)
        },
        0.0,
        cfg,
    )?;
    let shifted = claim.axpy(beta, g)?;
    let (v, mut alpha) = induction_alpha(tree, ambiguity, &shifted, options, upto - 1, cfg)?;
    alpha.push(beta);
    Ok((v, alpha))
}

/// Maximizes `E_Q[X] - H(Q, ambiguity)` over martingale measures calibrated
/// to all options. Errors with `Infeasible` when no calibrated martingale
/// measure exists (inconsistent option prices).
pub fn calibrated_dual(
    tree: &ScenarioTree,
    ambiguity: &[Option<AmbiguitySet>],
    claim: &ClaimVector,
    options: &OptionSet,
    cfg: &SolverConfig,
) -> Result<DualCertificate> {
    let poly = leaf_polytope(tree, ambiguity)?;
    let extra = calibration_rows(&poly, options, options.e());
    let zeros = vec![0.0; poly.leaves.len()];
    poly.optimize(Sense::Max, &zeros, &extra)
        .map_err(|e| match e {
            Error::Infeasible(_) => Error::Infeasible(
                "no martingale measure is calibrated to the options; prices are inconsistent"
                    .into(),
            ),
            other => other,
        })?;
    let sol = solve_with_options(tree, ambiguity, claim, options, cfg)?;
    Ok(sol.certificate)
}
