//! Superhedging prices via linear programming over the martingale polytope,
//! entropic prices for finite risk aversion, and the monotone curve joining
//! them as the risk aversion grows.

use rayon::prelude::*;

use crate::dynprog::{backward_solve, MartingaleMeasure, Strategy};
use crate::entropy::robust_entropy_chain;
use crate::error::{Error, Result};
use crate::lp::Sense;
use crate::market::{AmbiguitySet, ClaimVector, OptionSet, ScenarioTree};
use crate::semistatic::solve_with_options;
use crate::treelp::{kernels_from_leaf_law, leaf_polytope};
use crate::SolverConfig;

/// Superhedging price with its maximizing martingale measure. The primal
/// hedge is recovered from LP duals when the backend exposes them; the
/// current backend does not, so `hedge` stays empty.
#[derive(Debug, Clone)]
pub struct SuperhedgePrice {
    pub pi: f64,
    pub witness: MartingaleMeasure,
    pub hedge: Option<Strategy>,
}

/// Entropic prices along a grid of risk aversions, the superhedging price
/// and the analytic bound on the terminal gap.
#[derive(Debug, Clone, serde::Serialize)]
pub struct GammaCurve {
    pub gammas: Vec<f64>,
    pub prices: Vec<f64>,
    pub pi_star: f64,
    /// `pi_star - prices.last()`.
    pub terminal_gap: f64,
    /// Robust entropy of the price-maximizing measure divided by the largest
    /// risk aversion; the terminal gap can never exceed it.
    pub entropy_bound: f64,
}

/// Largest expectation of the claim over martingale measures supported in
/// the quasi-sure support and calibrated to the options: the superhedging
/// price, computed as a single LP.
pub fn superhedge_price(
    tree: &ScenarioTree,
    ambiguity: &[Option<AmbiguitySet>],
    claim: &ClaimVector,
    options: &OptionSet,
    cfg: &SolverConfig,
) -> Result<SuperhedgePrice> {
    if !cfg.force {
        crate::dynprog::check_na_everywhere(tree, ambiguity)?;
    }
    let poly = leaf_polytope(tree, ambiguity)?;
    let extra: Vec<(Vec<f64>, f64)> = options
        .payoffs
        .iter()
        .map(|g| (poly.restrict(g), 0.0))
        .collect();
    let (mu, pi) = poly
        .optimize(Sense::Max, &poly.restrict(claim), &extra)
        .map_err(|e| match e {
            Error::Infeasible(_) => Error::Infeasible(
                "no calibrated martingale measure in the quasi-sure support".into(),
            ),
            other => other,
        })?;
    let law = poly.full_leaf_law(tree, &mu);
    let (kernels, _) = kernels_from_leaf_law(tree, ambiguity, &law)?;
    let witness = MartingaleMeasure::from_kernels(tree, kernels)?;
    Ok(SuperhedgePrice {
        pi,
        witness,
        hedge: None,
    })
}

/// Entropic price for risk aversion `gamma`: the scaled robust valuation of
/// the scaled claim. Options enter through the semi-static solver.
pub fn entropic_price(
    tree: &ScenarioTree,
    ambiguity: &[Option<AmbiguitySet>],
    claim: &ClaimVector,
    options: &OptionSet,
    gamma: f64,
    cfg: &SolverConfig,
) -> Result<f64> {
    if !(gamma > 0.0) || !gamma.is_finite() {
        return Err(Error::InvalidSpec(format!(
            "risk aversion must be positive and finite, got {gamma}"
        )));
    }
    let scaled = ClaimVector::new(claim.values().iter().map(|v| gamma * v).collect())?;
    if options.e() == 0 {
        Ok(backward_solve(tree, ambiguity, &scaled, cfg)?.value / gamma)
    } else {
        let scaled_options = OptionSet::new(
            options
                .payoffs
                .iter()
                .map(|g| ClaimVector::new(g.values().iter().map(|v| gamma * v).collect()))
                .collect::<Result<Vec<_>>>()?,
        );
        Ok(solve_with_options(tree, ambiguity, &scaled, &scaled_options, cfg)?.value / gamma)
    }
}

/// Evaluates the entropic price along a grid of risk aversions and the
/// superhedging price, verifying monotonicity and the entropy gap bound.
pub fn gamma_curve(
    tree: &ScenarioTree,
    ambiguity: &[Option<AmbiguitySet>],
    claim: &ClaimVector,
    options: &OptionSet,
    gammas: &[f64],
    cfg: &SolverConfig,
) -> Result<GammaCurve> {
    if gammas.is_empty() {
        return Err(Error::InvalidSpec("empty risk-aversion grid".into()));
    }
    if gammas.windows(2).any(|w| w[0] >= w[1]) || gammas[0] <= 0.0 {
        return Err(Error::InvalidSpec(
            "risk aversions must be strictly increasing and positive".into(),
        ));
    }
    let prices: Result<Vec<f64>> = gammas
        .par_iter()
        .map(|&g| entropic_price(tree, ambiguity, claim, options, g, cfg))
        .collect();
    let prices = prices?;
    let sh = superhedge_price(tree, ambiguity, claim, options, cfg)?;
    let pi_star = sh.pi;
    let slack = 1e-9 * pi_star.abs().max(1.0);
    for w in prices.windows(2) {
        if w[1] < w[0] - slack {
            return Err(Error::GapExceeded(format!(
                "entropic prices must be nondecreasing, got {} then {}",
                w[0], w[1]
            )));
        }
    }
    if let Some(&last) = prices.last() {
        for &p in &prices {
            if p > pi_star + slack {
                return Err(Error::GapExceeded(format!(
                    "entropic price {p} exceeds the superhedging price {pi_star}"
                )));
            }
        }
        let entropy = robust_entropy_chain(tree, &sh.witness.kernels, ambiguity)?;
        let gamma_max = *gammas.last().unwrap();
        let entropy_bound = entropy.total / gamma_max;
        let terminal_gap = pi_star - last;
        if terminal_gap > entropy_bound + slack {
            return Err(Error::GapExceeded(format!(
                "terminal gap {terminal_gap} exceeds the entropy bound {entropy_bound}"
            )));
        }
        Ok(GammaCurve {
            gammas: gammas.to_vec(),
            prices,
            pi_star,
            terminal_gap,
            entropy_bound,
        })
    } else {
        unreachable!("grid checked nonempty")
    }
}

/// Enumerates the vertices of the calibrated martingale polytope on a tiny
/// tree; test-oracle support for the superhedging LP and the dual solvers.
pub fn vertex_enumerate_martingale_polytope(
    tree: &ScenarioTree,
    ambiguity: &[Option<AmbiguitySet>],
    options: &OptionSet,
) -> Result<Vec<MartingaleMeasure>> {
    let poly = leaf_polytope(tree, ambiguity)?;
    let extra: Vec<(Vec<f64>, f64)> = options
        .payoffs
        .iter()
        .map(|g| (poly.restrict(g), 0.0))
        .collect();
    let verts = poly.vertices(&extra, 2_000_000)?;
    verts
        .into_iter()
        .map(|mu| {
            let law = poly.full_leaf_law(tree, &mu);
            let (kernels, _) = kernels_from_leaf_law(tree, ambiguity, &law)?;
            MartingaleMeasure::from_kernels(tree, kernels)
        })
        .collect()
}
