//! Robust exponential-utility valuation on finite scenario trees.
//!
//! The library solves the worst-case log-exponential valuation problem on a
//! finite event tree under non-dominated ambiguity about the one-step
//! transition laws, produces optimal dynamic and semi-static hedging
//! strategies, assembles dual martingale-measure certificates with entropy
//! penalties, and computes entropic and exact superhedging prices.

pub mod arbitrage;
pub mod dynprog;
pub mod entropy;
pub mod error;
mod lp;
pub mod market;
pub mod models;
pub mod oneperiod;
pub mod semistatic;
mod simplex;
pub mod superhedge;
mod treelp;

pub use error::{Error, Result};

/// Shared solver tolerances and limits.
#[derive(Debug, Clone)]
pub struct SolverConfig {
    /// Certified primal/dual gap, relative to `max(1, |value|)`.
    pub tol_gap: f64,
    /// Decision tolerance for linear programs.
    pub tol_lp: f64,
    /// Iteration cap for the one-period minimization.
    pub max_iterations: usize,
    /// Strategies larger than this are reported as diverging.
    pub h_norm_cap: f64,
    /// Initial half-width of the static option position search box.
    pub alpha_box: f64,
    /// Skip the per-node no-arbitrage gate; results then carry no duality
    /// guarantee.
    pub force: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            tol_gap: 1e-8,
            tol_lp: 1e-9,
            max_iterations: 50_000,
            h_norm_cap: 1e8,
            alpha_box: 1e4,
            force: false,
        }
    }
}
