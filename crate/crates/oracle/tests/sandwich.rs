//! The sandwich that certifies both solvers at once: the barycentric dual
//! sweep lower-bounds the solver's dual, which agrees with the solver's
//! primal, which lower-bounds the exhaustive grid minimum up to grid slack.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use treehedge_core::arbitrage::{na_check, NaVerdict, NodeMarket};
use treehedge_core::market::{AmbiguitySet, ProbVector};
use treehedge_core::oneperiod::solve_pair;
use treehedge_core::SolverConfig;
use treehedge_oracle::{brute_dual, brute_primal, GridSpec};

fn random_prob(rng: &mut ChaCha8Rng, n: usize) -> ProbVector {
    let raw: Vec<f64> = (0..n)
        .map(|_| -(rng.gen_range(1e-6..1.0f64)).ln() + 0.05)
        .collect();
    ProbVector::new(raw).unwrap()
}

fn random_na_market(rng: &mut ChaCha8Rng) -> NodeMarket {
    loop {
        let d = rng.gen_range(1..=2);
        let children = rng.gen_range(d + 1..=4);
        let deltas: Vec<Vec<f64>> = (0..children)
            .map(|_| {
                (0..d)
                    .map(|_| {
                        let x: f64 = rng.gen_range(-1.0..1.0);
                        if x.abs() < 0.2 {
                            0.2 * if x >= 0.0 { 1.0 } else { -1.0 }
                        } else {
                            x
                        }
                    })
                    .collect()
            })
            .collect();
        let k = rng.gen_range(1..=3);
        let measures: Vec<ProbVector> = (0..k).map(|_| random_prob(rng, children)).collect();
        let m = NodeMarket::new(deltas, AmbiguitySet::extreme_points(measures).unwrap()).unwrap();
        if let NaVerdict::NoArbitrage = na_check(&m).unwrap() {
            return m;
        }
    }
}

#[test]
fn oracles_sandwich_the_solver() {
    let mut rng = ChaCha8Rng::seed_from_u64(601);
    let cfg = SolverConfig::default();
    for i in 0..60 {
        let m = random_na_market(&mut rng);
        let n = m.children();
        let x: Vec<f64> = (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let sol = solve_pair(&m, &x, &cfg).unwrap();

        // Two-asset grids are quadratic in size; coarsen them.
        let step = if m.dim() == 1 { 1e-3 } else { 1e-2 };
        let radius = if m.dim() == 1 { 12.0 } else { 8.0 };
        let grid = GridSpec::symmetric(m.dim(), radius, step);
        let upper = brute_primal(&m, &x, &grid).unwrap();
        // Lipschitz slack: one grid cell per dimension times the largest
        // increment norm.
        let lip: f64 = m
            .deltas
            .iter()
            .map(|d| d.iter().map(|v| v * v).sum::<f64>().sqrt())
            .fold(0.0, f64::max);
        let slack = lip * step * (m.dim() as f64).sqrt();

        let lower = brute_dual(&m, &x, 24, false).unwrap();
        assert!(
            lower <= sol.dual_value + 1e-8,
            "instance {i}: dual sweep {lower} above solver dual {}",
            sol.dual_value
        );
        assert!(
            sol.dual_value <= sol.value + 1e-8,
            "instance {i}: weak duality violated"
        );
        assert!(
            sol.value <= upper + slack + 1e-9,
            "instance {i}: solver {} above grid {} + {slack}",
            sol.value,
            upper
        );
        // And the sweep is genuinely informative: within coarse range.
        assert!(lower.is_finite());
    }
}

#[test]
fn dual_sweep_touches_the_optimum_with_unique_measure() {
    // Two children force a zero-dimensional martingale polytope, making the
    // sweep exact.
    let mut rng = ChaCha8Rng::seed_from_u64(602);
    let cfg = SolverConfig::default();
    for _ in 0..20 {
        let up: f64 = rng.gen_range(0.3..1.5);
        let down: f64 = -rng.gen_range(0.3..1.5);
        let p = random_prob(&mut rng, 2);
        let m = NodeMarket::new(
            vec![vec![up], vec![down]],
            AmbiguitySet::singleton(p),
        )
        .unwrap();
        let x: Vec<f64> = (0..2).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let sol = solve_pair(&m, &x, &cfg).unwrap();
        let sweep = brute_dual(&m, &x, 4, false).unwrap();
        assert!(
            (sweep - sol.dual_value).abs() <= 1e-9,
            "sweep {sweep} vs dual {}",
            sol.dual_value
        );
    }
}
