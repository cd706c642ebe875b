//! Shared random-instance generators for the integration suites. All
//! randomness is seeded so failures reproduce exactly.
#![allow(dead_code)] // each test target uses a different subset

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use treehedge_core::arbitrage::{na_check, NaVerdict, NodeMarket};
use treehedge_core::entropy::KernelField;
use treehedge_core::market::{
    AmbiguitySet, ClaimVector, Market, OptionSet, ProbVector, ScenarioTree,
};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_prob(rng: &mut ChaCha8Rng, n: usize) -> ProbVector {
    // Exponential weights keep every child charged with mass >= 1%.
    let raw: Vec<f64> = (0..n)
        .map(|_| -(rng.gen_range(1e-6..1.0f64)).ln() + 0.01 * n as f64)
        .collect();
    ProbVector::new(raw).unwrap()
}

pub fn random_claim(rng: &mut ChaCha8Rng, n: usize, range: f64) -> ClaimVector {
    ClaimVector::new((0..n).map(|_| rng.gen_range(-range..range)).collect()).unwrap()
}

fn random_deltas(rng: &mut ChaCha8Rng, children: usize, d: usize, floor: f64) -> Vec<Vec<f64>> {
    (0..children)
        .map(|_| {
            (0..d)
                .map(|_| {
                    let x: f64 = rng.gen_range(-1.0..1.0);
                    // Keep increments away from zero for well-scaled spans.
                    if x.abs() < floor {
                        if x >= 0.0 {
                            floor
                        } else {
                            -floor
                        }
                    } else {
                        x
                    }
                })
                .collect()
        })
        .collect()
}

fn random_extreme_set(rng: &mut ChaCha8Rng, children: usize, k_max: usize) -> AmbiguitySet {
    let k = rng.gen_range(1..=k_max.max(1));
    AmbiguitySet::extreme_points((0..k).map(|_| random_prob(rng, children)).collect()).unwrap()
}

/// One-period market passing the no-arbitrage check, found by rejection.
/// Child counts exceed the asset count; with `n <= d` children two generic
/// increments never hedge each other and arbitrage is almost sure.
pub fn random_node_market(
    rng: &mut ChaCha8Rng,
    d_max: usize,
    children_max: usize,
    extreme_max: usize,
) -> NodeMarket {
    for _ in 0..2000 {
        let d = rng.gen_range(1..=d_max);
        let lo = (d + 1).max(2);
        let children = rng.gen_range(lo..=children_max.max(lo));
        let deltas = random_deltas(rng, children, d, 0.05);
        let amb = random_extreme_set(rng, children, extreme_max);
        let m = NodeMarket::new(deltas, amb).unwrap();
        if let NaVerdict::NoArbitrage = na_check(&m).unwrap() {
            return m;
        }
    }
    panic!("rejection sampling failed to find an arbitrage-free node market");
}

pub struct MarketOpts {
    pub horizon_max: usize,
    pub dim_max: usize,
    pub branch_max: usize,
    pub extreme_max: usize,
    pub claim_range: f64,
    /// Smallest stock increment magnitude; larger floors keep optimal
    /// strategies inside small boxes.
    pub delta_floor: f64,
}

impl Default for MarketOpts {
    fn default() -> Self {
        Self {
            horizon_max: 3,
            dim_max: 2,
            branch_max: 4,
            extreme_max: 3,
            claim_range: 5.0,
            delta_floor: 0.05,
        }
    }
}

/// Random scenario-tree market whose every node passes the no-arbitrage
/// check (per-node rejection sampling).
pub fn random_market(rng: &mut ChaCha8Rng, opts: &MarketOpts) -> Market {
    let horizon = rng.gen_range(1..=opts.horizon_max);
    let d = rng.gen_range(1..=opts.dim_max);
    let mut parents: Vec<Option<usize>> = vec![None];
    let mut stocks: Vec<Vec<f64>> = vec![vec![0.0; d]];
    let mut ambiguity_data: Vec<Option<AmbiguitySet>> = vec![None];
    let mut frontier = vec![0usize];
    for _ in 0..horizon {
        let mut next = Vec::new();
        for &node in &frontier {
            let lo = (d + 1).max(2);
            let children = rng.gen_range(lo..=opts.branch_max.max(lo));
            let (deltas, amb) = loop {
                let deltas = random_deltas(rng, children, d, opts.delta_floor);
                let amb = random_extreme_set(rng, children, opts.extreme_max);
                let m = NodeMarket::new(deltas.clone(), amb.clone()).unwrap();
                if let NaVerdict::NoArbitrage = na_check(&m).unwrap() {
                    break (deltas, amb);
                }
            };
            ambiguity_data[node] = Some(amb);
            for delta in deltas {
                parents.push(Some(node));
                stocks.push(
                    stocks[node]
                        .iter()
                        .zip(&delta)
                        .map(|(s, dx)| s + dx)
                        .collect(),
                );
                ambiguity_data.push(None);
                next.push(parents.len() - 1);
            }
        }
        frontier = next;
    }
    let tree = ScenarioTree::from_parents(horizon, d, parents, stocks).unwrap();
    let claim = random_claim(rng, tree.leaves().len(), opts.claim_range);
    Market::new(tree, ambiguity_data, claim, OptionSet::empty()).unwrap()
}

/// Strictly positive kernels on every interior node.
pub fn random_kernels(rng: &mut ChaCha8Rng, tree: &ScenarioTree) -> KernelField {
    let mut kernels: KernelField = vec![None; tree.len()];
    for id in tree.interior() {
        let n = tree.node(id).children.len();
        kernels[id] = Some(random_prob(rng, n));
    }
    kernels
}

/// Terminal gain of a random dynamic strategy: a claim replicable at price
/// zero, usable as a redundant option.
pub fn replicable_option(rng: &mut ChaCha8Rng, market: &Market) -> ClaimVector {
    let tree = &market.tree;
    let d = tree.dim();
    let h: Vec<Vec<f64>> = (0..tree.len())
        .map(|_| (0..d).map(|_| rng.gen_range(-1.0..1.0f64)).collect())
        .collect();
    let payoff: Vec<f64> = tree
        .leaves()
        .iter()
        .map(|&leaf| {
            let mut gain = 0.0;
            let mut node = leaf;
            while let Some(parent) = tree.node(node).parent {
                let delta = tree.delta(node);
                gain += h[parent].iter().zip(&delta).map(|(a, b)| a * b).sum::<f64>();
                node = parent;
            }
            gain
        })
        .collect();
    ClaimVector::new(payoff).unwrap()
}
