//! Randomized invariants of the arbitrage module: the equivalence between
//! the no-arbitrage verdict and the relative-interior condition, null-child
//! invariance, and span invariances.

mod common;

use common::{random_node_market, random_prob, rng};
use rand::Rng;
use treehedge_core::arbitrage::{
    effective_span, na_check, quasi_sure_support, ri_check, NaVerdict, NodeMarket,
};
use treehedge_core::market::{AmbiguitySet, ProbVector};

fn random_any_node_market(r: &mut rand_chacha::ChaCha8Rng) -> NodeMarket {
    // Not rejection-sampled: arbitrage cases are the point here.
    let d = r.gen_range(1..=2);
    let children = r.gen_range(2..=4);
    let deltas: Vec<Vec<f64>> = (0..children)
        .map(|_| (0..d).map(|_| r.gen_range(-1.0..1.0f64)).collect())
        .collect();
    let k = r.gen_range(1..=3);
    let measures: Vec<ProbVector> = (0..k).map(|_| random_prob(r, children)).collect();
    NodeMarket::new(deltas, AmbiguitySet::extreme_points(measures).unwrap()).unwrap()
}

#[test]
fn na_verdict_matches_relative_interior_condition() {
    let mut r = rng(201);
    let mut arbitrage_seen = 0;
    for _ in 0..500 {
        let m = random_any_node_market(&mut r);
        let na = !na_check(&m).unwrap().is_arbitrage();
        let ri = ri_check(&m, &m.deltas.clone()).unwrap();
        assert_eq!(na, ri, "mismatch on {:?}", m.deltas);
        if !na {
            arbitrage_seen += 1;
        }
    }
    assert!(arbitrage_seen > 10, "sampler never produced arbitrage");
}

#[test]
fn null_child_never_changes_the_verdict() {
    let mut r = rng(202);
    for _ in 0..200 {
        let m = random_any_node_market(&mut r);
        let base = na_check(&m).unwrap().is_arbitrage();
        // Add a child with zero mass under every measure.
        let mut deltas = m.deltas.clone();
        deltas.push((0..m.dim()).map(|_| r.gen_range(-5.0..5.0f64)).collect());
        let measures = match &m.ambiguity {
            AmbiguitySet::ExtremePoints { measures } => measures
                .iter()
                .map(|p| {
                    let mut w = p.as_slice().to_vec();
                    w.push(0.0);
                    ProbVector::new(w).unwrap()
                })
                .collect(),
            _ => unreachable!(),
        };
        let padded =
            NodeMarket::new(deltas, AmbiguitySet::extreme_points(measures).unwrap()).unwrap();
        assert_eq!(base, na_check(&padded).unwrap().is_arbitrage());
    }
}

#[test]
fn effective_span_ignores_child_order_and_positive_scaling() {
    let mut r = rng(203);
    for _ in 0..200 {
        let m = random_node_market(&mut r, 2, 4, 3);
        let span = effective_span(&m).unwrap();
        // Reverse the children.
        let reversed = NodeMarket::new(
            m.deltas.iter().rev().cloned().collect(),
            match &m.ambiguity {
                AmbiguitySet::ExtremePoints { measures } => AmbiguitySet::extreme_points(
                    measures
                        .iter()
                        .map(|p| {
                            ProbVector::new(p.as_slice().iter().rev().copied().collect()).unwrap()
                        })
                        .collect(),
                )
                .unwrap(),
                _ => unreachable!(),
            },
        )
        .unwrap();
        let span_rev = effective_span(&reversed).unwrap();
        assert_eq!(span.rank(), span_rev.rank());
        // Scale all increments by a positive constant.
        let c: f64 = r.gen_range(0.1..10.0);
        let scaled = NodeMarket::new(
            m.deltas
                .iter()
                .map(|row| row.iter().map(|x| c * x).collect())
                .collect(),
            m.ambiguity.clone(),
        )
        .unwrap();
        let span_scaled = effective_span(&scaled).unwrap();
        assert_eq!(span.rank(), span_scaled.rank());
        // Same subspace: each scaled basis vector has zero orthogonal part.
        for b in &span_scaled.basis {
            assert!(span.orthogonal_norm(b) < 1e-9);
        }
    }
}

#[test]
fn support_matches_union_of_measure_supports() {
    let mut r = rng(204);
    for _ in 0..200 {
        let m = random_any_node_market(&mut r);
        let support = quasi_sure_support(&m).unwrap();
        match &m.ambiguity {
            AmbiguitySet::ExtremePoints { measures } => {
                for i in 0..m.children() {
                    let charged = measures.iter().any(|p| p[i] > 1e-12);
                    assert_eq!(charged, support.contains(&i));
                }
            }
            _ => unreachable!(),
        }
    }
}

#[test]
fn arbitrage_witness_gains_are_valid() {
    let mut r = rng(205);
    let mut checked = 0;
    for _ in 0..500 {
        let m = random_any_node_market(&mut r);
        if let NaVerdict::Arbitrage { witness } = na_check(&m).unwrap() {
            let support = quasi_sure_support(&m).unwrap();
            let gains: Vec<f64> = support
                .iter()
                .map(|&i| {
                    witness
                        .iter()
                        .zip(&m.deltas[i])
                        .map(|(h, dx)| h * dx)
                        .sum()
                })
                .collect();
            assert!(gains.iter().all(|&g| g >= -1e-8), "gains {gains:?}");
            assert!(gains.iter().any(|&g| g > 1e-9), "gains {gains:?}");
            checked += 1;
        }
    }
    assert!(checked > 10);
}
