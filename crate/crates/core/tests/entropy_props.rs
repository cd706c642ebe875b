//! Randomized invariants of the entropy module: nonnegativity, joint
//! convexity, the chain rule against path-space divergences, and optimality
//! of the Gibbs tilt.

mod common;

use common::{random_kernels, random_market, random_prob, rng, MarketOpts};
use rand::Rng;
use treehedge_core::entropy::{
    entropy_chain, gibbs_tilt, relative_entropy, robust_entropy, variational_ascent,
    variational_check,
};
use treehedge_core::market::{AmbiguitySet, ProbVector};

#[test]
fn relative_entropy_nonnegative_and_identifies() {
    let mut r = rng(101);
    for _ in 0..1000 {
        let n = r.gen_range(2..=5);
        let q = random_prob(&mut r, n);
        let p = random_prob(&mut r, n);
        let h = relative_entropy(&q, &p).unwrap();
        assert!(h >= 0.0);
        assert_eq!(relative_entropy(&q, &q).unwrap(), 0.0);
    }
}

#[test]
fn relative_entropy_is_jointly_convex() {
    let mut r = rng(102);
    for _ in 0..1000 {
        let n = r.gen_range(2..=4);
        let (q1, p1) = (random_prob(&mut r, n), random_prob(&mut r, n));
        let (q2, p2) = (random_prob(&mut r, n), random_prob(&mut r, n));
        let t: f64 = r.gen_range(0.0..1.0);
        let mix = |a: &ProbVector, b: &ProbVector| {
            ProbVector::new(
                a.as_slice()
                    .iter()
                    .zip(b.as_slice())
                    .map(|(x, y)| t * x + (1.0 - t) * y)
                    .collect(),
            )
            .unwrap()
        };
        let lhs = relative_entropy(&mix(&q1, &q2), &mix(&p1, &p2)).unwrap();
        let rhs = t * relative_entropy(&q1, &p1).unwrap()
            + (1.0 - t) * relative_entropy(&q2, &p2).unwrap();
        assert!(lhs <= rhs + 1e-10, "convexity violated: {lhs} > {rhs}");
    }
}

#[test]
fn chain_rule_matches_path_space_kl_on_random_trees() {
    let mut r = rng(103);
    let opts = MarketOpts {
        horizon_max: 3,
        dim_max: 1,
        branch_max: 4,
        extreme_max: 1,
        claim_range: 1.0,
        ..MarketOpts::default()
    };
    for _ in 0..200 {
        let m = random_market(&mut r, &opts);
        let q = random_kernels(&mut r, &m.tree);
        let p = random_kernels(&mut r, &m.tree);
        let dec = entropy_chain(&m.tree, &q, &p).unwrap();
        // Path-space divergence over all leaves.
        let leaf_mass = |kernels: &treehedge_core::entropy::KernelField, leaf: usize| -> f64 {
            let mut mass = 1.0;
            let mut node = leaf;
            while let Some(parent) = m.tree.node(node).parent {
                let pos = m
                    .tree
                    .node(parent)
                    .children
                    .iter()
                    .position(|&c| c == node)
                    .unwrap();
                mass *= kernels[parent].as_ref().unwrap()[pos];
                node = parent;
            }
            mass
        };
        let mut kl = 0.0;
        for &leaf in m.tree.leaves() {
            let qm = leaf_mass(&q, leaf);
            let pm = leaf_mass(&p, leaf);
            if qm > 0.0 {
                kl += qm * (qm / pm).ln();
            }
        }
        assert!(
            (dec.total - kl).abs() <= 1e-12 * kl.abs().max(1.0),
            "chain {} vs paths {kl}",
            dec.total
        );
    }
}

#[test]
fn gibbs_tilt_maximizes_the_variational_objective() {
    let mut r = rng(104);
    for _ in 0..200 {
        let n = r.gen_range(2..=5);
        let p = random_prob(&mut r, n);
        let z: Vec<f64> = (0..n).map(|_| r.gen_range(-3.0..3.0)).collect();
        let chk = variational_check(&p, &z).unwrap();
        assert!((chk.lhs - chk.rhs).abs() <= 1e-10 * chk.lhs.abs().max(1.0));
        let ascent = variational_ascent(&p, &z, 4000).unwrap();
        let ascent_val =
            ascent.expect(&z) - relative_entropy(&ascent, &p).unwrap();
        assert!(chk.rhs >= ascent_val - 1e-8);
    }
}

#[test]
fn variational_value_dominates_random_challengers() {
    let mut r = rng(105);
    for _ in 0..100 {
        let n = r.gen_range(2..=5);
        let p = random_prob(&mut r, n);
        let z: Vec<f64> = (0..n).map(|_| r.gen_range(-4.0..4.0)).collect();
        let chk = variational_check(&p, &z).unwrap();
        for _ in 0..100 {
            let q = random_prob(&mut r, n);
            let val = q.expect(&z) - relative_entropy(&q, &p).unwrap();
            assert!(val <= chk.rhs + 1e-10);
        }
    }
}

#[test]
fn robust_entropy_lower_bounds_every_member() {
    let mut r = rng(106);
    for _ in 0..300 {
        let n = r.gen_range(2..=4);
        let k = r.gen_range(1..=4);
        let measures: Vec<ProbVector> = (0..k).map(|_| random_prob(&mut r, n)).collect();
        let amb = AmbiguitySet::extreme_points(measures.clone()).unwrap();
        let q = random_prob(&mut r, n);
        let re = robust_entropy(&q, &amb).unwrap();
        for m in &measures {
            assert!(re.value <= relative_entropy(&q, m).unwrap() + 1e-9);
        }
        // Certified optimality: the achieved mixture is inside the hull.
        if let treehedge_core::entropy::EntropyArgmin::Mixture(l) = &re.argmin {
            let mixed = ProbVector::new(
                (0..n)
                    .map(|i| l.iter().zip(&measures).map(|(w, m)| w * m[i]).sum())
                    .collect(),
            )
            .unwrap();
            assert!((relative_entropy(&q, &mixed).unwrap() - re.value).abs() <= 1e-8);
        }
    }
}

#[test]
fn gibbs_tilt_and_log_mean_survive_large_scales() {
    let mut r = rng(107);
    for _ in 0..50 {
        let n = r.gen_range(2..=4);
        let p = random_prob(&mut r, n);
        let z: Vec<f64> = (0..n).map(|_| r.gen_range(-1e5..1e5)).collect();
        let q = gibbs_tilt(&p, &z).unwrap();
        assert!(q.as_slice().iter().all(|w| w.is_finite()));
        let s: f64 = q.as_slice().iter().sum();
        assert!((s - 1.0).abs() <= 1e-12);
    }
}

#[test]
fn robust_entropy_certifies_on_stressed_instances() {
    let mut r = rng(108);
    for it in 0..3000 {
        let n = r.gen_range(2..=6);
        let k = r.gen_range(1..=8);
        let sparse = it % 3 == 0;
        let measures: Vec<ProbVector> = (0..k)
            .map(|_| {
                let mut w: Vec<f64> = (0..n).map(|_| r.gen_range(0.0..1.0f64)).collect();
                if sparse {
                    for wi in &mut w {
                        if r.gen_bool(0.4) {
                            *wi = 0.0;
                        }
                    }
                }
                if w.iter().all(|&x| x == 0.0) {
                    w[r.gen_range(0..n)] = 1.0;
                }
                ProbVector::new(w).unwrap()
            })
            .collect();
        let amb = AmbiguitySet::extreme_points(measures.clone()).unwrap();
        let q = random_prob(&mut r, n);
        let re = robust_entropy(&q, &amb).unwrap();
        if re.value.is_finite() {
            assert!(re.value >= 0.0);
            for m in &measures {
                assert!(re.value <= relative_entropy(&q, m).unwrap() + 1e-9);
            }
        } else {
            let missed =
                (0..n).any(|i| q[i] > 0.0 && measures.iter().all(|m| m[i] <= 0.0));
            assert!(missed, "spurious infinite entropy");
        }
    }
}
