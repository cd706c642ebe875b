//! Linear programming over the polytope of martingale measures on the leaf
//! space of a scenario tree, shared by the semi-static and superhedging
//! solvers.
//!
//! A measure on quasi-surely reachable leaves is a martingale law exactly
//! when, for every interior node and asset, the mass-weighted stock
//! increments into its children sum to zero over the leaves below. Those are
//! linear constraints, so calibration to options and price maximization are
//! plain LPs and the vertex set is finite.

use crate::entropy::KernelField;
use crate::error::{Error, Result};
use crate::lp::{Cmp, Lp, Sense};
use crate::market::{AmbiguitySet, ClaimVector, NodeId, ProbVector, ScenarioTree};

/// Martingale polytope over the quasi-surely reachable leaves.
pub(crate) struct LeafPolytope {
    /// Ids of reachable leaves, increasing.
    pub leaves: Vec<NodeId>,
    /// Position of each reachable leaf within the tree's full leaf list.
    pub positions: Vec<usize>,
    /// Equality rows `row . mu = 0` expressing the martingale property.
    pub rows: Vec<Vec<f64>>,
}

pub(crate) fn leaf_polytope(
    tree: &ScenarioTree,
    ambiguity: &[Option<AmbiguitySet>],
) -> Result<LeafPolytope> {
    // A leaf is reachable when every edge on its path lies in the parent
    // node's quasi-sure support.
    let mut reachable = vec![false; tree.len()];
    reachable[tree.root()] = true;
    for id in tree.interior() {
        if !reachable[id] {
            continue;
        }
        let amb = ambiguity[id].as_ref().ok_or_else(|| {
            Error::DimensionMismatch(format!("node {id} is missing an ambiguity set"))
        })?;
        let support = amb.support()?;
        for &pos in &support {
            reachable[tree.node(id).children[pos]] = true;
        }
    }
    let leaves: Vec<NodeId> = tree
        .leaves()
        .iter()
        .copied()
        .filter(|&l| reachable[l])
        .collect();
    if leaves.is_empty() {
        return Err(Error::Infeasible(
            "no quasi-surely reachable leaf".into(),
        ));
    }
    let positions: Vec<usize> = leaves
        .iter()
        .map(|&l| tree.leaf_position(l).expect("leaf id"))
        .collect();

    // Martingale rows: for each interior node and asset, the increment into
    // the child on each leaf's path, weighted by the leaf mass.
    let mut rows = Vec::new();
    for id in tree.interior() {
        if !reachable[id] {
            continue;
        }
        let deltas = tree.deltas(id);
        for k in 0..tree.dim() {
            let mut row = vec![0.0; leaves.len()];
            let mut nonzero = false;
            for (child_pos, &child) in tree.node(id).children.iter().enumerate() {
                let below = tree.leaves_below(child);
                for l in below {
                    if let Ok(j) = leaves.binary_search(&l) {
                        row[j] = deltas[child_pos][k];
                        if row[j] != 0.0 {
                            nonzero = true;
                        }
                    }
                }
            }
            if nonzero {
                rows.push(row);
            }
        }
    }
    Ok(LeafPolytope {
        leaves,
        positions,
        rows,
    })
}

impl LeafPolytope {
    /// Restriction of a claim to the reachable leaves.
    pub fn restrict(&self, claim: &ClaimVector) -> Vec<f64> {
        self.positions.iter().map(|&p| claim.values()[p]).collect()
    }

    /// Optimizes a linear functional of the leaf mass subject to the
    /// martingale rows and extra equality rows `row . mu = rhs`.
    pub fn optimize(
        &self,
        sense: Sense,
        objective: &[f64],
        extra: &[(Vec<f64>, f64)],
    ) -> Result<(Vec<f64>, f64)> {
        let n = self.leaves.len();
        let mut lp = Lp::new(sense);
        let mu: Vec<usize> = (0..n).map(|i| lp.var(objective[i], 0.0, 1.0)).collect();
        lp.constraint(
            &mu.iter().map(|&v| (v, 1.0)).collect::<Vec<_>>(),
            Cmp::Eq,
            1.0,
        );
        for row in &self.rows {
            let terms: Vec<(usize, f64)> = mu.iter().zip(row).map(|(&v, &c)| (v, c)).collect();
            lp.constraint(&terms, Cmp::Eq, 0.0);
        }
        for (row, rhs) in extra {
            let terms: Vec<(usize, f64)> = mu.iter().zip(row).map(|(&v, &c)| (v, c)).collect();
            lp.constraint(&terms, Cmp::Eq, *rhs);
        }
        let sol = lp.solve()?;
        Ok((mu.iter().map(|&v| sol.x[v].max(0.0)).collect(), sol.value))
    }

    /// All vertices of the polytope cut by the extra equality rows,
    /// enumerated through basic feasible solutions. `budget` caps the number
    /// of basis candidates.
    pub fn vertices(&self, extra: &[(Vec<f64>, f64)], budget: u64) -> Result<Vec<Vec<f64>>> {
        let n = self.leaves.len();
        let mut a_rows: Vec<(Vec<f64>, f64)> = Vec::new();
        a_rows.push((vec![1.0; n], 1.0));
        for row in &self.rows {
            a_rows.push((row.clone(), 0.0));
        }
        for (row, rhs) in extra {
            a_rows.push((row.clone(), *rhs));
        }
        let m = a_rows.len();
        let a = nalgebra::DMatrix::from_fn(m, n, |r, c| a_rows[r].0[c]);
        let b = nalgebra::DVector::from_fn(m, |r, _| a_rows[r].1);
        let rank = a.rank(1e-10);

        let combos = binomial(n as u64, rank as u64);
        if combos > budget {
            return Err(Error::BudgetExceeded(format!(
                "vertex enumeration needs {combos} basis candidates (budget {budget})"
            )));
        }
        let mut seen: std::collections::BTreeSet<Vec<i64>> = std::collections::BTreeSet::new();
        let mut out = Vec::new();
        let mut basis: Vec<usize> = (0..rank).collect();
        loop {
            let ab = a.select_columns(basis.iter());
            let sol = ab.clone().svd(true, true).solve(&b, 1e-12);
            if let Ok(xb) = sol {
                let residual = (&ab * &xb - &b).norm();
                if residual < 1e-8 && xb.iter().all(|&x| x >= -1e-9) {
                    let mut mu = vec![0.0; n];
                    for (pos, &col) in basis.iter().enumerate() {
                        mu[col] = xb[pos].max(0.0);
                    }
                    let s: f64 = mu.iter().sum();
                    if s > 0.0 {
                        for v in &mut mu {
                            *v /= s;
                        }
                        let key: Vec<i64> = mu.iter().map(|x| (x * 1e9).round() as i64).collect();
                        if seen.insert(key) {
                            out.push(mu);
                        }
                    }
                }
            }
            if !next_combination(&mut basis, n, rank) {
                break;
            }
        }
        Ok(out)
    }

    /// Expands leaf mass over the reachable leaves to a full leaf-law vector.
    pub fn full_leaf_law(&self, tree: &ScenarioTree, mu: &[f64]) -> Vec<f64> {
        let mut law = vec![0.0; tree.leaves().len()];
        for (j, &p) in self.positions.iter().enumerate() {
            law[p] = mu[j];
        }
        law
    }
}

fn binomial(n: u64, k: u64) -> u64 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut r: u128 = 1;
    for i in 0..k {
        r = r * (n - i) as u128 / (i + 1) as u128;
        if r > u64::MAX as u128 {
            return u64::MAX;
        }
    }
    r as u64
}

fn next_combination(basis: &mut [usize], n: usize, k: usize) -> bool {
    if k == 0 {
        return false;
    }
    let mut i = k;
    loop {
        if i == 0 {
            return false;
        }
        i -= 1;
        if basis[i] < n - (k - i) {
            basis[i] += 1;
            for j in i + 1..k {
                basis[j] = basis[j - 1] + 1;
            }
            return true;
        }
    }
}

/// Conditional kernels of a leaf law; returns the kernel field and the list
/// of interior nodes with zero mass (their kernels default to uniform over
/// the node's quasi-sure support).
pub(crate) fn kernels_from_leaf_law(
    tree: &ScenarioTree,
    ambiguity: &[Option<AmbiguitySet>],
    leaf_law: &[f64],
) -> Result<(KernelField, Vec<NodeId>)> {
    let mut mass = vec![0.0; tree.len()];
    for (&leaf, &w) in tree.leaves().iter().zip(leaf_law) {
        mass[leaf] = w;
    }
    for id in (0..tree.len()).rev() {
        if !tree.node(id).is_leaf() {
            mass[id] = tree.node(id).children.iter().map(|&c| mass[c]).sum();
        }
    }
    let mut kernels: KernelField = vec![None; tree.len()];
    let mut unvisited = Vec::new();
    for id in tree.interior() {
        let children = &tree.node(id).children;
        if mass[id] > 0.0 {
            let w: Vec<f64> = children.iter().map(|&c| mass[c] / mass[id]).collect();
            kernels[id] = Some(ProbVector::new(w)?);
        } else {
            unvisited.push(id);
            let amb = ambiguity[id].as_ref().ok_or_else(|| {
                Error::DimensionMismatch(format!("node {id} is missing an ambiguity set"))
            })?;
            let support = amb.support()?;
            let mut w = vec![0.0; children.len()];
            for &pos in &support {
                w[pos] = 1.0 / support.len() as f64;
            }
            kernels[id] = Some(ProbVector::new(w)?);
        }
    }
    Ok((kernels, unvisited))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::market::fixtures;

    #[test]
    fn b1_polytope_is_the_single_fair_coin() {
        let m = fixtures::b1();
        let poly = leaf_polytope(&m.tree, &m.ambiguity).unwrap();
        let verts = poly.vertices(&[], 1_000_000).unwrap();
        assert_eq!(verts.len(), 1);
        assert!((verts[0][0] - 0.5).abs() < 1e-9);
    }

    #[test]
    fn three_child_node_has_a_two_vertex_family() {
        // Moves (-1, 0, +2): martingale q1 = 2 q3, q2 free; vertices at
        // q2 = 1 and q2 = 0 (q = (2/3, 0, 1/3)).
        let tree = crate::market::ScenarioTree::from_parents(
            1,
            1,
            vec![None, Some(0), Some(0), Some(0)],
            vec![vec![0.0], vec![-1.0], vec![0.0], vec![2.0]],
        )
        .unwrap();
        let amb = AmbiguitySet::singleton(ProbVector::new(vec![0.3, 0.3, 0.4]).unwrap());
        let ambiguity = vec![Some(amb), None, None, None];
        let poly = leaf_polytope(&tree, &ambiguity).unwrap();
        let verts = poly.vertices(&[], 1_000_000).unwrap();
        assert_eq!(verts.len(), 2, "{verts:?}");
        for v in &verts {
            let m: f64 = -v[0] + 2.0 * v[2];
            assert!(m.abs() < 1e-9);
        }
    }

    #[test]
    fn arb1_polytope_collapses_to_the_flat_atom() {
        let m = fixtures::arb1();
        let poly = leaf_polytope(&m.tree, &m.ambiguity).unwrap();
        let verts = poly.vertices(&[], 1_000_000).unwrap();
        assert_eq!(verts.len(), 1);
        assert!((verts[0][0] - 1.0).abs() < 1e-9);
        assert!(verts[0][1].abs() < 1e-12 && verts[0][2].abs() < 1e-12);
    }

    #[test]
    fn kernels_recover_t2_leaf_law() {
        let m = fixtures::t2();
        let poly = leaf_polytope(&m.tree, &m.ambiguity).unwrap();
        let (mu, v) = poly
            .optimize(Sense::Max, &poly.restrict(&m.claim), &[])
            .unwrap();
        assert!(v.abs() < 1e-12);
        let law = poly.full_leaf_law(&m.tree, &mu);
        let (kernels, unvisited) = kernels_from_leaf_law(&m.tree, &m.ambiguity, &law).unwrap();
        let measure =
            crate::dynprog::MartingaleMeasure::from_kernels(&m.tree, kernels).unwrap();
        for (&l, &w) in m.tree.leaves().iter().zip(&law) {
            let pos = m.tree.leaf_position(l).unwrap();
            assert!((measure.leaf_law[pos] - w).abs() < 1e-12);
        }
        assert!(unvisited.len() <= m.tree.interior().count());
    }
}
