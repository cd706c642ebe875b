//! Dense two-phase simplex used as the fallback arbiter when the primary LP
//! backend reports failure. Bland's rule throughout: immune to cycling and
//! fast enough for the small programs this crate builds.

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum RowOp {
    Le,
    Ge,
    Eq,
}

#[derive(Debug, Clone)]
pub(crate) struct DenseLp {
    /// Objective coefficients per facade variable (maximization).
    pub objective: Vec<f64>,
    /// Bounds per facade variable.
    pub bounds: Vec<(f64, f64)>,
    /// Rows as (terms, op, rhs) over facade variables.
    pub rows: Vec<(Vec<(usize, f64)>, RowOp, f64)>,
}

const EPS: f64 = 1e-11;

impl DenseLp {
    /// Maximizes the objective; returns variable values and the optimum.
    pub fn solve(&self) -> Result<(Vec<f64>, f64)> {
        // Standard form: min c.x, A x = b, x >= 0. Facade variables are
        // shifted by their lower bound or split when free below; finite
        // upper bounds become extra rows.
        let nv = self.objective.len();
        let mut col_of: Vec<(usize, Option<usize>)> = Vec::with_capacity(nv); // (plus, minus)
        let mut shift: Vec<f64> = Vec::with_capacity(nv);
        let mut ncols = 0usize;
        for &(lo, _) in &self.bounds {
            if lo.is_finite() {
                col_of.push((ncols, None));
                shift.push(lo);
                ncols += 1;
            } else {
                col_of.push((ncols, Some(ncols + 1)));
                shift.push(0.0);
                ncols += 2;
            }
        }
        struct Row {
            coeffs: Vec<f64>,
            rhs: f64,
            op: RowOp,
        }
        let mut rows: Vec<Row> = Vec::new();
        for (terms, op, rhs) in &self.rows {
            let mut coeffs = vec![0.0; ncols];
            let mut rhs = *rhs;
            for &(j, c) in terms {
                let (plus, minus) = col_of[j];
                coeffs[plus] += c;
                if let Some(m) = minus {
                    coeffs[m] -= c;
                }
                rhs -= c * shift[j];
            }
            rows.push(Row {
                coeffs,
                rhs,
                op: *op,
            });
        }
        for (j, &(_, hi)) in self.bounds.iter().enumerate() {
            if hi.is_finite() {
                let mut coeffs = vec![0.0; ncols];
                let (plus, minus) = col_of[j];
                coeffs[plus] = 1.0;
                if let Some(m) = minus {
                    coeffs[m] = -1.0;
                }
                rows.push(Row {
                    coeffs,
                    rhs: hi - shift[j],
                    op: RowOp::Le,
                });
            }
        }
        let m = rows.len();
        // Add slacks, flip rows to nonnegative right-hand sides, then add
        // artificials where no natural basis column exists.
        let mut a: Vec<Vec<f64>> = Vec::with_capacity(m);
        let mut b: Vec<f64> = Vec::with_capacity(m);
        let mut slack_cols = 0usize;
        for row in &rows {
            match row.op {
                RowOp::Le | RowOp::Ge => slack_cols += 1,
                RowOp::Eq => {}
            }
        }
        let total = ncols + slack_cols + m; // worst case: artificial per row
        let mut next_slack = ncols;
        let mut next_artificial = ncols + slack_cols;
        let mut basis: Vec<usize> = vec![usize::MAX; m];
        let mut artificials: Vec<usize> = Vec::new();
        for row in &rows {
            let mut line = vec![0.0; total];
            line[..ncols].copy_from_slice(&row.coeffs);
            let mut rhs = row.rhs;
            let mut slack_sign = 0.0;
            match row.op {
                RowOp::Le => {
                    line[next_slack] = 1.0;
                    slack_sign = 1.0;
                }
                RowOp::Ge => {
                    line[next_slack] = -1.0;
                    slack_sign = -1.0;
                }
                RowOp::Eq => {}
            }
            let slack_col = if slack_sign != 0.0 {
                let c = next_slack;
                next_slack += 1;
                Some((c, slack_sign))
            } else {
                None
            };
            if rhs < 0.0 {
                for v in line.iter_mut() {
                    *v = -*v;
                }
                rhs = -rhs;
            }
            let r = a.len();
            // A positive slack column can serve as the basis directly.
            if let Some((c, _)) = slack_col {
                if line[c] > 0.5 {
                    basis[r] = c;
                }
            }
            if basis[r] == usize::MAX {
                line[next_artificial] = 1.0;
                basis[r] = next_artificial;
                artificials.push(next_artificial);
                next_artificial += 1;
            }
            a.push(line);
            b.push(rhs);
        }
        let used = next_artificial;
        for line in &mut a {
            line.truncate(used);
        }
        let is_artificial = |c: usize| c >= ncols + slack_cols;

        // Phase one: drive the artificials to zero.
        if !artificials.is_empty() {
            let mut cost = vec![0.0; used];
            for &c in &artificials {
                cost[c] = 1.0;
            }
            let value = simplex_min(&mut a, &mut b, &mut basis, &cost)?;
            let scale = b.iter().fold(1.0f64, |acc, &x| acc.max(x.abs()));
            if value > 1e-8 * scale {
                return Err(Error::Infeasible("linear program infeasible".into()));
            }
            // Pivot lingering artificials out of the basis where possible.
            for r in 0..m {
                if is_artificial(basis[r]) {
                    if let Some(c) = (0..ncols + slack_cols)
                        .find(|&c| a[r][c].abs() > 1e-9 && !is_artificial(c))
                    {
                        pivot(&mut a, &mut b, r, c);
                        basis[r] = c;
                    }
                }
            }
        }

        // Phase two: the real objective (negated for minimization).
        // Artificial columns keep zero cost and are barred from entering.
        let mut cost = vec![0.0; used];
        for (j, &(plus, minus)) in col_of.iter().enumerate() {
            cost[plus] = -self.objective[j];
            if let Some(mcol) = minus {
                cost[mcol] = self.objective[j];
            }
        }
        simplex_min_restricted(&mut a, &mut b, &mut basis, &cost, ncols + slack_cols)?;

        let mut x_std = vec![0.0; used];
        for (r, &col) in basis.iter().enumerate() {
            if col != usize::MAX {
                x_std[col] = b[r];
            }
        }
        let mut x = vec![0.0; nv];
        let mut value = 0.0;
        for (j, &(plus, minus)) in col_of.iter().enumerate() {
            let mut v = x_std[plus] + shift[j];
            if let Some(mcol) = minus {
                v -= x_std[mcol];
            }
            x[j] = v;
            value += self.objective[j] * v;
        }
        Ok((x, value))
    }
}

/// Bland-rule simplex minimizing `cost . x` on the tableau in place.
/// Returns the attained objective value.
fn simplex_min(
    a: &mut [Vec<f64>],
    b: &mut [f64],
    basis: &mut [usize],
    cost: &[f64],
) -> Result<f64> {
    let n = if a.is_empty() { 0 } else { a[0].len() };
    simplex_min_restricted(a, b, basis, cost, n)
}

/// As [`simplex_min`] but only the first `enterable` columns may enter the
/// basis (artificials are excluded in phase two).
fn simplex_min_restricted(
    a: &mut [Vec<f64>],
    b: &mut [f64],
    basis: &mut [usize],
    cost: &[f64],
    enterable: usize,
) -> Result<f64> {
    let m = a.len();
    let n = enterable;
    // Reduced costs require the basis cost to be eliminated.
    let mut iterations = 0usize;
    loop {
        iterations += 1;
        if iterations > 50_000 {
            return Err(Error::LpFailure("dense simplex iteration cap".into()));
        }
        // y = c_B B^{-1} via the current tableau: reduced cost of column j is
        // cost[j] - sum_r cost[basis[r]] * a[r][j].
        let mut entering = None;
        for j in 0..n {
            let mut red = cost[j];
            for r in 0..m {
                let cb = cost[basis[r]];
                if cb != 0.0 && a[r][j] != 0.0 {
                    red -= cb * a[r][j];
                }
            }
            if red < -EPS {
                entering = Some(j);
                break; // Bland: smallest index
            }
        }
        let Some(j) = entering else {
            let mut value = 0.0;
            for r in 0..m {
                value += cost[basis[r]] * b[r];
            }
            return Ok(value);
        };
        // Ratio test, Bland tie-break on the leaving basis index.
        let mut leave: Option<(usize, f64)> = None;
        for r in 0..m {
            if a[r][j] > EPS {
                let ratio = b[r] / a[r][j];
                match leave {
                    None => leave = Some((r, ratio)),
                    Some((lr, lratio)) => {
                        if ratio < lratio - EPS
                            || (ratio < lratio + EPS && basis[r] < basis[lr])
                        {
                            leave = Some((r, ratio));
                        }
                    }
                }
            }
        }
        let Some((r, _)) = leave else {
            return Err(Error::LpFailure("dense simplex unbounded".into()));
        };
        pivot(a, b, r, j);
        basis[r] = j;
    }
}

fn pivot(a: &mut [Vec<f64>], b: &mut [f64], r: usize, c: usize) {
    let m = a.len();
    let p = a[r][c];
    for v in a[r].iter_mut() {
        *v /= p;
    }
    b[r] /= p;
    for rr in 0..m {
        if rr != r {
            let factor = a[rr][c];
            if factor != 0.0 {
                for j in 0..a[rr].len() {
                    a[rr][j] -= factor * a[r][j];
                }
                b[rr] -= factor * b[r];
                a[rr][c] = 0.0;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn solves_a_textbook_program() {
        // max 2x + 3y st x + y <= 4, x + 3y <= 6 -> (3, 1), 9.
        let lp = DenseLp {
            objective: vec![2.0, 3.0],
            bounds: vec![(0.0, f64::INFINITY), (0.0, f64::INFINITY)],
            rows: vec![
                (vec![(0, 1.0), (1, 1.0)], RowOp::Le, 4.0),
                (vec![(0, 1.0), (1, 3.0)], RowOp::Le, 6.0),
            ],
        };
        let (x, v) = lp.solve().unwrap();
        assert!((v - 9.0).abs() < 1e-9);
        assert!((x[0] - 3.0).abs() < 1e-9 && (x[1] - 1.0).abs() < 1e-9);
    }

    #[test]
    fn handles_free_variables_and_equalities() {
        // min x st x = -5 with x free; facade maximizes, so flip the sign.
        let lp = DenseLp {
            objective: vec![-1.0],
            bounds: vec![(f64::NEG_INFINITY, f64::INFINITY)],
            rows: vec![(vec![(0, 1.0)], RowOp::Eq, -5.0)],
        };
        let (x, _) = lp.solve().unwrap();
        assert!((x[0] + 5.0).abs() < 1e-9);
    }

    #[test]
    fn detects_infeasibility() {
        let lp = DenseLp {
            objective: vec![1.0],
            bounds: vec![(0.0, 1.0)],
            rows: vec![(vec![(0, 1.0)], RowOp::Ge, 2.0)],
        };
        assert!(matches!(lp.solve(), Err(Error::Infeasible(_))));
    }

    #[test]
    fn solves_the_backend_regression_case() {
        // Arbitrage search that the primary backend mislabels infeasible.
        let deltas = [
            [0.559878583417992, 0.15686926427358916],
            [-0.45270665614444683, -0.3502105779941531],
            [0.7030165885459234, 0.5440873652112437],
        ];
        let mut rows = Vec::new();
        let mut objective = vec![0.0, 0.0];
        let mut bounds = vec![(-1.0, 1.0), (-1.0, 1.0)];
        for d in &deltas {
            rows.push((vec![(0, d[0]), (1, d[1])], RowOp::Ge, 0.0));
            let s = bounds.len();
            bounds.push((0.0, 1.0));
            objective.push(1.0);
            rows.push((vec![(s, 1.0), (0, -d[0]), (1, -d[1])], RowOp::Le, 0.0));
        }
        let lp = DenseLp {
            objective,
            bounds,
            rows,
        };
        let (_, v) = lp.solve().unwrap();
        // The three increments straddle zero in both assets: no arbitrage.
        assert!(v.abs() < 1e-9, "objective {v}");
    }

    #[test]
    fn respects_upper_bounds() {
        let lp = DenseLp {
            objective: vec![1.0, 1.0],
            bounds: vec![(0.0, 0.25), (0.0, 0.5)],
            rows: vec![(vec![(0, 1.0), (1, 1.0)], RowOp::Le, 10.0)],
        };
        let (x, v) = lp.solve().unwrap();
        assert!((v - 0.75).abs() < 1e-9);
        assert!((x[0] - 0.25).abs() < 1e-9 && (x[1] - 0.5).abs() < 1e-9);
    }
}
