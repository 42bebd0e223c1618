//! Dense simplex for `maximize cᵀx  s.t.  A x ≤ b, x ≥ 0` with `b ≥ 0`.
//!
//! Uses a condensed (Tucker) tableau: rows are basic variables, columns
//! nonbasic ones, so a pivot costs O(m·n) regardless of how many slacks are
//! in play. The slack basis is feasible because `b ≥ 0`.

use crate::error::{Error, Result};

const PIVOT_TOL: f64 = 1e-11;
/// Reduced-cost tolerance for optimality.
pub const OPTIMALITY_TOL: f64 = 1e-7;
/// Consecutive degenerate pivots tolerated before switching to Bland's rule.
const DEGENERATE_STREAK: usize = 50;

#[derive(Debug, Clone, PartialEq)]
pub struct LpSolution {
    pub x: Vec<f64>,
    pub value: f64,
    /// Shadow prices of the `A x ≤ b` rows.
    pub duals: Vec<f64>,
    pub pivots: usize,
}

/// Solve the LP. `a` is row-major, `m × n`.
pub fn maximize(a: &[f64], b: &[f64], c: &[f64], max_pivots: usize) -> Result<LpSolution> {
    let m = b.len();
    let n = c.len();
    if a.len() != m * n {
        return Err(Error::domain("constraint matrix has the wrong shape"));
    }
    if b.iter().any(|&v| !(v >= 0.0 && v.is_finite())) {
        return Err(Error::domain("right-hand side must be finite and >= 0"));
    }
    let w = n + 1;
    // Row i < m: basic variable row, last column holds its value.
    // Row m: objective; entries are negated reduced costs, last column the
    // objective value.
    let mut t = vec![0.0; (m + 1) * w];
    for i in 0..m {
        t[i * w..i * w + n].copy_from_slice(&a[i * n..(i + 1) * n]);
        t[i * w + n] = b[i];
    }
    for j in 0..n {
        t[m * w + j] = -c[j];
    }
    // Variable labels: 0..n structural, n..n+m slacks.
    let mut row_var: Vec<usize> = (n..n + m).collect();
    let mut col_var: Vec<usize> = (0..n).collect();

    let mut pivots = 0;
    let mut degenerate = 0;
    loop {
        let obj = &t[m * w..m * w + n];
        let entering = if degenerate < DEGENERATE_STREAK {
            let (j, v) = obj
                .iter()
                .enumerate()
                .fold((usize::MAX, -OPTIMALITY_TOL), |acc, (j, &v)| if v < acc.1 { (j, v) } else { acc });
            (v < -OPTIMALITY_TOL).then_some(j)
        } else {
            (0..n)
                .filter(|&j| obj[j] < -OPTIMALITY_TOL)
                .min_by_key(|&j| col_var[j])
        };
        let Some(q) = entering else { break };

        let mut leave: Option<(usize, f64)> = None;
        for i in 0..m {
            let aiq = t[i * w + q];
            if aiq > PIVOT_TOL {
                let ratio = t[i * w + n] / aiq;
                leave = match leave {
                    Some((r, best))
                        if ratio > best + 1e-12
                            || (ratio >= best - 1e-12 && row_var[i] > row_var[r]) =>
                    {
                        Some((r, best))
                    }
                    _ => Some((i, ratio)),
                };
            }
        }
        let Some((p, ratio)) = leave else {
            return Err(Error::Numeric("linear program is unbounded".into()));
        };
        if pivots >= max_pivots {
            return Err(Error::Numeric(format!("simplex exceeded {max_pivots} pivots")));
        }
        degenerate = if ratio <= 1e-12 { degenerate + 1 } else { 0 };
        pivot(&mut t, w, m, p, q);
        std::mem::swap(&mut row_var[p], &mut col_var[q]);
        pivots += 1;
    }

    let mut x = vec![0.0; n];
    for i in 0..m {
        if row_var[i] < n {
            x[row_var[i]] = t[i * w + n].max(0.0);
        }
    }
    let mut duals = vec![0.0; m];
    for j in 0..n {
        if col_var[j] >= n {
            duals[col_var[j] - n] = t[m * w + j].max(0.0);
        }
    }
    let value = c.iter().zip(&x).map(|(ci, xi)| ci * xi).sum();
    Ok(LpSolution { x, value, duals, pivots })
}

/// Exchange basic row `p` with nonbasic column `q`.
fn pivot(t: &mut [f64], w: usize, m: usize, p: usize, q: usize) {
    let piv = t[p * w + q];
    let inv = 1.0 / piv;
    let prow: Vec<f64> = t[p * w..(p + 1) * w].iter().map(|v| v * inv).collect();
    for i in 0..=m {
        if i == p {
            continue;
        }
        let f = t[i * w + q];
        if f == 0.0 {
            continue;
        }
        let row = &mut t[i * w..(i + 1) * w];
        for (rj, pj) in row.iter_mut().zip(&prow) {
            *rj -= f * pj;
        }
        row[q] = -f * inv;
    }
    t[p * w..(p + 1) * w].copy_from_slice(&prow);
    t[p * w + q] = inv;
}
