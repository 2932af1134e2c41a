//! Exact balanced OT: Hungarian assignment for uniform square problems, a
//! transportation LP otherwise.

use minilp::{ComparisonOp, OptimizationDirection, Problem};

use super::{DiscreteMeasure, TransportPlan};
use crate::error::{check_dim, Error, Result};
use crate::math::Mat;

pub const MAX_EXACT_POINTS: usize = 256;

/// Min-cost assignment of every row to a distinct column (`rows <= cols`).
/// Returns `assignment[row] = col`.
///
/// Shortest augmenting path with row/column potentials, O(n²m).
pub fn hungarian(cost: &Mat) -> Result<Vec<usize>> {
    let (n, m) = (cost.rows(), cost.cols());
    if n > m {
        return Err(Error::invalid(format!("hungarian needs rows <= cols, got {n}x{m}")));
    }
    if !cost.data().iter().all(|c| c.is_finite()) {
        return Err(Error::NonFinite("cost matrix".into()));
    }
    // 1-based with a virtual column 0, as in the classical formulation
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; m + 1];
    let mut p = vec![0usize; m + 1];
    let mut way = vec![0usize; m + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; m + 1];
        let mut used = vec![false; m + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=m {
                if used[j] {
                    continue;
                }
                let cur = cost.get(i0 - 1, j - 1) - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=m {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut assignment = vec![0; n];
    for j in 1..=m {
        if p[j] != 0 {
            assignment[p[j] - 1] = j - 1;
        }
    }
    Ok(assignment)
}

fn is_uniform(w: &[f64]) -> bool {
    let w0 = w[0];
    w.iter().all(|&x| (x - w0).abs() <= 1e-12 * w0.abs().max(1.0))
}

/// Exact minimizer of `⟨C, π⟩` over plans with marginals `src.weights`, `tgt.weights`.
pub fn solve_ot_exact(
    src: &DiscreteMeasure,
    tgt: &DiscreteMeasure,
    cost: &Mat,
) -> Result<TransportPlan> {
    let (n, m) = (src.len(), tgt.len());
    check_dim("cost matrix rows", n, cost.rows())?;
    check_dim("cost matrix cols", m, cost.cols())?;
    if n == 0 || m == 0 {
        return Err(Error::invalid("empty measure"));
    }
    if n > MAX_EXACT_POINTS || m > MAX_EXACT_POINTS {
        return Err(Error::invalid(format!(
            "exact OT limited to {MAX_EXACT_POINTS} points per side, got {n}x{m}"
        )));
    }
    let (ms, mt) = (src.mass(), tgt.mass());
    if (ms - mt).abs() > 1e-9 * ms.max(mt) {
        return Err(Error::invalid(format!(
            "unbalanced masses {ms} vs {mt}; use the entropic UOT solver"
        )));
    }

    if n == m && is_uniform(&src.weights) && is_uniform(&tgt.weights) {
        let assignment = hungarian(cost)?;
        let w = src.weights[0];
        let mut plan = Mat::zeros(n, m);
        for (i, &j) in assignment.iter().enumerate() {
            plan.set(i, j, w);
        }
        return TransportPlan::from_matrix(plan);
    }

    let mut lp = Problem::new(OptimizationDirection::Minimize);
    let vars: Vec<_> = (0..n * m)
        .map(|k| lp.add_var(cost.data()[k], (0.0, f64::INFINITY)))
        .collect();
    for i in 0..n {
        let row: Vec<_> = (0..m).map(|j| (vars[i * m + j], 1.0)).collect();
        lp.add_constraint(row.as_slice(), ComparisonOp::Eq, src.weights[i]);
    }
    // the last column constraint is implied by the others and the mass balance
    for j in 0..m - 1 {
        let col: Vec<_> = (0..n).map(|i| (vars[i * m + j], 1.0)).collect();
        lp.add_constraint(col.as_slice(), ComparisonOp::Eq, tgt.weights[j]);
    }
    let sol = lp
        .solve()
        .map_err(|e| Error::invalid(format!("transportation LP failed: {e}")))?;
    let data = vars.iter().map(|&v| sol.var_value(v).max(0.0)).collect();
    TransportPlan::from_matrix(Mat::from_vec(n, m, data)?)
}
