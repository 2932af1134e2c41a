//! Ground-truth solvers used to validate learned maps.

mod assignment;
mod sinkhorn;

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::math::{dist_sq, Mat};
use crate::operators::CorruptionOp;

pub use assignment::{hungarian, solve_ot_exact, MAX_EXACT_POINTS};
pub use sinkhorn::{
    kl_divergence, solve_ot_entropic, solve_uot_entropic, solve_uot_entropic_with, uot_primal,
    SinkhornOptions, SinkhornOutput, MAX_SINKHORN_POINTS,
};

/// Weighted point cloud.
#[derive(Clone, Debug, PartialEq)]
pub struct DiscreteMeasure {
    pub points: Vec<Vec<f64>>,
    pub weights: Vec<f64>,
}

impl DiscreteMeasure {
    pub fn new(points: Vec<Vec<f64>>, weights: Vec<f64>) -> Result<Self> {
        check_dim("measure weights", points.len(), weights.len())?;
        if let Some(w) = weights.iter().find(|w| !(w.is_finite() && **w >= 0.0)) {
            return Err(Error::invalid(format!("weights must be finite and nonnegative, got {w}")));
        }
        if let Some(first) = points.first() {
            let d = first.len();
            for p in &points {
                check_dim("measure point", d, p.len())?;
            }
        }
        Ok(DiscreteMeasure { points, weights })
    }

    /// Equal weights summing to one.
    pub fn uniform(points: Vec<Vec<f64>>) -> Result<Self> {
        let n = points.len();
        if n == 0 {
            return Err(Error::invalid("empty measure"));
        }
        Self::new(points, vec![1.0 / n as f64; n])
    }

    pub fn from_mat(points: &Mat) -> Result<Self> {
        Self::uniform(points.to_rows())
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn mass(&self) -> f64 {
        self.weights.iter().sum()
    }
}

/// Nonnegative coupling with its row and column sums.
#[derive(Clone, Debug, PartialEq)]
pub struct TransportPlan {
    pub matrix: Mat,
    pub marginal_src: Vec<f64>,
    pub marginal_tgt: Vec<f64>,
}

impl TransportPlan {
    pub fn from_matrix(matrix: Mat) -> Result<Self> {
        if let Some(v) = matrix.data().iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
            return Err(Error::invalid(format!("plan entries must be finite and nonnegative, got {v}")));
        }
        let marginal_src = matrix.row_iter().map(|r| r.iter().sum()).collect();
        let mut marginal_tgt = vec![0.0; matrix.cols()];
        for r in matrix.row_iter() {
            for (t, v) in marginal_tgt.iter_mut().zip(r) {
                *t += v;
            }
        }
        Ok(TransportPlan {
            matrix,
            marginal_src,
            marginal_tgt,
        })
    }

    /// `⟨C, π⟩`.
    pub fn cost(&self, cost: &Mat) -> Result<f64> {
        check_dim("cost rows", self.matrix.rows(), cost.rows())?;
        check_dim("cost cols", self.matrix.cols(), cost.cols())?;
        Ok(self.matrix.data().iter().zip(cost.data()).map(|(p, c)| p * c).sum())
    }

    pub fn mass(&self) -> f64 {
        self.marginal_src.iter().sum()
    }

    pub fn check_marginals(&self, src: &[f64], tgt: &[f64], tol: f64) -> bool {
        let close = |a: &[f64], b: &[f64]| a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol);
        close(&self.marginal_src, src) && close(&self.marginal_tgt, tgt)
    }

    /// One CSV row per source point, columns `t0..t{m-1}`.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record((0..self.matrix.cols()).map(|j| format!("t{j}")))?;
        for row in self.matrix.row_iter() {
            w.write_record(row.iter().map(|v| format!("{v:e}")))?;
        }
        w.flush()?;
        Ok(())
    }
}

/// `T(y) = a·y + b`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AffineMap {
    pub a: f64,
    pub b: Vec<f64>,
}

impl AffineMap {
    pub fn apply(&self, y: &[f64]) -> Result<Vec<f64>> {
        check_dim("affine map", self.b.len(), y.len())?;
        Ok(y.iter().zip(&self.b).map(|(yi, bi)| self.a * yi + bi).collect())
    }
}

/// Closed-form OT between isotropic Gaussians `N(m1, s1²I)` and `N(m2, s2²I)`
/// under the squared distance. Returns the map and `W₂²`.
pub fn gaussian_ot_map(m1: &[f64], m2: &[f64], s1: f64, s2: f64) -> Result<(AffineMap, f64)> {
    check_dim("gaussian means", m1.len(), m2.len())?;
    if !(s1 > 0.0 && s2 > 0.0 && s1.is_finite() && s2.is_finite()) {
        return Err(Error::invalid(format!("scales must be positive, got {s1}, {s2}")));
    }
    let a = s2 / s1;
    let b = m1.iter().zip(m2).map(|(x, y)| y - a * x).collect();
    let d = m1.len() as f64;
    let w2 = dist_sq(m1, m2) + d * (s1 - s2).powi(2);
    Ok((AffineMap { a, b }, w2))
}

#[derive(Clone, Debug, PartialEq)]
pub enum TwistVerdict {
    Injective,
    CollisionFound(Vec<f64>, Vec<f64>),
}

/// Brute-force injectivity check of `g(x) = λx + A(x)` over `grid`.
///
/// Flags the first pair (in grid order) with `‖g(x₁) − g(x₂)‖ < tol·‖x₁ − x₂‖`
/// and `‖x₁ − x₂‖ > tol`.
pub fn twist_check(op: &CorruptionOp, lambda: f64, grid: &[Vec<f64>], tol: f64) -> Result<TwistVerdict> {
    if op.in_dim() != op.out_dim() {
        return Err(Error::invalid("twist check needs equal in/out dims"));
    }
    if grid.is_empty() {
        return Err(Error::invalid("empty grid"));
    }
    let mut g = Vec::with_capacity(grid.len());
    for x in grid {
        let mut ax = op.apply(x)?;
        for (a, xi) in ax.iter_mut().zip(x) {
            *a += lambda * xi;
        }
        g.push(ax);
    }
    for i in 0..grid.len() {
        for j in i + 1..grid.len() {
            let dx = dist_sq(&grid[i], &grid[j]).sqrt();
            if dx <= tol {
                continue;
            }
            if dist_sq(&g[i], &g[j]).sqrt() < tol * dx {
                return Ok(TwistVerdict::CollisionFound(grid[i].clone(), grid[j].clone()));
            }
        }
    }
    Ok(TwistVerdict::Injective)
}

/// `k × k` grid over `[lo, hi]²`, row-major in the first coordinate.
pub fn grid_2d(lo: f64, hi: f64, k: usize) -> Vec<Vec<f64>> {
    let at = |t: usize| if k == 1 { lo } else { lo + (hi - lo) * t as f64 / (k - 1) as f64 };
    let mut out = Vec::with_capacity(k * k);
    for a in 0..k {
        for b in 0..k {
            out.push(vec![at(a), at(b)]);
        }
    }
    out
}

/// Transport-cost terms `⟨C, π⟩` of the exact OT plan and the entropic UOT
/// plan (KL strength `rho` on both marginals).
pub fn cost_inequality_check(
    src: &DiscreteMeasure,
    tgt: &DiscreteMeasure,
    cost: &Mat,
    eps: f64,
    rho: f64,
) -> Result<(f64, f64)> {
    let ot = solve_ot_exact(src, tgt, cost)?.cost(cost)?;
    let uot = solve_uot_entropic(src, tgt, cost, eps, rho, rho)?.cost(cost)?;
    Ok((ot, uot))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::operators::OpSpec;

    #[test]
    fn gaussian_examples() {
        let (t, w2) = gaussian_ot_map(&[0.0], &[2.0], 1.0, 2.0).unwrap();
        assert_eq!(t, AffineMap { a: 2.0, b: vec![2.0] });
        assert_eq!(w2, 5.0);
        let (t, w2) = gaussian_ot_map(&[1.0, -1.0], &[1.0, -1.0], 0.7, 0.7).unwrap();
        assert_eq!(t.apply(&[3.0, 4.0]).unwrap(), vec![3.0, 4.0]);
        assert_eq!(w2, 0.0);
        let (t, _) = gaussian_ot_map(&[1.0, 2.0], &[1.5, 0.0], 3.0, 3.0).unwrap();
        assert_eq!(t.apply(&[0.0, 0.0]).unwrap(), vec![0.5, -2.0]);
        assert!(gaussian_ot_map(&[0.0], &[0.0], 0.0, 1.0).is_err());
    }

    #[test]
    fn twist_examples() {
        let proj = CorruptionOp::from_spec(&OpSpec::Projection).unwrap();
        let pair = vec![vec![1.0, 0.0], vec![0.0, 1.0]];
        assert_eq!(
            twist_check(&proj, 0.0, &pair, 1e-6).unwrap(),
            TwistVerdict::CollisionFound(vec![1.0, 0.0], vec![0.0, 1.0])
        );
        let grid = grid_2d(-2.0, 2.0, 41);
        assert_eq!(grid.len(), 1681);
        assert!(grid.contains(&vec![1.0, 0.0]) && grid.contains(&vec![0.0, 1.0]));
        assert!(matches!(twist_check(&proj, 0.0, &grid, 1e-6).unwrap(), TwistVerdict::CollisionFound(..)));
        assert_eq!(twist_check(&proj, 2.0, &grid, 1e-6).unwrap(), TwistVerdict::Injective);
        let id = CorruptionOp::from_spec(&OpSpec::Identity { dim: 2 }).unwrap();
        assert_eq!(twist_check(&id, 0.0, &grid, 1e-6).unwrap(), TwistVerdict::Injective);
        let down = CorruptionOp::from_spec(&OpSpec::Downsample { len: 4, factor: 2 }).unwrap();
        assert!(twist_check(&down, 1.0, &[vec![0.0; 4]], 1e-6).is_err());
    }

    #[test]
    fn plan_csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("plan.csv");
        let plan = TransportPlan::from_matrix(Mat::from_rows(&[vec![0.25, 0.0], vec![0.125, 0.625]]).unwrap()).unwrap();
        plan.write_csv(&path).unwrap();
        let mut r = csv::Reader::from_path(&path).unwrap();
        assert_eq!(r.headers().unwrap(), vec!["t0", "t1"]);
        let rows: Vec<Vec<f64>> = r.records().map(|rec| rec.unwrap().iter().map(|s| s.parse().unwrap()).collect()).collect();
        assert_eq!(rows, plan.matrix.to_rows());
        assert_eq!(plan.marginal_src, vec![0.25, 0.75]);
        assert_eq!(plan.marginal_tgt, vec![0.375, 0.625]);
    }

    #[test]
    fn identical_supports_cost_nothing() {
        let pts: Vec<Vec<f64>> = (0..5).map(|i| vec![i as f64, 0.0]).collect();
        let m = DiscreteMeasure::uniform(pts.clone()).unwrap();
        let c = Mat::from_fn(5, 5, |i, j| dist_sq(&pts[i], &pts[j]));
        let (ot, uot) = cost_inequality_check(&m, &m, &c, 0.01, 1.0).unwrap();
        assert_eq!(ot, 0.0);
        assert!(uot < 1e-12);
    }

    fn random_instance(seed: u64) -> (DiscreteMeasure, DiscreteMeasure, Mat) {
        let mut rng = crate::math::Rng::new(seed);
        let mut pts = || -> Vec<Vec<f64>> { (0..16).map(|_| vec![rng.normal(), rng.normal()]).collect() };
        let (a, b) = (pts(), pts());
        let c = Mat::from_fn(16, 16, |i, j| dist_sq(&a[i], &b[j]));
        (DiscreteMeasure::uniform(a).unwrap(), DiscreteMeasure::uniform(b).unwrap(), c)
    }

    #[test]
    fn uot_cost_below_ot_cost_on_random_clouds() {
        for seed in 0..5 {
            let (a, b, c) = random_instance(seed);
            let (ot, uot) = cost_inequality_check(&a, &b, &c, 0.01, 1.0).unwrap();
            assert!(uot <= ot, "seed {seed}: {uot} > {ot}");
        }
    }

    #[test]
    fn huge_rho_costs_agree() {
        for seed in 0..3 {
            let (a, b, c) = random_instance(seed);
            let (ot, uot) = cost_inequality_check(&a, &b, &c, 0.01, 1e6).unwrap();
            assert!((uot - ot).abs() / ot < 0.01, "seed {seed}: {uot} vs {ot}");
        }
    }
}
