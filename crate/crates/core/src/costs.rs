//! Transport costs `c(y, x) = τ·(c_l + λ·c_q)`, their gradients, and the
//! marginal-penalty conjugates that select the OT or UOT objective.

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::math::{dist_sq, to_pixel_scale, Mat, PIXEL_MAX};
use crate::operators::{CorruptionOp, Interp};

/// Conjugate arguments above this are treated as divergence rather than evaluated.
pub const CONJ_OVERFLOW_T: f64 = 30.0;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LikelihoodKind {
    /// `‖A(x) − y‖²`
    #[default]
    GaussianL2,
    /// `‖A(x) − y‖₁`
    LaplaceL1,
    /// `‖A(x) − y‖²_Λ` on the 8-bit scale with `Λ_ii = 1 / (2 y_i)`.
    PoissonScaledQuad,
}

/// Convex conjugate `Ψ*` of the marginal penalty.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DivergenceConj {
    /// KL penalty: `Ψ*(t) = eᵗ − 1` (unbalanced).
    #[default]
    Kl,
    /// Hard marginal constraint: `Ψ*(t) = t` (balanced OT).
    Identity,
}

impl DivergenceConj {
    pub fn value(self, t: f64) -> Result<f64> {
        if !t.is_finite() {
            return Err(Error::NonFinite(format!("conjugate argument {t}")));
        }
        match self {
            DivergenceConj::Kl => {
                if t > CONJ_OVERFLOW_T {
                    return Err(Error::ConjOverflow { t });
                }
                Ok(t.exp_m1())
            }
            DivergenceConj::Identity => Ok(t),
        }
    }

    pub fn deriv(self, t: f64) -> Result<f64> {
        if !t.is_finite() {
            return Err(Error::NonFinite(format!("conjugate argument {t}")));
        }
        match self {
            DivergenceConj::Kl => {
                if t > CONJ_OVERFLOW_T {
                    return Err(Error::ConjOverflow { t });
                }
                Ok(t.exp())
            }
            DivergenceConj::Identity => Ok(1.0),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CostSpec {
    pub tau: f64,
    pub use_likelihood: bool,
    pub use_quadratic: bool,
    pub likelihood: LikelihoodKind,
    /// Weight λ on the quadratic term, applied before τ.
    pub quad_weight: f64,
    pub op: CorruptionOp,
    pub interp: Option<Interp>,
}

impl CostSpec {
    pub fn new(
        tau: f64,
        use_likelihood: bool,
        use_quadratic: bool,
        likelihood: LikelihoodKind,
        quad_weight: f64,
        op: CorruptionOp,
        interp: Option<Interp>,
    ) -> Result<Self> {
        let spec = CostSpec {
            tau,
            use_likelihood,
            use_quadratic,
            likelihood,
            quad_weight,
            op,
            interp,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Gaussian likelihood plus unit-weight quadratic term.
    pub fn full(tau: f64, op: CorruptionOp) -> Result<Self> {
        CostSpec::new(tau, true, true, LikelihoodKind::GaussianL2, 1.0, op, None)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0) || !self.tau.is_finite() {
            return Err(Error::invalid(format!("tau must be positive, got {}", self.tau)));
        }
        if !(self.quad_weight >= 0.0) {
            return Err(Error::invalid("quadratic weight must be >= 0"));
        }
        if !self.use_likelihood && !self.use_quadratic {
            return Err(Error::invalid("cost needs at least one of likelihood/quadratic"));
        }
        let mismatched = self.op.in_dim() != self.op.out_dim();
        let needs_interp = mismatched && self.use_quadratic;
        match (&self.interp, needs_interp) {
            (None, true) => Err(Error::invalid(
                "quadratic term across different dims needs an interpolation",
            )),
            (Some(_), false) => Err(Error::invalid(
                "interpolation only applies to a quadratic term across different dims",
            )),
            (Some(q), true) if self.op.out_dim() * q.factor != self.op.in_dim() => {
                Err(Error::invalid(format!(
                    "interp factor {} does not map {} to {}",
                    q.factor,
                    self.op.out_dim(),
                    self.op.in_dim()
                )))
            }
            _ => Ok(()),
        }
    }

    pub fn y_dim(&self) -> usize {
        self.op.out_dim()
    }

    pub fn x_dim(&self) -> usize {
        self.op.in_dim()
    }

    fn check(&self, y: &[f64], x: &[f64]) -> Result<()> {
        check_dim("cost y", self.y_dim(), y.len())?;
        check_dim("cost x", self.x_dim(), x.len())
    }

    /// `y` lifted into signal space for the quadratic term.
    fn anchor(&self, y: &[f64]) -> Vec<f64> {
        match &self.interp {
            Some(q) => q.up(y),
            None => y.to_vec(),
        }
    }

    fn poisson_weights(y: &[f64]) -> Result<Vec<f64>> {
        y.iter()
            .map(|&v| {
                let p = to_pixel_scale(v);
                if p > 0.0 {
                    Ok(1.0 / (2.0 * p))
                } else {
                    Err(Error::invalid(format!(
                        "poisson likelihood weight undefined for measurement {v} (pixel value {p})"
                    )))
                }
            })
            .collect()
    }

    /// Likelihood term and its derivative with respect to `A(x)`.
    fn likelihood_parts(&self, y: &[f64], ax: &[f64]) -> Result<(f64, Vec<f64>)> {
        let r: Vec<f64> = ax.iter().zip(y).map(|(a, b)| a - b).collect();
        Ok(match self.likelihood {
            LikelihoodKind::GaussianL2 => {
                (r.iter().map(|v| v * v).sum(), r.iter().map(|v| 2.0 * v).collect())
            }
            LikelihoodKind::LaplaceL1 => (
                r.iter().map(|v| v.abs()).sum(),
                r.iter()
                    .map(|&v| if v == 0.0 { 0.0 } else { v.signum() })
                    .collect(),
            ),
            LikelihoodKind::PoissonScaledQuad => {
                // residual measured in 8-bit counts: r_px = r · 255/2
                let s = PIXEL_MAX / 2.0;
                let w = Self::poisson_weights(y)?;
                let value = r.iter().zip(&w).map(|(v, wi)| wi * (s * v).powi(2)).sum();
                let grad = r.iter().zip(&w).map(|(v, wi)| 2.0 * wi * s * s * v).collect();
                (value, grad)
            }
        })
    }

    pub fn cost(&self, y: &[f64], x: &[f64]) -> Result<f64> {
        self.check(y, x)?;
        let mut total = 0.0;
        if self.use_likelihood {
            total += self.likelihood_parts(y, &self.op.apply(x)?)?.0;
        }
        if self.use_quadratic {
            total += self.quad_weight * dist_sq(x, &self.anchor(y));
        }
        Ok(self.tau * total)
    }

    pub fn cost_grad_x(&self, y: &[f64], x: &[f64]) -> Result<Vec<f64>> {
        Ok(self.cost_and_grad_x(y, x)?.1)
    }

    pub fn cost_and_grad_x(&self, y: &[f64], x: &[f64]) -> Result<(f64, Vec<f64>)> {
        self.check(y, x)?;
        let mut total = 0.0;
        let mut grad = vec![0.0; x.len()];
        if self.use_likelihood {
            let ax = self.op.apply(x)?;
            let (value, d_ax) = self.likelihood_parts(y, &ax)?;
            total += value;
            grad = self.op.jacobian_transpose_apply(x, &d_ax)?;
        }
        if self.use_quadratic {
            let anchor = self.anchor(y);
            total += self.quad_weight * dist_sq(x, &anchor);
            for ((g, xi), ai) in grad.iter_mut().zip(x).zip(&anchor) {
                *g += 2.0 * self.quad_weight * (xi - ai);
            }
        }
        grad.iter_mut().for_each(|g| *g *= self.tau);
        Ok((self.tau * total, grad))
    }

    /// `∂c/∂y = τ·(2(y − A(x)) + 2λ(y − x))`, defined for the Gaussian likelihood
    /// with equal measurement and signal dims.
    pub fn cost_grad_y(&self, y: &[f64], x: &[f64]) -> Result<Vec<f64>> {
        self.check(y, x)?;
        if self.use_likelihood && self.likelihood != LikelihoodKind::GaussianL2 {
            return Err(Error::invalid(
                "y-gradient is only defined for the Gaussian likelihood",
            ));
        }
        if self.op.in_dim() != self.op.out_dim() {
            return Err(Error::invalid("y-gradient needs equal measurement and signal dims"));
        }
        let mut g = vec![0.0; y.len()];
        if self.use_likelihood {
            for ((gi, yi), ai) in g.iter_mut().zip(y).zip(self.op.apply(x)?) {
                *gi += 2.0 * (yi - ai);
            }
        }
        if self.use_quadratic {
            for ((gi, yi), xi) in g.iter_mut().zip(y).zip(x) {
                *gi += 2.0 * self.quad_weight * (yi - xi);
            }
        }
        g.iter_mut().for_each(|v| *v *= self.tau);
        Ok(g)
    }

    /// Pairwise cost matrix `C_ij = c(ys_i, xs_j)`.
    pub fn cost_matrix(&self, ys: &[Vec<f64>], xs: &[Vec<f64>]) -> Result<Mat> {
        let mut data = Vec::with_capacity(ys.len() * xs.len());
        for y in ys {
            for x in xs {
                data.push(self.cost(y, x)?);
            }
        }
        Mat::from_vec(ys.len(), xs.len(), data)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::Rng;
    use crate::operators::{InterpMode, OpSpec};

    fn identity2() -> CorruptionOp {
        CorruptionOp::Identity { dim: 2 }
    }

    fn rel(a: f64, b: f64) -> f64 {
        (a - b).abs() / a.abs().max(b.abs()).max(1e-12)
    }

    #[test]
    fn cost_examples() {
        let both = CostSpec::full(1.0, identity2()).unwrap();
        assert_eq!(both.cost(&[0.0, 0.0], &[1.0, 1.0]).unwrap(), 4.0);

        let lik = CostSpec::new(1.0, true, false, LikelihoodKind::GaussianL2, 1.0, CorruptionOp::Projection, None)
            .unwrap();
        // A(0.5, 1.5) = (2, 0)
        assert_eq!(lik.cost(&[2.0, 0.0], &[0.5, 1.5]).unwrap(), 0.0);

        let a = CostSpec::full(0.001, identity2()).unwrap();
        let b = CostSpec::full(0.004, identity2()).unwrap();
        let (y, x) = ([0.3, -0.2], [1.0, 0.7]);
        assert!(rel(4.0 * a.cost(&y, &x).unwrap(), b.cost(&y, &x).unwrap()) < 1e-15);
    }

    #[test]
    fn identity_op_likelihood_equals_quadratic() {
        let mut rng = Rng::new(3);
        let both = CostSpec::full(1.0, identity2()).unwrap();
        let quad = CostSpec::new(1.0, false, true, LikelihoodKind::GaussianL2, 1.0, identity2(), None).unwrap();
        for _ in 0..20 {
            let y = [rng.normal(), rng.normal()];
            let x = [rng.normal(), rng.normal()];
            assert!(rel(both.cost(&y, &x).unwrap(), 2.0 * quad.cost(&y, &x).unwrap()) < 1e-14);
        }
    }

    #[test]
    fn grad_x_examples() {
        let both = CostSpec::full(1.0, identity2()).unwrap();
        assert_eq!(both.cost_grad_x(&[0.4, 0.1], &[0.4, 0.1]).unwrap(), vec![0.0, 0.0]);
        let quad = CostSpec::new(1.0, false, true, LikelihoodKind::GaussianL2, 1.0, identity2(), None).unwrap();
        assert_eq!(quad.cost_grad_x(&[0.0, 0.0], &[1.0, 1.0]).unwrap(), vec![2.0, 2.0]);
    }

    #[test]
    fn grad_y_examples() {
        let proj = CostSpec::new(1.0, true, true, LikelihoodKind::GaussianL2, 2.0, CorruptionOp::Projection, None).unwrap();
        assert_eq!(proj.cost_grad_y(&[0.0, 0.0], &[1.0, 0.0]).unwrap(), vec![-6.0, 0.0]);

        let lik_only = CostSpec::new(1.0, true, false, LikelihoodKind::GaussianL2, 0.0, CorruptionOp::Projection, None).unwrap();
        let y = [0.3, -1.2];
        assert_eq!(
            lik_only.cost_grad_y(&y, &[1.0, 0.0]).unwrap(),
            lik_only.cost_grad_y(&y, &[0.0, 1.0]).unwrap()
        );

        // y = x = A(x)
        let fixed = CostSpec::full(1.0, identity2()).unwrap();
        assert_eq!(fixed.cost_grad_y(&[0.5, 0.5], &[0.5, 0.5]).unwrap(), vec![0.0, 0.0]);

        let laplace = CostSpec::new(1.0, true, true, LikelihoodKind::LaplaceL1, 1.0, identity2(), None).unwrap();
        assert!(laplace.cost_grad_y(&[0.0, 0.0], &[1.0, 0.0]).is_err());
    }

    #[test]
    fn conj_examples() {
        assert_eq!(DivergenceConj::Kl.value(0.0).unwrap(), 0.0);
        assert!((DivergenceConj::Kl.value(1.0).unwrap() - 1.718281828459045).abs() < 1e-15);
        assert_eq!(DivergenceConj::Identity.value(-3.5).unwrap(), -3.5);
        assert_eq!(DivergenceConj::Identity.deriv(7.0).unwrap(), 1.0);
        assert!(matches!(DivergenceConj::Kl.value(31.0), Err(Error::ConjOverflow { .. })));
        assert!(matches!(DivergenceConj::Kl.deriv(31.0), Err(Error::ConjOverflow { .. })));
    }

    #[test]
    fn poisson_rejects_nonpositive_counts() {
        let spec = CostSpec::new(1.0, true, false, LikelihoodKind::PoissonScaledQuad, 1.0, identity2(), None).unwrap();
        assert!(spec.cost(&[-1.0, 0.2], &[0.0, 0.0]).is_err());
        assert!(spec.cost(&[0.1, 0.2], &[0.0, 0.0]).is_ok());
    }

    #[test]
    fn validation() {
        assert!(CostSpec::new(0.0, true, true, LikelihoodKind::GaussianL2, 1.0, identity2(), None).is_err());
        assert!(CostSpec::new(1.0, false, false, LikelihoodKind::GaussianL2, 1.0, identity2(), None).is_err());
        let down = CorruptionOp::from_spec(&OpSpec::Downsample { len: 8, factor: 2 }).unwrap();
        assert!(CostSpec::full(1.0, down.clone()).is_err());
        let q = Interp::new(2, InterpMode::Cubic).unwrap();
        assert!(CostSpec::new(1.0, true, true, LikelihoodKind::GaussianL2, 1.0, down.clone(), Some(q)).is_ok());
        assert!(CostSpec::new(1.0, true, false, LikelihoodKind::GaussianL2, 1.0, down, None).is_ok());
        assert!(CostSpec::new(1.0, true, true, LikelihoodKind::GaussianL2, 1.0, identity2(), Some(q)).is_err());
    }

    fn fd_check(spec: &CostSpec, y: &[f64], x: &[f64], tol: f64) {
        let g = spec.cost_grad_x(y, x).unwrap();
        let h = 1e-6;
        let scale = g.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-8);
        for i in 0..x.len() {
            let mut p = x.to_vec();
            p[i] += h;
            let mut m = x.to_vec();
            m[i] -= h;
            let fd = (spec.cost(y, &p).unwrap() - spec.cost(y, &m).unwrap()) / (2.0 * h);
            assert!((fd - g[i]).abs() / scale < tol, "{:?} coord {i}: fd {fd} vs {}", spec.likelihood, g[i]);
        }
    }

    #[test]
    fn grad_x_matches_finite_differences() {
        let mut rng = Rng::new(21);
        let len = 16;
        let ops = vec![
            CorruptionOp::from_spec(&OpSpec::Blur1d { len, kernel_size: 5, sigma: 1.0 }).unwrap(),
            CorruptionOp::from_spec(&OpSpec::AnalyticNonlinear { len, scale: 0.5, kappa: 0.5, kernel_size: 5, sigma: 1.0 }).unwrap(),
            CorruptionOp::HdrClip { dim: len, scale: 2.0 },
        ];
        for op in ops {
            for kind in [LikelihoodKind::GaussianL2, LikelihoodKind::PoissonScaledQuad] {
                let spec = CostSpec::new(0.7, true, true, kind, 1.3, op.clone(), None).unwrap();
                let mut x: Vec<f64> = (0..len).map(|_| rng.uniform_range(-0.8, 0.8)).collect();
                // keep clear of the clip kinks |2x| = 1
                for v in &mut x {
                    if (2.0 * v.abs() - 1.0).abs() < 1e-3 {
                        *v *= 0.9;
                    }
                }
                let y: Vec<f64> = (0..len).map(|_| rng.uniform_range(-0.5, 0.5)).collect();
                fd_check(&spec, &y, &x, 1e-6);
            }
        }
        // L1: keep residuals away from zero
        let spec = CostSpec::new(1.0, true, true, LikelihoodKind::LaplaceL1, 1.0, identity2(), None).unwrap();
        fd_check(&spec, &[0.0, 0.0], &[0.4, -0.3], 1e-6);

        let down = CorruptionOp::from_spec(&OpSpec::Downsample { len: 16, factor: 4 }).unwrap();
        let q = Interp::new(4, InterpMode::Cubic).unwrap();
        let spec = CostSpec::new(1.0, true, true, LikelihoodKind::GaussianL2, 1.0, down, Some(q)).unwrap();
        let x: Vec<f64> = (0..16).map(|_| rng.normal()).collect();
        let y: Vec<f64> = (0..4).map(|_| rng.normal()).collect();
        fd_check(&spec, &y, &x, 1e-6);
    }

    #[test]
    fn kl_conjugate_is_convex() {
        let mut rng = Rng::new(5);
        for _ in 0..1000 {
            let t1 = rng.uniform_range(-10.0, 10.0);
            let t2 = rng.uniform_range(-10.0, 10.0);
            let c = DivergenceConj::Kl;
            let lower = c.value(t1).unwrap() + c.deriv(t1).unwrap() * (t2 - t1);
            assert!(c.value(t2).unwrap() >= lower - 1e-12 * lower.abs().max(1.0));
            if t2 > t1 {
                assert!(c.value(t2).unwrap() >= c.value(t1).unwrap());
            }
        }
    }

    #[test]
    fn cost_matrix_matches_pointwise() {
        let spec = CostSpec::full(0.5, identity2()).unwrap();
        let ys = vec![vec![0.0, 0.0], vec![1.0, 0.0]];
        let xs = vec![vec![0.0, 1.0], vec![2.0, 2.0], vec![1.0, 0.0]];
        let m = spec.cost_matrix(&ys, &xs).unwrap();
        assert_eq!((m.rows(), m.cols()), (2, 3));
        assert_eq!(m.get(1, 2), 0.0);
        assert_eq!(m.get(0, 1), spec.cost(&ys[0], &xs[1]).unwrap());
    }
}
