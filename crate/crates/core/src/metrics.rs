//! Evaluation metrics for learned maps.

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::math::{dist_sq, dot, Mat, Rng};
use crate::neural::Mlp;
use crate::operators::CorruptionOp;

/// Reported when the reconstruction is exact.
pub const PSNR_MAX_DB: f64 = 120.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricRecord {
    pub name: String,
    pub step: usize,
    pub value: f64,
}

impl MetricRecord {
    pub fn new(name: impl Into<String>, step: usize, value: f64) -> Result<Self> {
        let name = name.into();
        if !value.is_finite() {
            return Err(Error::NonFinite(format!("metric {name} at step {step}")));
        }
        Ok(MetricRecord { name, step, value })
    }
}

pub fn psnr(x_hat: &[f64], x_ref: &[f64], data_range: f64) -> Result<f64> {
    check_dim("psnr", x_ref.len(), x_hat.len())?;
    if x_ref.is_empty() {
        return Err(Error::invalid("psnr of empty signals"));
    }
    if !(data_range > 0.0) {
        return Err(Error::invalid(format!("data_range must be positive, got {data_range}")));
    }
    let mse = dist_sq(x_hat, x_ref) / x_ref.len() as f64;
    if mse == 0.0 {
        return Ok(PSNR_MAX_DB);
    }
    Ok((10.0 * (data_range * data_range / mse).log10()).min(PSNR_MAX_DB))
}

/// Mean PSNR over paired rows.
pub fn mean_psnr(x_hat: &Mat, x_ref: &Mat, data_range: f64) -> Result<f64> {
    check_dim("psnr rows", x_ref.rows(), x_hat.rows())?;
    if x_ref.rows() == 0 {
        return Err(Error::invalid("no signals"));
    }
    let mut total = 0.0;
    for (a, b) in x_hat.row_iter().zip(x_ref.row_iter()) {
        total += psnr(a, b, data_range)?;
    }
    Ok(total / x_ref.rows() as f64)
}

/// Squared 1D W₂ between two empirical measures with uniform weights, given
/// sorted supports. Unequal sizes are coupled through their quantile functions.
fn w2_sq_sorted(a: &[f64], b: &[f64]) -> f64 {
    let (n, m) = (a.len(), b.len());
    if n == m {
        return a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / n as f64;
    }
    let (mut i, mut j) = (0, 0);
    let mut level = 0.0;
    let mut total = 0.0;
    while i < n && j < m {
        let next_a = (i + 1) as f64 / n as f64;
        let next_b = (j + 1) as f64 / m as f64;
        let next = next_a.min(next_b);
        total += (next - level) * (a[i] - b[j]).powi(2);
        level = next;
        if next_a <= next {
            i += 1;
        }
        if next_b <= next {
            j += 1;
        }
    }
    total
}

/// Random orthonormal basis of R^d (Gram-Schmidt on Gaussian vectors). Each
/// vector is uniform on the sphere; whole frames make the estimator exact for
/// translations.
fn random_frame(d: usize, rng: &mut Rng) -> Vec<Vec<f64>> {
    let mut frame: Vec<Vec<f64>> = Vec::with_capacity(d);
    while frame.len() < d {
        let mut v = vec![0.0; d];
        rng.fill_normal(&mut v);
        for u in &frame {
            let c = dot(&v, u);
            v.iter_mut().zip(u).for_each(|(vi, ui)| *vi -= c * ui);
        }
        let nrm = dot(&v, &v).sqrt();
        if nrm > 1e-8 {
            v.iter_mut().for_each(|x| *x /= nrm);
            frame.push(v);
        }
    }
    frame
}

/// Sliced Wasserstein distance `sqrt(d · mean_θ W₂²(θ·a, θ·b))` over `n_proj`
/// random unit directions drawn in orthonormal frames. The factor `d` makes a
/// pure translation by `t` report `‖t‖`, like the full W₂.
pub fn sliced_wasserstein(a: &Mat, b: &Mat, n_proj: usize, rng: &mut Rng) -> Result<f64> {
    check_dim("sliced wasserstein dims", a.cols(), b.cols())?;
    if a.rows() == 0 || b.rows() == 0 {
        return Err(Error::invalid("sliced wasserstein of an empty set"));
    }
    if n_proj == 0 {
        return Err(Error::invalid("n_proj must be >= 1"));
    }
    let d = a.cols();
    let project = |m: &Mat, theta: &[f64]| -> Vec<f64> {
        let mut p: Vec<f64> = m.row_iter().map(|r| dot(r, theta)).collect();
        p.sort_by(f64::total_cmp);
        p
    };
    let mut total = 0.0;
    let mut frame: Vec<Vec<f64>> = Vec::new();
    for _ in 0..n_proj {
        if frame.is_empty() {
            frame = random_frame(d, rng);
        }
        let theta = frame.pop().expect("nonempty frame");
        total += w2_sq_sorted(&project(a, &theta), &project(b, &theta));
    }
    Ok((d as f64 * total / n_proj as f64).sqrt())
}

/// Mean `‖A(T(y)) − y‖²` over the rows of `ys`.
pub fn data_fidelity(op: &CorruptionOp, map: &Mlp, ys: &Mat) -> Result<f64> {
    if ys.rows() == 0 {
        return Err(Error::invalid("no measurements"));
    }
    let xs = map.forward_batch(ys)?;
    residual_mean(op, &xs, ys)
}

/// Mean `‖A(x_i) − y_i‖²` for paired rows.
pub fn residual_mean(op: &CorruptionOp, xs: &Mat, ys: &Mat) -> Result<f64> {
    check_dim("residual rows", ys.rows(), xs.rows())?;
    let mut total = 0.0;
    for (x, y) in xs.row_iter().zip(ys.row_iter()) {
        total += dist_sq(&op.apply(x)?, y);
    }
    Ok(total / ys.rows() as f64)
}

/// Mean `‖x_i − y_i‖²` for paired rows of equal width.
pub fn mean_displacement(xs: &Mat, ys: &Mat) -> Result<f64> {
    check_dim("displacement rows", ys.rows(), xs.rows())?;
    check_dim("displacement cols", ys.cols(), xs.cols())?;
    let total: f64 = xs.row_iter().zip(ys.row_iter()).map(|(x, y)| dist_sq(x, y)).sum();
    Ok(total / ys.rows() as f64)
}
