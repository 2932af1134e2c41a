//! Dense linear algebra, the seeded generator and the three noise models.
//!
//! Vectors are plain `Vec<f64>` / `&[f64]`; [`Mat`] is a row-major dense matrix.
//! Gaussian draws use Box–Muller on pairs of uniforms so the stream consumed per
//! call is fixed and golden values stay portable.

use rand_core::{RngCore, SeedableRng};
use rand_xoshiro::Xoshiro256PlusPlus;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};

/// Integer pixel scale used by the Poisson noise model: [-1, 1] maps onto [0, 255].
pub const PIXEL_MAX: f64 = 255.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Mat {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Mat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Mat {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Mat::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        check_dim("Mat::from_vec", rows * cols, data.len())?;
        if rows == 0 || cols == 0 {
            return Err(Error::invalid("matrix dimensions must be positive"));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("matrix entries".into()));
        }
        Ok(Mat { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            check_dim("Mat::from_rows", cols, r.len())?;
            data.extend_from_slice(r);
        }
        Mat::from_vec(rows.len(), cols, data)
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Mat { rows, cols, data }
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_iter(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.cols)
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        self.row_iter().map(<[f64]>::to_vec).collect()
    }

    pub fn transpose(&self) -> Mat {
        Mat::from_fn(self.cols, self.rows, |i, j| self.get(j, i))
    }

    pub fn matvec(&self, v: &[f64]) -> Result<Vec<f64>> {
        check_dim("matvec", self.cols, v.len())?;
        Ok(self.row_iter().map(|r| dot(r, v)).collect())
    }

    /// `selfᵀ · u` without materializing the transpose.
    pub fn matvec_t(&self, u: &[f64]) -> Result<Vec<f64>> {
        check_dim("matvec_t", self.rows, u.len())?;
        let mut out = vec![0.0; self.cols];
        for (r, &ui) in self.row_iter().zip(u) {
            axpy(ui, r, &mut out);
        }
        Ok(out)
    }

    pub fn matmul(&self, other: &Mat) -> Result<Mat> {
        check_dim("matmul", self.cols, other.rows)?;
        let mut out = Mat::zeros(self.rows, other.cols);
        gemm(
            self.rows,
            self.cols,
            other.cols,
            1.0,
            (&self.data, self.cols as isize, 1),
            (&other.data, other.cols as isize, 1),
            0.0,
            (&mut out.data, other.cols as isize),
        );
        Ok(out)
    }

    pub fn frobenius_sq(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }
}

/// `c ← alpha·a·b + beta·c` over strided row-major views.
///
/// `a` is m×k with strides (rs, cs), `b` is k×n, `c` is m×n with row stride `rsc`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    alpha: f64,
    a: (&[f64], isize, isize),
    b: (&[f64], isize, isize),
    beta: f64,
    c: (&mut [f64], isize),
) {
    let (a, rsa, csa) = a;
    let (b, rsb, csb) = b;
    let (c, rsc) = c;
    if m == 0 || n == 0 {
        return;
    }
    let span = |rows: usize, cols: usize, rs: isize, cs: isize| {
        (rows.saturating_sub(1)) as isize * rs + (cols.saturating_sub(1)) as isize * cs + 1
    };
    assert!(a.len() as isize >= span(m, k, rsa, csa));
    assert!(b.len() as isize >= span(k, n, rsb, csb));
    assert!(c.len() as isize >= span(m, n, rsc, 1));
    // SAFETY: the asserts above bound every index the kernel touches.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            alpha,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            rsc,
            1,
        );
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub fn norm_sq(a: &[f64]) -> f64 {
    dot(a, a)
}

#[inline]
pub fn norm(a: &[f64]) -> f64 {
    norm_sq(a).sqrt()
}

/// `y ← y + alpha·x`
#[inline]
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

pub fn sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

pub fn add(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x + y).collect()
}

pub fn scale(alpha: f64, a: &[f64]) -> Vec<f64> {
    a.iter().map(|x| alpha * x).collect()
}

pub fn dist_sq(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

pub fn all_finite(a: &[f64]) -> bool {
    a.iter().all(|v| v.is_finite())
}

/// Seeded xoshiro256++ stream. Seeds are expanded with splitmix64.
#[derive(Clone, Debug)]
pub struct Rng {
    inner: Xoshiro256PlusPlus,
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Rng {
            inner: Xoshiro256PlusPlus::seed_from_u64(seed),
        }
    }

    /// Independent substream `index` of `seed`: the base stream advanced by
    /// `index + 1` jumps of 2^128 steps, so substreams never overlap.
    pub fn stream(seed: u64, index: u64) -> Self {
        let mut inner = Xoshiro256PlusPlus::seed_from_u64(seed);
        for _ in 0..=index {
            inner.jump();
        }
        Rng { inner }
    }

    #[inline]
    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Uniform on [0, 1) with 53 bits of resolution.
    #[inline]
    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform on the open interval (0, 1).
    #[inline]
    pub fn uniform_open(&mut self) -> f64 {
        ((self.next_u64() >> 11) as f64 + 0.5) * (1.0 / (1u64 << 53) as f64)
    }

    pub fn uniform_range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    /// Index in `0..n` (multiply-shift; bias is below 2^-64·n).
    #[inline]
    pub fn below(&mut self, n: usize) -> usize {
        ((self.next_u64() as u128 * n as u128) >> 64) as usize
    }

    /// Two independent standard normals from one Box–Muller transform.
    pub fn normal_pair(&mut self) -> (f64, f64) {
        let u1 = self.uniform_open();
        let u2 = self.uniform();
        let r = (-2.0 * u1.ln()).sqrt();
        let theta = std::f64::consts::TAU * u2;
        (r * theta.cos(), r * theta.sin())
    }

    pub fn normal(&mut self) -> f64 {
        self.normal_pair().0
    }

    /// Fill `out` with standard normals, two per Box–Muller transform.
    pub fn fill_normal(&mut self, out: &mut [f64]) {
        let mut chunks = out.chunks_exact_mut(2);
        for pair in &mut chunks {
            let (a, b) = self.normal_pair();
            pair[0] = a;
            pair[1] = b;
        }
        if let [last] = chunks.into_remainder() {
            *last = self.normal_pair().0;
        }
    }

    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i + 1);
            items.swap(i, j);
        }
    }
}

pub fn sample_gaussian(rng: &mut Rng, dim: usize, sigma: f64) -> Result<Vec<f64>> {
    if !(sigma >= 0.0) || !sigma.is_finite() {
        return Err(Error::invalid(format!("gaussian sigma must be >= 0, got {sigma}")));
    }
    let mut out = vec![0.0; dim];
    if sigma == 0.0 {
        return Ok(out);
    }
    rng.fill_normal(&mut out);
    out.iter_mut().for_each(|v| *v *= sigma);
    Ok(out)
}

/// Inverse CDF of Laplace(0, b) at `u` in (0, 1).
#[inline]
pub fn laplace_quantile(u: f64, b: f64) -> f64 {
    let d = u - 0.5;
    -b * d.signum() * (1.0 - 2.0 * d.abs()).ln()
}

pub fn sample_laplace(rng: &mut Rng, dim: usize, b: f64) -> Result<Vec<f64>> {
    if !(b >= 0.0) || !b.is_finite() {
        return Err(Error::invalid(format!("laplace scale must be >= 0, got {b}")));
    }
    if b == 0.0 {
        return Ok(vec![0.0; dim]);
    }
    Ok((0..dim)
        .map(|_| laplace_quantile(rng.uniform_open(), b))
        .collect())
}

/// Poisson draw: Knuth's product method below 30, rounded normal approximation above.
pub fn sample_poisson(rng: &mut Rng, lambda: f64) -> u64 {
    if lambda <= 0.0 {
        return 0;
    }
    if lambda < 30.0 {
        let limit = (-lambda).exp();
        let mut k = 0u64;
        let mut p = rng.uniform();
        while p > limit {
            k += 1;
            p *= rng.uniform();
        }
        k
    } else {
        let z = rng.normal();
        (lambda + lambda.sqrt() * z).round().max(0.0) as u64
    }
}

#[inline]
pub fn to_pixel_scale(v: f64) -> f64 {
    (v + 1.0) * 0.5 * PIXEL_MAX
}

#[inline]
pub fn from_pixel_scale(p: f64) -> f64 {
    p / PIXEL_MAX * 2.0 - 1.0
}

/// Poisson noise on the 8-bit scale: map [-1, 1] to [0, 255], draw counts, map back.
pub fn apply_poisson_noise(rng: &mut Rng, y_clean: &[f64]) -> Result<Vec<f64>> {
    if let Some(v) = y_clean.iter().find(|v| !(-1.0..=1.0).contains(*v)) {
        return Err(Error::invalid(format!(
            "poisson noise expects entries in [-1, 1], got {v}"
        )));
    }
    Ok(y_clean
        .iter()
        .map(|&v| from_pixel_scale(sample_poisson(rng, to_pixel_scale(v)) as f64))
        .collect())
}
