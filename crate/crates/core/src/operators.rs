//! Forward corruption operators `y = A(x)`, their Jacobian-transpose actions and
//! Lipschitz estimates.
//!
//! Convolutions are circular, so the adjoint of a blur is correlation with the
//! same (symmetric) kernel.

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::math::{dot, norm, Mat, Rng};

/// Default kernel size for 1D blurs.
pub const DEFAULT_KERNEL_SIZE: usize = 9;
/// Default blur width: the 61-tap, σ = 3 image kernel rescaled to 9 taps.
pub const DEFAULT_KERNEL_SIGMA: f64 = 3.0 * 9.0 / 61.0;

fn default_kernel_size() -> usize {
    DEFAULT_KERNEL_SIZE
}

fn default_kernel_sigma() -> f64 {
    DEFAULT_KERNEL_SIGMA
}

fn default_hdr_scale() -> f64 {
    2.0
}

fn default_nl_scale() -> f64 {
    0.5
}

fn default_nl_kappa() -> f64 {
    0.5
}

/// Serializable operator description as it appears in experiment configs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum OpSpec {
    Identity {
        dim: usize,
    },
    LinearMatrix {
        rows: Vec<Vec<f64>>,
    },
    Projection,
    Blur1d {
        len: usize,
        #[serde(default = "default_kernel_size")]
        kernel_size: usize,
        #[serde(default = "default_kernel_sigma")]
        sigma: f64,
    },
    Downsample {
        len: usize,
        factor: usize,
    },
    HdrClip {
        dim: usize,
        #[serde(default = "default_hdr_scale")]
        scale: f64,
    },
    AnalyticNonlinear {
        len: usize,
        #[serde(default = "default_nl_scale")]
        scale: f64,
        #[serde(default = "default_nl_kappa")]
        kappa: f64,
        #[serde(default = "default_kernel_size")]
        kernel_size: usize,
        #[serde(default = "default_kernel_sigma")]
        sigma: f64,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OpKind {
    Identity,
    LinearMatrix,
    Projection,
    Blur1d,
    Downsample,
    HdrClip,
    AnalyticNonlinear,
}

/// Normalized Gaussian weights `exp(-i²/2σ²)` for `i ∈ [-size/2, size/2]`.
pub fn gaussian_kernel(size: usize, sigma: f64) -> Result<Vec<f64>> {
    if size == 0 || size % 2 == 0 {
        return Err(Error::invalid(format!("kernel size must be odd, got {size}")));
    }
    if !(sigma > 0.0) {
        return Err(Error::invalid(format!("kernel sigma must be > 0, got {sigma}")));
    }
    let half = (size / 2) as isize;
    let raw: Vec<f64> = (-half..=half)
        .map(|i| (-((i * i) as f64) / (2.0 * sigma * sigma)).exp())
        .collect();
    let total: f64 = raw.iter().sum();
    Ok(raw.into_iter().map(|w| w / total).collect())
}

/// Circular convolution with an odd-length kernel centred at tap `size/2`.
#[derive(Clone, Debug, PartialEq)]
pub struct CircularKernel {
    weights: Vec<f64>,
    len: usize,
}

impl CircularKernel {
    pub fn new(weights: Vec<f64>, len: usize) -> Result<Self> {
        if weights.len() % 2 == 0 || weights.len() > len {
            return Err(Error::invalid(format!(
                "kernel of {} taps does not fit a circular signal of length {len}",
                weights.len()
            )));
        }
        Ok(CircularKernel { weights, len })
    }

    pub fn gaussian(len: usize, size: usize, sigma: f64) -> Result<Self> {
        CircularKernel::new(gaussian_kernel(size, sigma)?, len)
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// `(k ∗ x)_i = Σ_t k_t x_{i-t}`
    fn convolve(&self, x: &[f64]) -> Vec<f64> {
        let n = self.len;
        let half = self.weights.len() / 2;
        (0..n)
            .map(|i| {
                self.weights
                    .iter()
                    .enumerate()
                    .map(|(k, w)| w * x[(i + n + half - k) % n])
                    .sum()
            })
            .collect()
    }

    /// Adjoint: `(kᵀ u)_j = Σ_t k_t u_{j+t}`
    fn correlate(&self, u: &[f64]) -> Vec<f64> {
        let n = self.len;
        let half = self.weights.len() / 2;
        (0..n)
            .map(|j| {
                self.weights
                    .iter()
                    .enumerate()
                    .map(|(k, w)| w * u[(j + n + k - half) % n])
                    .sum()
            })
            .collect()
    }
}

/// A forward operator with everything precomputed.
#[derive(Clone, Debug, PartialEq)]
pub enum CorruptionOp {
    Identity { dim: usize },
    LinearMatrix { matrix: Mat },
    /// `[[1, 1], [0, 0]]`: projection onto the first axis along (1, -1).
    Projection,
    Blur1d { kernel: CircularKernel },
    Downsample { len: usize, factor: usize },
    HdrClip { dim: usize, scale: f64 },
    /// `s·tanh(x) + κ·(k ∗ x)`, a smooth nonlinear blur.
    AnalyticNonlinear {
        scale: f64,
        kappa: f64,
        kernel: CircularKernel,
    },
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum LipschitzMethod {
    /// Largest singular value by power iteration (linear operators).
    PowerIteration,
    /// Max ratio over random pairs; a lower bound.
    PairProbe,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LipschitzEstimate {
    pub value: f64,
    pub method: LipschitzMethod,
}

impl LipschitzEstimate {
    pub fn is_lower_bound(&self) -> bool {
        self.method == LipschitzMethod::PairProbe
    }
}

const POWER_TOL: f64 = 1e-10;
const POWER_MAX_ITERS: usize = 200_000;

impl CorruptionOp {
    pub fn from_spec(spec: &OpSpec) -> Result<Self> {
        let positive = |name: &str, v: usize| {
            if v == 0 {
                Err(Error::invalid(format!("{name} must be positive")))
            } else {
                Ok(v)
            }
        };
        Ok(match spec {
            OpSpec::Identity { dim } => CorruptionOp::Identity {
                dim: positive("dim", *dim)?,
            },
            OpSpec::LinearMatrix { rows } => CorruptionOp::LinearMatrix {
                matrix: Mat::from_rows(rows)?,
            },
            OpSpec::Projection => CorruptionOp::Projection,
            OpSpec::Blur1d {
                len,
                kernel_size,
                sigma,
            } => CorruptionOp::Blur1d {
                kernel: CircularKernel::gaussian(positive("len", *len)?, *kernel_size, *sigma)?,
            },
            OpSpec::Downsample { len, factor } => {
                positive("factor", *factor)?;
                if *len == 0 || len % factor != 0 {
                    return Err(Error::invalid(format!(
                        "downsample length {len} is not a positive multiple of factor {factor}"
                    )));
                }
                CorruptionOp::Downsample {
                    len: *len,
                    factor: *factor,
                }
            }
            OpSpec::HdrClip { dim, scale } => CorruptionOp::HdrClip {
                dim: positive("dim", *dim)?,
                scale: *scale,
            },
            OpSpec::AnalyticNonlinear {
                len,
                scale,
                kappa,
                kernel_size,
                sigma,
            } => CorruptionOp::AnalyticNonlinear {
                scale: *scale,
                kappa: *kappa,
                kernel: CircularKernel::gaussian(positive("len", *len)?, *kernel_size, *sigma)?,
            },
        })
    }

    pub fn kind(&self) -> OpKind {
        match self {
            CorruptionOp::Identity { .. } => OpKind::Identity,
            CorruptionOp::LinearMatrix { .. } => OpKind::LinearMatrix,
            CorruptionOp::Projection => OpKind::Projection,
            CorruptionOp::Blur1d { .. } => OpKind::Blur1d,
            CorruptionOp::Downsample { .. } => OpKind::Downsample,
            CorruptionOp::HdrClip { .. } => OpKind::HdrClip,
            CorruptionOp::AnalyticNonlinear { .. } => OpKind::AnalyticNonlinear,
        }
    }

    pub fn in_dim(&self) -> usize {
        match self {
            CorruptionOp::Identity { dim } | CorruptionOp::HdrClip { dim, .. } => *dim,
            CorruptionOp::LinearMatrix { matrix } => matrix.cols(),
            CorruptionOp::Projection => 2,
            CorruptionOp::Blur1d { kernel } | CorruptionOp::AnalyticNonlinear { kernel, .. } => {
                kernel.len
            }
            CorruptionOp::Downsample { len, .. } => *len,
        }
    }

    pub fn out_dim(&self) -> usize {
        match self {
            CorruptionOp::LinearMatrix { matrix } => matrix.rows(),
            CorruptionOp::Downsample { len, factor } => len / factor,
            _ => self.in_dim(),
        }
    }

    pub fn is_linear(&self) -> bool {
        !matches!(
            self,
            CorruptionOp::HdrClip { .. } | CorruptionOp::AnalyticNonlinear { .. }
        )
    }

    pub fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_dim("operator input", self.in_dim(), x.len())?;
        Ok(match self {
            CorruptionOp::Identity { .. } => x.to_vec(),
            CorruptionOp::LinearMatrix { matrix } => matrix.matvec(x)?,
            CorruptionOp::Projection => vec![x[0] + x[1], 0.0],
            CorruptionOp::Blur1d { kernel } => kernel.convolve(x),
            CorruptionOp::Downsample { factor, .. } => x
                .chunks_exact(*factor)
                .map(|block| {
                    // anchored at the first entry so constant blocks stay exact
                    let base = block[0];
                    base + block.iter().map(|v| v - base).sum::<f64>() / *factor as f64
                })
                .collect(),
            CorruptionOp::HdrClip { scale, .. } => {
                x.iter().map(|v| (scale * v).clamp(-1.0, 1.0)).collect()
            }
            CorruptionOp::AnalyticNonlinear {
                scale,
                kappa,
                kernel,
            } => {
                let blurred = kernel.convolve(x);
                x.iter()
                    .zip(blurred)
                    .map(|(v, b)| scale * v.tanh() + kappa * b)
                    .collect()
            }
        })
    }

    /// `J_A(x)ᵀ u`. The clip subgradient is zero on the boundary `|scale·x| = 1`.
    pub fn jacobian_transpose_apply(&self, x: &[f64], u: &[f64]) -> Result<Vec<f64>> {
        check_dim("jacobian_transpose_apply x", self.in_dim(), x.len())?;
        check_dim("jacobian_transpose_apply u", self.out_dim(), u.len())?;
        Ok(match self {
            CorruptionOp::HdrClip { scale, .. } => x
                .iter()
                .zip(u)
                .map(|(v, ui)| if (scale * v).abs() < 1.0 { scale * ui } else { 0.0 })
                .collect(),
            CorruptionOp::AnalyticNonlinear {
                scale,
                kappa,
                kernel,
            } => {
                let back = kernel.correlate(u);
                x.iter()
                    .zip(u)
                    .zip(back)
                    .map(|((v, ui), b)| {
                        let t = v.tanh();
                        scale * (1.0 - t * t) * ui + kappa * b
                    })
                    .collect()
            }
            _ => self.transpose_apply_linear(u),
        })
    }

    /// `Aᵀ u` for linear kinds.
    fn transpose_apply_linear(&self, u: &[f64]) -> Vec<f64> {
        match self {
            CorruptionOp::Identity { .. } => u.to_vec(),
            CorruptionOp::LinearMatrix { matrix } => {
                matrix.matvec_t(u).expect("dims checked by caller")
            }
            CorruptionOp::Projection => vec![u[0], u[0]],
            CorruptionOp::Blur1d { kernel } => kernel.correlate(u),
            CorruptionOp::Downsample { factor, .. } => u
                .iter()
                .flat_map(|v| std::iter::repeat(v / *factor as f64).take(*factor))
                .collect(),
            CorruptionOp::HdrClip { .. } | CorruptionOp::AnalyticNonlinear { .. } => {
                unreachable!("nonlinear operator has no fixed adjoint")
            }
        }
    }

    /// `Aᵀ u` for linear operators; `None` for nonlinear kinds.
    pub fn adjoint_apply(&self, u: &[f64]) -> Result<Option<Vec<f64>>> {
        check_dim("adjoint_apply", self.out_dim(), u.len())?;
        Ok(self.is_linear().then(|| self.transpose_apply_linear(u)))
    }

    /// Dense matrix of a linear operator, built column by column.
    pub fn to_dense(&self) -> Option<Mat> {
        if !self.is_linear() {
            return None;
        }
        let (m, n) = (self.out_dim(), self.in_dim());
        let mut out = Mat::zeros(m, n);
        let mut e = vec![0.0; n];
        for j in 0..n {
            e[j] = 1.0;
            let col = self.apply(&e).expect("basis vector has the input dim");
            for (i, v) in col.into_iter().enumerate() {
                out.set(i, j, v);
            }
            e[j] = 0.0;
        }
        Some(out)
    }

    pub fn lipschitz_estimate(&self, n_probe: usize, rng: &mut Rng) -> Result<LipschitzEstimate> {
        if n_probe == 0 {
            return Err(Error::invalid("n_probe must be >= 1"));
        }
        if self.is_linear() {
            Ok(LipschitzEstimate {
                value: self.power_iteration(rng)?,
                method: LipschitzMethod::PowerIteration,
            })
        } else {
            Ok(LipschitzEstimate {
                value: self.probe_pairs(n_probe, rng)?,
                method: LipschitzMethod::PairProbe,
            })
        }
    }

    /// Largest singular value: power iteration on `AᵀA`, stopped when the
    /// eigen-residual falls below `POWER_TOL` relative to the Rayleigh quotient.
    fn power_iteration(&self, rng: &mut Rng) -> Result<f64> {
        let n = self.in_dim();
        let mut v: Vec<f64> = (0..n).map(|_| rng.normal()).collect();
        let nv = norm(&v);
        v.iter_mut().for_each(|x| *x /= nv);
        let mut rayleigh = 0.0;
        for _ in 0..POWER_MAX_ITERS {
            let av = self.apply(&v)?;
            let w = self.transpose_apply_linear(&av);
            rayleigh = dot(&v, &w);
            let nw = norm(&w);
            if nw == 0.0 {
                return Ok(0.0);
            }
            let residual: f64 = w
                .iter()
                .zip(&v)
                .map(|(wi, vi)| (wi - rayleigh * vi).powi(2))
                .sum::<f64>()
                .sqrt();
            v = w.into_iter().map(|x| x / nw).collect();
            if residual <= POWER_TOL * rayleigh.abs() {
                break;
            }
        }
        Ok(rayleigh.max(0.0).sqrt())
    }

    /// Max of `‖A(x₁) − A(x₂)‖ / ‖x₁ − x₂‖` over random pairs at random scales,
    /// so small-amplitude pairs reach the operator's linear regime.
    fn probe_pairs(&self, n_probe: usize, rng: &mut Rng) -> Result<f64> {
        let n = self.in_dim();
        let mut best = 0.0f64;
        for _ in 0..n_probe {
            let amp = 10f64.powf(rng.uniform_range(-3.0, 0.0));
            let gap = amp * 10f64.powf(rng.uniform_range(-3.0, 0.0));
            let x1: Vec<f64> = (0..n).map(|_| amp * rng.uniform_range(-1.0, 1.0)).collect();
            let x2: Vec<f64> = x1
                .iter()
                .map(|v| v + gap * rng.uniform_range(-1.0, 1.0))
                .collect();
            let dx = norm(&crate::math::sub(&x1, &x2));
            if dx == 0.0 {
                continue;
            }
            let dy = norm(&crate::math::sub(&self.apply(&x1)?, &self.apply(&x2)?));
            best = best.max(dy / dx);
        }
        Ok(best)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InterpMode {
    /// Keys cubic convolution (a = -0.5), the 1D analogue of bicubic.
    #[default]
    Cubic,
    Linear,
}

/// Circular upsampling `Q` used to compare low-resolution measurements with signals.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Interp {
    pub factor: usize,
    #[serde(default)]
    pub mode: InterpMode,
}

fn keys_cubic(t: f64) -> f64 {
    const A: f64 = -0.5;
    let t = t.abs();
    if t <= 1.0 {
        (A + 2.0) * t.powi(3) - (A + 3.0) * t * t + 1.0
    } else if t < 2.0 {
        A * t.powi(3) - 5.0 * A * t * t + 8.0 * A * t - 4.0 * A
    } else {
        0.0
    }
}

impl Interp {
    pub fn new(factor: usize, mode: InterpMode) -> Result<Self> {
        if factor == 0 {
            return Err(Error::invalid("interpolation factor must be positive"));
        }
        Ok(Interp { factor, mode })
    }

    /// Upsample by `factor`, aligning sample centres with the averaged blocks of
    /// [`CorruptionOp::Downsample`].
    pub fn up(&self, y: &[f64]) -> Vec<f64> {
        let n = y.len() as isize;
        let f = self.factor as f64;
        let at = |i: isize| y[i.rem_euclid(n) as usize];
        (0..y.len() * self.factor)
            .map(|j| {
                let s = (j as f64 + 0.5) / f - 0.5;
                let i0 = s.floor();
                let frac = s - i0;
                let i0 = i0 as isize;
                let base = at(i0);
                // weights sum to one, so anchoring at `base` keeps constants exact
                match self.mode {
                    InterpMode::Linear => base + frac * (at(i0 + 1) - base),
                    InterpMode::Cubic => {
                        base + (-1..=2)
                            .map(|k| keys_cubic(frac - k as f64) * (at(i0 + k) - base))
                            .sum::<f64>()
                    }
                }
            })
            .collect()
    }
}
