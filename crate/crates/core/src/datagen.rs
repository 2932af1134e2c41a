//! Synthetic clean-signal priors, measurement pipelines, and imbalanced splits.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::math::{dist_sq, dot, from_pixel_scale, sample_gaussian, sample_laplace, sample_poisson, to_pixel_scale, Mat, Rng, PIXEL_MAX};
use crate::operators::{CorruptionOp, OpSpec};

pub const DEFAULT_NOISE_SIGMA: f64 = 0.05;
pub const DEFAULT_SIGNAL_LEN: usize = 64;
pub const MAX_FOURIER_MODES: usize = 8;

/// The four-level mixture used for the robustness experiment, proportions 4:3:2:1.
pub const MULTI_LEVELS: [(f64, f64); 4] = [(0.025, 4.0), (0.05, 3.0), (0.1, 2.0), (0.2, 1.0)];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Component {
    pub mean: Vec<f64>,
    pub sigma: f64,
    pub weight: f64,
}

fn default_signal_len() -> usize {
    DEFAULT_SIGNAL_LEN
}
fn default_modes() -> usize {
    MAX_FOURIER_MODES
}
fn default_coeff_sigma() -> f64 {
    0.25
}
fn default_dim() -> usize {
    2
}
fn default_mode_sigma() -> f64 {
    0.5
}
fn default_separation() -> f64 {
    6.0
}
fn default_weights() -> [f64; 2] {
    [0.5, 0.5]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PriorSpec {
    /// Isotropic Gaussian mixture in any dimension.
    GaussianMixture { components: Vec<Component> },
    /// `mean + F·z` with `z` standard normal; `factor` lists the rows of `F`.
    /// A rank-deficient `F` gives a degenerate (line or subspace) law.
    LinearGaussian { mean: Vec<f64>, factor: Vec<Vec<f64>> },
    /// Random low-frequency Fourier series, clipped to [-1, 1]. Mode `k` has
    /// coefficient scale `coeff_sigma / k`.
    #[serde(rename = "smooth_signals_1d")]
    SmoothSignals1D {
        #[serde(default = "default_signal_len")]
        signal_len: usize,
        #[serde(default = "default_modes")]
        modes: usize,
        #[serde(default = "default_coeff_sigma")]
        coeff_sigma: f64,
    },
    /// Two isotropic modes `separation·sigma` apart along the first axis,
    /// centred at the origin.
    TwoModes {
        #[serde(default = "default_dim")]
        dim: usize,
        #[serde(default = "default_mode_sigma")]
        sigma: f64,
        #[serde(default = "default_separation")]
        separation: f64,
        #[serde(default = "default_weights")]
        weights: [f64; 2],
    },
}

impl PriorSpec {
    pub fn two_modes(dim: usize, sigma: f64, weights: [f64; 2]) -> Self {
        PriorSpec::TwoModes {
            dim,
            sigma,
            separation: default_separation(),
            weights,
        }
    }

    pub fn smooth_signals() -> Self {
        PriorSpec::SmoothSignals1D {
            signal_len: DEFAULT_SIGNAL_LEN,
            modes: MAX_FOURIER_MODES,
            coeff_sigma: default_coeff_sigma(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::invalid(m));
        match self {
            PriorSpec::GaussianMixture { components } => {
                let Some(first) = components.first() else {
                    return bad("mixture needs at least one component".into());
                };
                let total: f64 = components.iter().map(|c| c.weight).sum();
                for c in components {
                    check_dim("mixture component mean", first.mean.len(), c.mean.len())?;
                    if !(c.sigma >= 0.0 && c.sigma.is_finite()) {
                        return bad(format!("component sigma must be >= 0, got {}", c.sigma));
                    }
                    if !(c.weight >= 0.0 && c.weight.is_finite()) {
                        return bad(format!("component weight must be >= 0, got {}", c.weight));
                    }
                }
                if first.mean.is_empty() {
                    return bad("component mean is empty".into());
                }
                if (total - 1.0).abs() > 1e-9 {
                    return bad(format!("component weights sum to {total}, expected 1"));
                }
            }
            PriorSpec::LinearGaussian { mean, factor } => {
                if mean.is_empty() {
                    return bad("mean is empty".into());
                }
                check_dim("factor rows", mean.len(), factor.len())?;
                let k = factor[0].len();
                if k == 0 {
                    return bad("factor has no columns".into());
                }
                for row in factor {
                    check_dim("factor columns", k, row.len())?;
                }
                if mean.iter().chain(factor.iter().flatten()).any(|v| !v.is_finite()) {
                    return bad("mean and factor must be finite".into());
                }
            }
            PriorSpec::SmoothSignals1D { signal_len, modes, coeff_sigma } => {
                if *signal_len == 0 {
                    return bad("signal_len must be >= 1".into());
                }
                if *modes == 0 || *modes > MAX_FOURIER_MODES || 2 * modes >= *signal_len {
                    return bad(format!(
                        "modes must lie in 1..={MAX_FOURIER_MODES} and below signal_len/2, got {modes}"
                    ));
                }
                if !(*coeff_sigma >= 0.0 && coeff_sigma.is_finite()) {
                    return bad(format!("coeff_sigma must be >= 0, got {coeff_sigma}"));
                }
            }
            PriorSpec::TwoModes { dim, sigma, separation, weights } => {
                if *dim == 0 {
                    return bad("dim must be >= 1".into());
                }
                if !(*sigma > 0.0 && sigma.is_finite()) {
                    return bad(format!("sigma must be > 0, got {sigma}"));
                }
                if !(*separation >= 0.0 && separation.is_finite()) {
                    return bad(format!("separation must be >= 0, got {separation}"));
                }
                if weights.iter().any(|w| !(*w >= 0.0)) || (weights[0] + weights[1] - 1.0).abs() > 1e-9 {
                    return bad(format!("weights must be >= 0 and sum to 1, got {weights:?}"));
                }
            }
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        match self {
            PriorSpec::GaussianMixture { components } => components.first().map_or(0, |c| c.mean.len()),
            PriorSpec::LinearGaussian { mean, .. } => mean.len(),
            PriorSpec::SmoothSignals1D { signal_len, .. } => *signal_len,
            PriorSpec::TwoModes { dim, .. } => *dim,
        }
    }

    /// Mixture components; `None` for the non-mixture priors.
    pub fn components(&self) -> Option<Vec<Component>> {
        match self {
            PriorSpec::GaussianMixture { components } => Some(components.clone()),
            PriorSpec::SmoothSignals1D { .. } | PriorSpec::LinearGaussian { .. } => None,
            PriorSpec::TwoModes { dim, sigma, separation, weights } => {
                let half = 0.5 * separation * sigma;
                let mean = |s: f64| {
                    let mut m = vec![0.0; *dim];
                    m[0] = s * half;
                    m
                };
                Some(vec![
                    Component { mean: mean(-1.0), sigma: *sigma, weight: weights[0] },
                    Component { mean: mean(1.0), sigma: *sigma, weight: weights[1] },
                ])
            }
        }
    }

    pub fn mode_means(&self) -> Option<Vec<Vec<f64>>> {
        self.components().map(|cs| cs.into_iter().map(|c| c.mean).collect())
    }
}

fn sample_component(c: &Component, rng: &mut Rng) -> Result<Vec<f64>> {
    let mut x = sample_gaussian(rng, c.mean.len(), c.sigma)?;
    for (xi, m) in x.iter_mut().zip(&c.mean) {
        *xi += m;
    }
    Ok(x)
}

fn pick(weights: impl Iterator<Item = f64>, u: f64) -> usize {
    let mut acc = 0.0;
    let mut last = 0;
    for (k, w) in weights.enumerate() {
        acc += w;
        last = k;
        if u < acc {
            return k;
        }
    }
    last
}

fn sample_smooth(rng: &mut Rng, len: usize, modes: usize, coeff_sigma: f64) -> Vec<f64> {
    let mut coeffs = vec![0.0; 2 * modes];
    rng.fill_normal(&mut coeffs);
    (0..len)
        .map(|t| {
            let mut v = 0.0;
            for k in 1..=modes {
                let phase = std::f64::consts::TAU * (k * t) as f64 / len as f64;
                let s = coeff_sigma / k as f64;
                v += s * (coeffs[2 * k - 2] * phase.cos() + coeffs[2 * k - 1] * phase.sin());
            }
            v.clamp(-1.0, 1.0)
        })
        .collect()
}

/// `n` i.i.d. draws with their mixture component (always 0 outside mixtures).
pub fn sample_prior_labeled(spec: &PriorSpec, rng: &mut Rng, n: usize) -> Result<(Mat, Vec<usize>)> {
    spec.validate()?;
    if n == 0 {
        return Err(Error::invalid("n must be >= 1"));
    }
    let d = spec.dim();
    let mut data = Vec::with_capacity(n * d);
    let mut labels = Vec::with_capacity(n);
    match spec {
        PriorSpec::SmoothSignals1D { signal_len, modes, coeff_sigma } => {
            for _ in 0..n {
                data.extend(sample_smooth(rng, *signal_len, *modes, *coeff_sigma));
                labels.push(0);
            }
        }
        PriorSpec::LinearGaussian { mean, factor } => {
            let mut z = vec![0.0; factor[0].len()];
            for _ in 0..n {
                rng.fill_normal(&mut z);
                data.extend(mean.iter().zip(factor).map(|(m, row)| m + dot(row, &z)));
                labels.push(0);
            }
        }
        _ => {
            let comps = spec.components().expect("mixture prior");
            for _ in 0..n {
                let k = pick(comps.iter().map(|c| c.weight), rng.uniform());
                data.extend(sample_component(&comps[k], rng)?);
                labels.push(k);
            }
        }
    }
    Ok((Mat::from_vec(n, d, data)?, labels))
}

pub fn sample_prior(spec: &PriorSpec, rng: &mut Rng, n: usize) -> Result<Mat> {
    Ok(sample_prior_labeled(spec, rng, n)?.0)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseLevel {
    pub sigma: f64,
    pub proportion: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum NoiseSpec {
    Gaussian {
        #[serde(default = "default_noise_sigma")]
        sigma: f64,
    },
    Laplace { b: f64 },
    /// Counts on the 8-bit scale, clamped to [1, 255] so the Poisson cost stays defined.
    Poisson,
    MultiLevel { levels: Vec<NoiseLevel> },
}

fn default_noise_sigma() -> f64 {
    DEFAULT_NOISE_SIGMA
}

impl Default for NoiseSpec {
    fn default() -> Self {
        NoiseSpec::Gaussian { sigma: DEFAULT_NOISE_SIGMA }
    }
}

impl NoiseSpec {
    pub fn standard_multilevel() -> Self {
        NoiseSpec::MultiLevel {
            levels: MULTI_LEVELS
                .iter()
                .map(|&(sigma, proportion)| NoiseLevel { sigma, proportion })
                .collect(),
        }
    }

    /// Laplace scale with the same standard deviation as `N(0, sigma²)`.
    pub fn laplace_matching(sigma: f64) -> Self {
        NoiseSpec::Laplace { b: sigma / std::f64::consts::SQRT_2 }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            NoiseSpec::Gaussian { sigma } if !(*sigma >= 0.0 && sigma.is_finite()) => {
                Err(Error::invalid(format!("noise sigma must be >= 0, got {sigma}")))
            }
            NoiseSpec::Laplace { b } if !(*b >= 0.0 && b.is_finite()) => {
                Err(Error::invalid(format!("laplace scale must be >= 0, got {b}")))
            }
            NoiseSpec::MultiLevel { levels } => {
                if levels.is_empty() {
                    return Err(Error::invalid("multi-level noise needs at least one level"));
                }
                for l in levels {
                    if !(l.proportion > 0.0 && l.proportion.is_finite()) {
                        return Err(Error::invalid(format!("level proportions must be > 0, got {}", l.proportion)));
                    }
                    if !(l.sigma >= 0.0 && l.sigma.is_finite()) {
                        return Err(Error::invalid(format!("level sigma must be >= 0, got {}", l.sigma)));
                    }
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }

    /// Level proportions normalized to sum to one.
    pub fn level_probabilities(&self) -> Option<Vec<f64>> {
        match self {
            NoiseSpec::MultiLevel { levels } => {
                let total: f64 = levels.iter().map(|l| l.proportion).sum();
                Some(levels.iter().map(|l| l.proportion / total).collect())
            }
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DegradationSpec {
    pub op: OpSpec,
    #[serde(default)]
    pub noise: NoiseSpec,
}

/// A built measurement process `y = A(x) + n`.
#[derive(Clone, Debug, PartialEq)]
pub struct Degradation {
    pub op: CorruptionOp,
    pub noise: NoiseSpec,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Degraded {
    pub y: Vec<f64>,
    /// Index of the sampled noise level for multi-level noise.
    pub level: Option<usize>,
    /// Poisson counts pushed back into [1, 255].
    pub clamped: usize,
}

impl Degradation {
    pub fn new(op: CorruptionOp, noise: NoiseSpec) -> Result<Self> {
        noise.validate()?;
        Ok(Degradation { op, noise })
    }

    pub fn from_spec(spec: &DegradationSpec) -> Result<Self> {
        Self::new(CorruptionOp::from_spec(&spec.op)?, spec.noise.clone())
    }

    pub fn degrade(&self, x: &[f64], rng: &mut Rng) -> Result<Vec<f64>> {
        Ok(self.degrade_detailed(x, rng)?.y)
    }

    pub fn degrade_detailed(&self, x: &[f64], rng: &mut Rng) -> Result<Degraded> {
        let mut y = self.op.apply(x)?;
        let d = y.len();
        let mut level = None;
        let mut clamped = 0;
        let noise = match &self.noise {
            NoiseSpec::Gaussian { sigma } => sample_gaussian(rng, d, *sigma)?,
            NoiseSpec::Laplace { b } => sample_laplace(rng, d, *b)?,
            NoiseSpec::MultiLevel { levels } => {
                let probs = self.noise.level_probabilities().expect("multi-level");
                let k = pick(probs.into_iter(), rng.uniform());
                level = Some(k);
                sample_gaussian(rng, d, levels[k].sigma)?
            }
            NoiseSpec::Poisson => {
                if let Some(v) = y.iter().find(|v| !(-1.0..=1.0).contains(*v)) {
                    return Err(Error::invalid(format!("poisson noise expects A(x) in [-1, 1], got {v}")));
                }
                for v in y.iter_mut() {
                    let count = sample_poisson(rng, to_pixel_scale(*v)) as f64;
                    let kept = count.clamp(1.0, PIXEL_MAX);
                    if kept != count {
                        clamped += 1;
                    }
                    *v = from_pixel_scale(kept);
                }
                return Ok(Degraded { y, level, clamped });
            }
        };
        for (v, n) in y.iter_mut().zip(noise) {
            *v += n;
        }
        Ok(Degraded { y, level, clamped })
    }

    /// Degrade every row of `xs`.
    pub fn degrade_all(&self, xs: &Mat, rng: &mut Rng) -> Result<Mat> {
        let rows = xs.row_iter().map(|x| self.degrade(x, rng)).collect::<Result<Vec<_>>>()?;
        Mat::from_rows(&rows)
    }
}

/// Unpaired source/target sets for the class-imbalance experiment.
#[derive(Clone, Debug)]
pub struct ImbalancedPair {
    /// Degraded measurements of a 1:1 mode-balanced clean set.
    pub source: Mat,
    pub source_clean: Mat,
    pub source_labels: Vec<usize>,
    /// Clean signals with majority:minority = k:1.
    pub target: Mat,
    pub target_labels: Vec<usize>,
}

/// Mode 0 is the majority. The minority count is `floor(n_target / (k+1))`,
/// the majority takes the rest. The source keeps the minority count per mode.
pub fn build_imbalanced_pair(
    prior: &PriorSpec,
    ratio_k: usize,
    n_target: usize,
    degradation: &Degradation,
    seed: u64,
) -> Result<ImbalancedPair> {
    build_imbalanced_pair_at(prior, ratio_k, n_target, degradation, seed, 100)
}

/// As [`build_imbalanced_pair`], drawing from substreams `stream_base..stream_base + 3`
/// so that held-out sets can be built from the same seed.
pub fn build_imbalanced_pair_at(
    prior: &PriorSpec,
    ratio_k: usize,
    n_target: usize,
    degradation: &Degradation,
    seed: u64,
    stream_base: u64,
) -> Result<ImbalancedPair> {
    prior.validate()?;
    let comps = prior
        .components()
        .filter(|c| c.len() == 2)
        .ok_or_else(|| Error::invalid("imbalanced pair needs a prior with exactly two modes"))?;
    if ratio_k == 0 {
        return Err(Error::invalid("ratio_k must be >= 1"));
    }
    let minority = n_target / (ratio_k + 1);
    if minority == 0 {
        return Err(Error::invalid(format!("n_target {n_target} too small for ratio {ratio_k}:1")));
    }
    let majority = n_target - minority;

    let draw = |counts: [usize; 2], rng: &mut Rng| -> Result<(Mat, Vec<usize>)> {
        let mut rows = Vec::with_capacity(counts[0] + counts[1]);
        let mut labels = Vec::with_capacity(rows.capacity());
        for (k, &count) in counts.iter().enumerate() {
            for _ in 0..count {
                rows.push(sample_component(&comps[k], rng)?);
                labels.push(k);
            }
        }
        Ok((Mat::from_rows(&rows)?, labels))
    };
    // disjoint substreams for target signals, source signals and source noise
    let (target, target_labels) = draw([majority, minority], &mut Rng::stream(seed, stream_base))?;
    let (source_clean, source_labels) = draw([minority, minority], &mut Rng::stream(seed, stream_base + 1))?;
    let source = degradation.degrade_all(&source_clean, &mut Rng::stream(seed, stream_base + 2))?;
    Ok(ImbalancedPair {
        source,
        source_clean,
        source_labels,
        target,
        target_labels,
    })
}

/// Index of the nearest mean for each row.
pub fn classify_nearest(xs: &Mat, means: &[Vec<f64>]) -> Result<Vec<usize>> {
    if means.is_empty() {
        return Err(Error::invalid("no means to classify against"));
    }
    for m in means {
        check_dim("mode mean", xs.cols(), m.len())?;
    }
    Ok(xs
        .row_iter()
        .map(|x| {
            let mut best = (f64::INFINITY, 0);
            for (k, m) in means.iter().enumerate() {
                let d = dist_sq(x, m);
                if d < best.0 {
                    best = (d, k);
                }
            }
            best.1
        })
        .collect())
}

/// Fraction of rows assigned to each mean by nearest-mean classification.
pub fn mode_proportions(xs: &Mat, means: &[Vec<f64>]) -> Result<Vec<f64>> {
    if xs.rows() == 0 {
        return Err(Error::invalid("no samples"));
    }
    let labels = classify_nearest(xs, means)?;
    let mut counts = vec![0.0; means.len()];
    for l in labels {
        counts[l] += 1.0;
    }
    Ok(counts.into_iter().map(|c| c / xs.rows() as f64).collect())
}

/// One sample per row, header `x0..x{d-1}`, values in round-trip exponent form.
pub fn write_samples_csv(path: &Path, xs: &Mat) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record((0..xs.cols()).map(|k| format!("x{k}")))?;
    for row in xs.row_iter() {
        w.write_record(row.iter().map(|v| format!("{v:e}")))?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_samples_csv(path: &Path) -> Result<Mat> {
    let mut r = csv::Reader::from_path(path)?;
    let cols = r.headers()?.len();
    let mut data = Vec::new();
    let mut rows = 0;
    for rec in r.records() {
        let rec = rec?;
        check_dim("csv row", cols, rec.len())?;
        for field in rec.iter() {
            let v: f64 = field
                .trim()
                .parse()
                .map_err(|_| Error::invalid(format!("row {}: cannot parse {field:?} as a number", rows + 1)))?;
            data.push(v);
        }
        rows += 1;
    }
    Mat::from_vec(rows, cols, data)
}
