//! Log-domain generalized Sinkhorn for entropic OT and KL-relaxed UOT.
//!
//! Solves
//!
//! ```text
//! min_π ⟨C, π⟩ + ε KL(π | a⊗b) + ρ₁ KL(π1 | a) + ρ₂ KL(πᵀ1 | b)
//! ```
//!
//! with `π_ij = a_i b_j exp((f_i + g_j − C_ij)/ε)`. The proximal update for the
//! source potential is `f = −(ρ₁ε/(ρ₁+ε)) log Σ_j b_j exp((g_j − C_ij)/ε)`;
//! `ρ = ∞` gives the balanced problem.

use super::{DiscreteMeasure, TransportPlan};
use crate::error::{check_dim, Error, Result};
use crate::math::Mat;

pub const MAX_SINKHORN_POINTS: usize = 512;

/// Sweep budget per warm-start stage, on top of `max_iter` at the target ε.
const STAGE_SWEEPS: usize = 2000;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SinkhornOptions {
    /// Stop when no plan marginal entry moves by more than this in one sweep.
    pub tol: f64,
    pub max_iter: usize,
    /// Warm-start through a geometric schedule of larger ε before the target one.
    pub eps_scaling: bool,
}

impl Default for SinkhornOptions {
    fn default() -> Self {
        SinkhornOptions {
            tol: 1e-9,
            max_iter: 10_000,
            eps_scaling: true,
        }
    }
}

#[derive(Clone, Debug)]
pub struct SinkhornOutput {
    pub plan: TransportPlan,
    pub f: Vec<f64>,
    pub g: Vec<f64>,
    /// Sweeps spent at the target ε.
    pub iterations: usize,
    /// Largest marginal change per sweep at the target ε.
    pub marginal_changes: Vec<f64>,
    /// Largest potential change per sweep at the target ε, in units of ε.
    pub residuals: Vec<f64>,
}

fn log_sum_exp(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let m = values.clone().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + values.map(|v| (v - m).exp()).sum::<f64>().ln()
}

fn damping(rho: f64, eps: f64) -> f64 {
    if rho.is_infinite() {
        1.0
    } else {
        rho / (rho + eps)
    }
}

struct Problem<'a> {
    log_a: Vec<f64>,
    log_b: Vec<f64>,
    cost: &'a Mat,
    rho1: f64,
    rho2: f64,
}

impl Problem<'_> {
    /// One f-then-g sweep; returns the dual residual in units of ε.
    fn sweep(&self, f: &mut [f64], g: &mut [f64], eps: f64) -> f64 {
        let (n, m) = (f.len(), g.len());
        let k1 = damping(self.rho1, eps);
        let k2 = damping(self.rho2, eps);
        let mut res: f64 = 0.0;
        for i in 0..n {
            let row = self.cost.row(i);
            let lse = log_sum_exp((0..m).map(|j| self.log_b[j] + (g[j] - row[j]) / eps));
            let new = -k1 * eps * lse;
            res = res.max((new - f[i]).abs() / eps);
            f[i] = new;
        }
        for j in 0..m {
            let lse = log_sum_exp((0..n).map(|i| self.log_a[i] + (f[i] - self.cost.get(i, j)) / eps));
            let new = -k2 * eps * lse;
            res = res.max((new - g[j]).abs() / eps);
            g[j] = new;
        }
        res
    }

    /// Move along the `(f + λ, g − λ)` direction, which leaves the entropic term
    /// unchanged, to the maximizer of the two marginal dual terms. Without this
    /// the mass mode contracts only at rate `1 − O(ε/ρ)` per sweep.
    fn translate(&self, f: &mut [f64], g: &mut [f64]) {
        if self.rho1.is_infinite() || self.rho2.is_infinite() {
            return;
        }
        let log_a_term = log_sum_exp(self.log_a.iter().zip(f.iter()).map(|(la, fi)| la - fi / self.rho1));
        let log_b_term = log_sum_exp(self.log_b.iter().zip(g.iter()).map(|(lb, gj)| lb - gj / self.rho2));
        let lambda = self.rho1 * self.rho2 / (self.rho1 + self.rho2) * (log_a_term - log_b_term);
        if lambda.is_finite() {
            f.iter_mut().for_each(|v| *v += lambda);
            g.iter_mut().for_each(|v| *v -= lambda);
        }
    }

    /// Row and column sums of the plan at `(f, g)`.
    fn marginals(&self, f: &[f64], g: &[f64], eps: f64) -> (Vec<f64>, Vec<f64>) {
        let (n, m) = (f.len(), g.len());
        let mut rows = vec![0.0; n];
        let mut cols = vec![0.0; m];
        for i in 0..n {
            let row = self.cost.row(i);
            for j in 0..m {
                let p = (self.log_a[i] + self.log_b[j] + (f[i] + g[j] - row[j]) / eps).exp();
                rows[i] += p;
                cols[j] += p;
            }
        }
        (rows, cols)
    }

    fn plan(&self, f: &[f64], g: &[f64], eps: f64) -> Result<TransportPlan> {
        let (n, m) = (f.len(), g.len());
        let matrix = Mat::from_fn(n, m, |i, j| {
            (self.log_a[i] + self.log_b[j] + (f[i] + g[j] - self.cost.get(i, j)) / eps).exp()
        });
        TransportPlan::from_matrix(matrix)
    }
}

fn solve(
    src: &DiscreteMeasure,
    tgt: &DiscreteMeasure,
    cost: &Mat,
    eps: f64,
    rho1: f64,
    rho2: f64,
    opts: SinkhornOptions,
) -> Result<SinkhornOutput> {
    let (n, m) = (src.len(), tgt.len());
    check_dim("cost matrix rows", n, cost.rows())?;
    check_dim("cost matrix cols", m, cost.cols())?;
    if n == 0 || m == 0 {
        return Err(Error::invalid("empty measure"));
    }
    if n > MAX_SINKHORN_POINTS || m > MAX_SINKHORN_POINTS {
        return Err(Error::invalid(format!(
            "Sinkhorn limited to {MAX_SINKHORN_POINTS} points per side, got {n}x{m}"
        )));
    }
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(Error::invalid(format!("eps must be positive, got {eps}")));
    }
    if !(rho1 > 0.0 && rho2 > 0.0) {
        return Err(Error::invalid(format!("rho must be positive, got ({rho1}, {rho2})")));
    }
    if !cost.data().iter().all(|c| c.is_finite()) {
        return Err(Error::NonFinite("cost matrix".into()));
    }
    if src.mass() <= 0.0 || tgt.mass() <= 0.0 {
        return Err(Error::invalid("measures need positive mass"));
    }
    let problem = Problem {
        log_a: src.weights.iter().map(|w| w.ln()).collect(),
        log_b: tgt.weights.iter().map(|w| w.ln()).collect(),
        cost,
        rho1,
        rho2,
    };
    let mut f = vec![0.0; n];
    let mut g = vec![0.0; m];

    let max_change = |a: &[f64], b: &[f64]| a.iter().zip(b).fold(0.0f64, |m, (x, y)| m.max((x - y).abs()));
    let converge = |f: &mut Vec<f64>, g: &mut Vec<f64>, e: f64, budget: usize| {
        let mut prev = problem.marginals(f, g, e);
        let mut changes = Vec::new();
        let mut residuals = Vec::new();
        for _ in 0..budget {
            let r = problem.sweep(f, g, e);
            problem.translate(f, g);
            let next = problem.marginals(f, g, e);
            let dm = max_change(&prev.0, &next.0).max(max_change(&prev.1, &next.1));
            prev = next;
            residuals.push(r);
            changes.push(dm);
            if !dm.is_finite() || dm < opts.tol {
                break;
            }
        }
        (changes, residuals)
    };

    if opts.eps_scaling {
        let scale = cost.data().iter().fold(0.0f64, |a, c| a.max(c.abs()));
        let mut e = scale;
        while e > eps {
            converge(&mut f, &mut g, e, STAGE_SWEEPS);
            e *= 0.5;
        }
    }

    let (marginal_changes, residuals) = converge(&mut f, &mut g, eps, opts.max_iter);
    let last = marginal_changes.last().copied().unwrap_or(f64::NAN);
    if !last.is_finite() {
        return Err(Error::NonFinite(format!("Sinkhorn marginals after {} sweeps", marginal_changes.len())));
    }
    if last < opts.tol {
        return Ok(SinkhornOutput {
            plan: problem.plan(&f, &g, eps)?,
            f,
            g,
            iterations: marginal_changes.len(),
            marginal_changes,
            residuals,
        });
    }
    Err(Error::NoConvergence {
        iterations: opts.max_iter,
        residual: last,
    })
}

/// Entropic UOT with KL marginal penalties of strengths `rho1`, `rho2`.
pub fn solve_uot_entropic(
    src: &DiscreteMeasure,
    tgt: &DiscreteMeasure,
    cost: &Mat,
    eps: f64,
    rho1: f64,
    rho2: f64,
) -> Result<TransportPlan> {
    Ok(solve_uot_entropic_with(src, tgt, cost, eps, rho1, rho2, SinkhornOptions::default())?.plan)
}

pub fn solve_uot_entropic_with(
    src: &DiscreteMeasure,
    tgt: &DiscreteMeasure,
    cost: &Mat,
    eps: f64,
    rho1: f64,
    rho2: f64,
    opts: SinkhornOptions,
) -> Result<SinkhornOutput> {
    if !(rho1.is_finite() && rho2.is_finite()) {
        return Err(Error::invalid("rho must be finite; use solve_ot_entropic"));
    }
    solve(src, tgt, cost, eps, rho1, rho2, opts)
}

/// Balanced entropic OT (hard marginal constraints).
pub fn solve_ot_entropic(
    src: &DiscreteMeasure,
    tgt: &DiscreteMeasure,
    cost: &Mat,
    eps: f64,
    opts: SinkhornOptions,
) -> Result<SinkhornOutput> {
    let (ms, mt) = (src.mass(), tgt.mass());
    if (ms - mt).abs() > 1e-9 * ms.max(mt) {
        return Err(Error::invalid(format!("unbalanced masses {ms} vs {mt}")));
    }
    solve(src, tgt, cost, eps, f64::INFINITY, f64::INFINITY, opts)
}

/// `KL(p | q) = Σ p log(p/q) − p + q` with `0 log 0 = 0`.
pub fn kl_divergence(p: &[f64], q: &[f64]) -> f64 {
    p.iter()
        .zip(q)
        .map(|(&pi, &qi)| {
            let t = if pi > 0.0 { pi * (pi / qi).ln() } else { 0.0 };
            t - pi + qi
        })
        .sum()
}

/// The entropic UOT primal objective evaluated at an arbitrary plan.
pub fn uot_primal(
    plan: &Mat,
    a: &[f64],
    b: &[f64],
    cost: &Mat,
    eps: f64,
    rho1: f64,
    rho2: f64,
) -> Result<f64> {
    check_dim("plan rows", a.len(), plan.rows())?;
    check_dim("plan cols", b.len(), plan.cols())?;
    let mut transport = 0.0;
    let mut ab = Vec::with_capacity(a.len() * b.len());
    for i in 0..a.len() {
        for j in 0..b.len() {
            transport += cost.get(i, j) * plan.get(i, j);
            ab.push(a[i] * b[j]);
        }
    }
    let p = TransportPlan::from_matrix(plan.clone())?;
    Ok(transport
        + eps * kl_divergence(plan.data(), &ab)
        + rho1 * kl_divergence(&p.marginal_src, a)
        + rho2 * kl_divergence(&p.marginal_tgt, b))
}
