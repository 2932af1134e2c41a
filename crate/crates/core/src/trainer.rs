//! Alternating semi-dual training of the transport map `T` and potential `v`.
//!
//! Each iteration draws independent batches `Y ~ μ` and `X ~ ν`, takes
//! `map_updates_per_potential` Adam steps on
//!
//! ```text
//! L_T = mean_Y [ c(y, T(y)) − v(T(y)) ]
//! ```
//!
//! and then one Adam step on
//!
//! ```text
//! L_v = mean_Y Ψ*(−c(y, T(y)) + v(T(y))) + mean_X Ψ*(−v(x))
//! ```
//!
//! With `Ψ* = identity` this is the balanced OT objective; with `Ψ*(t) = eᵗ − 1`
//! the marginals are KL-relaxed.

use serde::{Deserialize, Serialize};

use crate::costs::{CostSpec, DivergenceConj};
use crate::error::{check_dim, Error, Result};
use crate::math::{dist_sq, Mat, Rng};
use crate::neural::{Activation, AdamState, FinalActivation, Grads, Mlp};

fn default_lr_potential() -> f64 {
    5.0e-5
}
fn default_lr_map() -> f64 {
    1.0e-4
}
fn default_batch_size() -> usize {
    32
}
fn default_one() -> usize {
    1
}
fn default_eval_every() -> usize {
    1000
}
fn default_hidden() -> Vec<usize> {
    vec![128, 128, 128]
}
fn default_activation() -> Activation {
    Activation::Silu
}
fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.999
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    #[serde(default = "default_lr_potential")]
    pub lr_potential: f64,
    #[serde(default = "default_lr_map")]
    pub lr_map: f64,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    pub iterations: usize,
    #[serde(default)]
    pub conj: DivergenceConj,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_one")]
    pub map_updates_per_potential: usize,
    #[serde(default = "default_eval_every")]
    pub eval_every: usize,
    /// Hidden widths of `T`.
    #[serde(default = "default_hidden")]
    pub map_hidden: Vec<usize>,
    /// Hidden widths of `v`.
    #[serde(default = "default_hidden")]
    pub potential_hidden: Vec<usize>,
    #[serde(default = "default_activation")]
    pub activation: Activation,
    #[serde(default)]
    pub map_final: FinalActivation,
    #[serde(default = "default_beta1")]
    pub beta1: f64,
    #[serde(default = "default_beta2")]
    pub beta2: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr_potential: default_lr_potential(),
            lr_map: default_lr_map(),
            batch_size: default_batch_size(),
            iterations: 0,
            conj: DivergenceConj::Kl,
            seed: 0,
            map_updates_per_potential: 1,
            eval_every: default_eval_every(),
            map_hidden: default_hidden(),
            potential_hidden: default_hidden(),
            activation: default_activation(),
            map_final: FinalActivation::None,
            beta1: default_beta1(),
            beta2: default_beta2(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, msg: &str| {
            Err(Error::Config {
                path: format!("train.{field}"),
                message: msg.to_string(),
            })
        };
        if !(self.lr_potential > 0.0 && self.lr_potential.is_finite()) {
            return bad("lr_potential", "must be positive");
        }
        if !(self.lr_map > 0.0 && self.lr_map.is_finite()) {
            return bad("lr_map", "must be positive");
        }
        if self.batch_size == 0 {
            return bad("batch_size", "must be >= 1");
        }
        if self.map_updates_per_potential == 0 {
            return bad("map_updates_per_potential", "must be >= 1");
        }
        if self.eval_every == 0 {
            return bad("eval_every", "must be >= 1");
        }
        if !(0.0..1.0).contains(&self.beta1) {
            return bad("beta1", "must lie in [0, 1)");
        }
        if !(0.0..1.0).contains(&self.beta2) {
            return bad("beta2", "must lie in [0, 1)");
        }
        if self.map_hidden.contains(&0) || self.potential_hidden.contains(&0) {
            return bad("map_hidden", "hidden widths must be positive");
        }
        Ok(())
    }
}

/// A network with its optimizer.
#[derive(Clone, Debug, PartialEq)]
pub struct Network {
    pub net: Mlp,
    pub opt: AdamState,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub step: usize,
    pub map_loss: f64,
    pub potential_loss: f64,
    pub mean_cost: f64,
    pub mean_data_fidelity: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainState {
    pub map: Network,
    pub potential: Network,
    pub step: usize,
    pub history: Vec<LossRecord>,
}

impl TrainState {
    /// Fresh networks: `T: R^{y_dim} → R^{x_dim}` and `v: R^{x_dim} → R`.
    pub fn init(config: &TrainConfig, y_dim: usize, x_dim: usize) -> Result<Self> {
        config.validate()?;
        let mut rng = Rng::stream(config.seed, 0);
        let dims = |input: usize, hidden: &[usize], output: usize| {
            let mut d = vec![input];
            d.extend_from_slice(hidden);
            d.push(output);
            d
        };
        let map_net = Mlp::new(
            &dims(y_dim, &config.map_hidden, x_dim),
            config.activation,
            config.map_final,
            &mut rng,
        )?;
        let pot_net = Mlp::new(
            &dims(x_dim, &config.potential_hidden, 1),
            config.activation,
            FinalActivation::None,
            &mut rng,
        )?;
        let eps = 1e-8;
        Ok(TrainState {
            map: Network {
                opt: AdamState::new(&map_net, config.lr_map, config.beta1, config.beta2, eps)?,
                net: map_net,
            },
            potential: Network {
                opt: AdamState::new(&pot_net, config.lr_potential, config.beta1, config.beta2, eps)?,
                net: pot_net,
            },
            step: 0,
            history: Vec::new(),
        })
    }

    pub fn map_loss(&self, ys: &Mat, spec: &CostSpec) -> Result<f64> {
        map_loss(&self.map.net, &self.potential.net, ys, spec)
    }

    pub fn potential_loss(
        &self,
        ys: &Mat,
        xs: &Mat,
        spec: &CostSpec,
        conj: DivergenceConj,
    ) -> Result<f64> {
        potential_loss(&self.map.net, &self.potential.net, ys, xs, spec, conj)
    }

    /// Apply the learned map to each row.
    pub fn transport(&self, ys: &Mat) -> Result<Mat> {
        self.map.net.forward_batch(ys)
    }
}

/// Source of training batches, one sample per row.
pub trait BatchSampler {
    fn dim(&self) -> usize;
    fn sample(&mut self, rng: &mut Rng, n: usize) -> Result<Mat>;
}

/// Finite pool sampled uniformly with replacement.
#[derive(Clone, Debug)]
pub struct Dataset {
    samples: Mat,
}

impl Dataset {
    pub fn new(samples: Mat) -> Self {
        Dataset { samples }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        Ok(Dataset::new(Mat::from_rows(rows)?))
    }

    pub fn samples(&self) -> &Mat {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.rows() == 0
    }
}

impl BatchSampler for Dataset {
    fn dim(&self) -> usize {
        self.samples.cols()
    }

    fn sample(&mut self, rng: &mut Rng, n: usize) -> Result<Mat> {
        let d = self.dim();
        let mut out = Mat::zeros(n, d);
        for i in 0..n {
            let j = rng.below(self.samples.rows());
            out.row_mut(i).copy_from_slice(self.samples.row(j));
        }
        Ok(out)
    }
}

/// Sampler backed by a closure drawing one sample at a time.
pub struct FnSampler<F> {
    dim: usize,
    draw: F,
}

impl<F: FnMut(&mut Rng) -> Result<Vec<f64>>> FnSampler<F> {
    pub fn new(dim: usize, draw: F) -> Self {
        FnSampler { dim, draw }
    }
}

impl<F: FnMut(&mut Rng) -> Result<Vec<f64>>> BatchSampler for FnSampler<F> {
    fn dim(&self) -> usize {
        self.dim
    }

    fn sample(&mut self, rng: &mut Rng, n: usize) -> Result<Mat> {
        let mut data = Vec::with_capacity(n * self.dim);
        for _ in 0..n {
            let v = (self.draw)(rng)?;
            check_dim("FnSampler", self.dim, v.len())?;
            data.extend(v);
        }
        Mat::from_vec(n, self.dim, data)
    }
}

fn finite(value: f64, what: &str) -> Result<f64> {
    if value.is_finite() {
        Ok(value)
    } else {
        Err(Error::NonFinite(format!("{what} = {value}")))
    }
}

/// Per-batch diagnostics from the map step.
#[derive(Clone, Copy, Debug)]
pub struct MapStats {
    pub loss: f64,
    pub mean_cost: f64,
    pub mean_data_fidelity: f64,
}

pub fn map_loss(map: &Mlp, potential: &Mlp, ys: &Mat, spec: &CostSpec) -> Result<f64> {
    if ys.rows() == 0 {
        return Err(Error::invalid("empty batch"));
    }
    let xhat = map.forward_batch(ys)?;
    let v = potential.forward_batch(&xhat)?;
    let mut total = 0.0;
    for i in 0..ys.rows() {
        total += spec.cost(ys.row(i), xhat.row(i))? - v.get(i, 0);
    }
    finite(total / ys.rows() as f64, "map loss")
}

/// `L_T` and its gradient with respect to the map parameters.
pub fn map_loss_and_grad(
    map: &Mlp,
    potential: &Mlp,
    ys: &Mat,
    spec: &CostSpec,
) -> Result<(MapStats, Grads)> {
    let b = ys.rows();
    if b == 0 {
        return Err(Error::invalid("empty batch"));
    }
    let inv_b = 1.0 / b as f64;
    let (xhat, cache_t) = map.forward_batch_cached(ys)?;
    let (v, cache_v) = potential.forward_batch_cached(&xhat)?;

    let mut upstream = Mat::zeros(b, xhat.cols());
    let mut cost_sum = 0.0;
    let mut fidelity_sum = 0.0;
    for i in 0..b {
        let (c, g) = spec.cost_and_grad_x(ys.row(i), xhat.row(i))?;
        cost_sum += c;
        fidelity_sum += dist_sq(&spec.op.apply(xhat.row(i))?, ys.row(i));
        for (u, gi) in upstream.row_mut(i).iter_mut().zip(g) {
            *u = gi * inv_b;
        }
    }
    let mut sum_v = 0.0;
    for i in 0..b {
        sum_v += v.get(i, 0);
    }
    // d(−mean v(T(y)))/dT(y)
    let up_v = Mat::from_fn(b, 1, |_, _| -inv_b);
    let (_, dv_dx) = potential.backward(&cache_v, &up_v)?;
    for (u, d) in upstream.data_mut().iter_mut().zip(dv_dx.data()) {
        *u += d;
    }
    let (grads, _) = map.backward(&cache_t, &upstream)?;
    let stats = MapStats {
        loss: finite((cost_sum - sum_v) * inv_b, "map loss")?,
        mean_cost: cost_sum * inv_b,
        mean_data_fidelity: fidelity_sum * inv_b,
    };
    Ok((stats, grads))
}

/// `L_v` from precomputed values: `t_i = −c_i + v(T(y_i))` and `v(x_j)`.
pub fn potential_objective(conj: DivergenceConj, t: &[f64], v_x: &[f64]) -> Result<f64> {
    if t.is_empty() || v_x.is_empty() {
        return Err(Error::invalid("empty batch"));
    }
    let mut a = 0.0;
    for &ti in t {
        a += conj.value(ti)?;
    }
    let mut b = 0.0;
    for &vj in v_x {
        b += conj.value(-vj)?;
    }
    finite(a / t.len() as f64 + b / v_x.len() as f64, "potential loss")
}

pub fn potential_loss(
    map: &Mlp,
    potential: &Mlp,
    ys: &Mat,
    xs: &Mat,
    spec: &CostSpec,
    conj: DivergenceConj,
) -> Result<f64> {
    if ys.rows() == 0 || xs.rows() == 0 {
        return Err(Error::invalid("empty batch"));
    }
    let xhat = map.forward_batch(ys)?;
    let v_t = potential.forward_batch(&xhat)?;
    let v_x = potential.forward_batch(xs)?;
    let mut t = Vec::with_capacity(ys.rows());
    for i in 0..ys.rows() {
        t.push(-spec.cost(ys.row(i), xhat.row(i))? + v_t.get(i, 0));
    }
    potential_objective(conj, &t, v_x.data())
}

/// `L_v` and its gradient with respect to the potential parameters (`T` frozen).
pub fn potential_loss_and_grad(
    map: &Mlp,
    potential: &Mlp,
    ys: &Mat,
    xs: &Mat,
    spec: &CostSpec,
    conj: DivergenceConj,
) -> Result<(f64, Grads)> {
    let (by, bx) = (ys.rows(), xs.rows());
    if by == 0 || bx == 0 {
        return Err(Error::invalid("empty batch"));
    }
    let xhat = map.forward_batch(ys)?;
    let (v_t, cache_t) = potential.forward_batch_cached(&xhat)?;
    let (v_x, cache_x) = potential.forward_batch_cached(xs)?;

    let mut t = Vec::with_capacity(by);
    let mut up_t = Mat::zeros(by, 1);
    for i in 0..by {
        let ti = -spec.cost(ys.row(i), xhat.row(i))? + v_t.get(i, 0);
        up_t.set(i, 0, conj.deriv(ti)? / by as f64);
        t.push(ti);
    }
    let mut up_x = Mat::zeros(bx, 1);
    for j in 0..bx {
        up_x.set(j, 0, -conj.deriv(-v_x.get(j, 0))? / bx as f64);
    }
    let loss = potential_objective(conj, &t, v_x.data())?;
    let mut grads = Grads::zeros_like(potential);
    potential.backward_into(&cache_t, &up_t, &mut grads)?;
    potential.backward_into(&cache_x, &up_x, &mut grads)?;
    Ok((loss, grads))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Divergence {
    pub step: usize,
    pub reason: String,
}

/// Result of a training run that may have stopped early.
#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// Final state, or the last good snapshot when training diverged. Its
    /// history always holds every record written before the abort.
    pub state: TrainState,
    pub divergence: Option<Divergence>,
}

impl TrainOutcome {
    pub fn into_result(self) -> Result<TrainState> {
        match self.divergence {
            None => Ok(self.state),
            Some(d) => Err(Error::Diverged {
                step: d.step,
                reason: d.reason,
            }),
        }
    }
}

/// Stateful driver owning the networks and the two data streams.
pub struct Trainer<'a> {
    config: &'a TrainConfig,
    spec: &'a CostSpec,
    state: TrainState,
    rng_y: Rng,
    rng_x: Rng,
}

impl<'a> Trainer<'a> {
    pub fn new(config: &'a TrainConfig, spec: &'a CostSpec) -> Result<Self> {
        let state = TrainState::init(config, spec.y_dim(), spec.x_dim())?;
        Ok(Trainer {
            config,
            spec,
            state,
            // measurement and signal batches come from disjoint substreams
            rng_y: Rng::stream(config.seed, 1),
            rng_x: Rng::stream(config.seed, 2),
        })
    }

    pub fn state(&self) -> &TrainState {
        &self.state
    }

    pub fn into_state(self) -> TrainState {
        self.state
    }

    /// One iteration: map update(s), then potential update.
    pub fn step(
        &mut self,
        mu: &mut dyn BatchSampler,
        nu: &mut dyn BatchSampler,
    ) -> Result<LossRecord> {
        let b = self.config.batch_size;
        let conj = self.config.conj;
        let mut last_map = None;
        let mut ys = mu.sample(&mut self.rng_y, b)?;
        for k in 0..self.config.map_updates_per_potential {
            if k > 0 {
                ys = mu.sample(&mut self.rng_y, b)?;
            }
            let (stats, grads) =
                map_loss_and_grad(&self.state.map.net, &self.state.potential.net, &ys, self.spec)?;
            let map = &mut self.state.map;
            map.opt.step(&mut map.net, &grads)?;
            last_map = Some(stats);
        }
        let xs = nu.sample(&mut self.rng_x, b)?;
        let (pot_loss, grads) = potential_loss_and_grad(
            &self.state.map.net,
            &self.state.potential.net,
            &ys,
            &xs,
            self.spec,
            conj,
        )?;
        let pot = &mut self.state.potential;
        pot.opt.step(&mut pot.net, &grads)?;

        self.state.step += 1;
        let stats = last_map.expect("at least one map update");
        let record = LossRecord {
            step: self.state.step,
            map_loss: stats.loss,
            potential_loss: pot_loss,
            mean_cost: stats.mean_cost,
            mean_data_fidelity: stats.mean_data_fidelity,
        };
        self.state.history.push(record);
        Ok(record)
    }
}

/// Run training to completion or divergence, calling `on_snapshot` every
/// `eval_every` steps and at the end.
pub fn train_with(
    config: &TrainConfig,
    mu: &mut dyn BatchSampler,
    nu: &mut dyn BatchSampler,
    spec: &CostSpec,
    on_snapshot: &mut dyn FnMut(&TrainState) -> Result<()>,
) -> Result<TrainOutcome> {
    check_dim("measurement sampler", spec.y_dim(), mu.dim())?;
    check_dim("signal sampler", spec.x_dim(), nu.dim())?;
    let mut trainer = Trainer::new(config, spec)?;
    let mut last_good = trainer.state().clone();
    let abort = |last_good: TrainState, trainer: &Trainer, step: usize, e: Error| {
        let mut state = last_good;
        state.history = trainer.state().history.clone();
        TrainOutcome {
            divergence: Some(Divergence { step, reason: e.to_string() }),
            state,
        }
    };
    for _ in 0..config.iterations {
        match trainer.step(mu, nu) {
            Ok(_) => {}
            Err(e) if e.is_divergence() || matches!(e, Error::InvalidArgument(_)) => {
                let step = trainer.state().step + 1;
                return Ok(abort(last_good, &trainer, step, e));
            }
            Err(e) => return Err(e),
        }
        let step = trainer.state().step;
        if step % config.eval_every == 0 || step == config.iterations {
            match on_snapshot(trainer.state()) {
                Ok(()) => last_good = trainer.state().clone(),
                // a snapshot whose evaluation blows up is not a good state
                Err(e) if e.is_divergence() => return Ok(abort(last_good, &trainer, step, e)),
                Err(e) => return Err(e),
            }
        }
    }
    Ok(TrainOutcome {
        state: trainer.into_state(),
        divergence: None,
    })
}

pub fn train(
    config: &TrainConfig,
    mu: &mut dyn BatchSampler,
    nu: &mut dyn BatchSampler,
    spec: &CostSpec,
) -> Result<TrainState> {
    train_with(config, mu, nu, spec, &mut |_| Ok(()))?.into_result()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::operators::CorruptionOp;

    fn tiny_config() -> TrainConfig {
        TrainConfig {
            iterations: 0,
            map_hidden: vec![8],
            potential_hidden: vec![8],
            batch_size: 4,
            seed: 3,
            ..TrainConfig::default()
        }
    }

    fn const_potential(dim: usize, value: f64) -> Mlp {
        let mut v = Mlp::zeros(&[dim, 1], Activation::Silu, FinalActivation::None).unwrap();
        v.bias_mut(0)[0] = value;
        v
    }

    /// Map with `T(y) = y + shift` (single linear layer).
    fn shift_map(dim: usize, shift: f64) -> Mlp {
        let mut t = Mlp::zeros(&[dim, dim], Activation::Silu, FinalActivation::None).unwrap();
        for i in 0..dim {
            t.weight_mut(0)[i * dim + i] = 1.0;
            t.bias_mut(0)[i] = shift;
        }
        t
    }

    #[test]
    fn map_loss_examples() {
        // c(y, T(y)) = τ‖T(y) − y‖² with T(y) = y + 1 in 2D → c = 2
        let spec = CostSpec::new(1.0, false, true, Default::default(), 1.0, CorruptionOp::Identity { dim: 2 }, None).unwrap();
        let t = shift_map(2, 1.0);
        let ys = Mat::from_rows(&[vec![0.3, -0.2]]).unwrap();
        let l = map_loss(&t, &const_potential(2, 0.5), &ys, &spec).unwrap();
        assert!((l - 1.5).abs() < 1e-15);
        let l0 = map_loss(&t, &const_potential(2, 0.0), &ys, &spec).unwrap();
        assert!((l0 - 2.0).abs() < 1e-15);
        assert!(map_loss(&t, &const_potential(2, 0.0), &Mat::zeros(0, 2), &spec).is_err());
    }

    #[test]
    fn potential_loss_examples() {
        let spec = CostSpec::new(1.0, false, true, Default::default(), 1.0, CorruptionOp::Identity { dim: 2 }, None).unwrap();
        let t = shift_map(2, 1.0);
        let ys = Mat::from_rows(&[vec![0.3, -0.2]]).unwrap();
        // c = 2, v(T(y)) = 0.5, v(x) = 0
        let t_val = -2.0 + 0.5;
        let kl = potential_objective(DivergenceConj::Kl, &[t_val], &[0.0]).unwrap();
        assert!((kl - ((-1.5f64).exp() - 1.0)).abs() < 1e-15);
        assert!((kl + 0.77687).abs() < 1e-5);
        let id = potential_objective(DivergenceConj::Identity, &[t_val], &[0.0]).unwrap();
        assert_eq!(id, -1.5);

        // v ≡ 0, c ≡ 0 → 0 under KL
        let zero_shift = shift_map(2, 0.0);
        let xs = Mat::from_rows(&[vec![1.0, 1.0], vec![-1.0, 0.5]]).unwrap();
        let l = potential_loss(&zero_shift, &const_potential(2, 0.0), &ys, &xs, &spec, DivergenceConj::Kl).unwrap();
        assert_eq!(l, 0.0);

        // the full path agrees with the objective for a constant potential
        let l = potential_loss(&t, &const_potential(2, 0.5), &ys, &xs, &spec, DivergenceConj::Kl).unwrap();
        let want = potential_objective(DivergenceConj::Kl, &[t_val], &[0.5, 0.5]).unwrap();
        assert!((l - want).abs() < 1e-15);
    }

    fn fd_check(params: &mut Vec<f64>, analytic: &[f64], mut f: impl FnMut(&[f64]) -> f64) {
        let h = 1e-6;
        let mut worst: f64 = 0.0;
        for i in 0..params.len() {
            let p0 = params[i];
            params[i] = p0 + h;
            let fp = f(params);
            params[i] = p0 - h;
            let fm = f(params);
            params[i] = p0;
            let num = (fp - fm) / (2.0 * h);
            let rel = (num - analytic[i]).abs() / (num.abs().max(analytic[i].abs()).max(1e-3));
            worst = worst.max(rel);
        }
        assert!(worst < 1e-4, "worst relative error {worst}");
    }

    fn fd_fixture() -> (TrainState, CostSpec, Mat, Mat) {
        let config = TrainConfig {
            map_hidden: vec![6, 6],
            potential_hidden: vec![6],
            ..tiny_config()
        };
        let op = CorruptionOp::from_spec(&crate::operators::OpSpec::AnalyticNonlinear {
            len: 3,
            scale: 0.5,
            kappa: 0.5,
            kernel_size: 3,
            sigma: 1.0,
        })
        .unwrap();
        let spec = CostSpec::full(0.7, op).unwrap();
        let state = TrainState::init(&config, 3, 3).unwrap();
        let mut rng = Rng::new(5);
        let ys = Mat::from_fn(5, 3, |_, _| rng.normal());
        let xs = Mat::from_fn(4, 3, |_, _| rng.normal());
        (state, spec, ys, xs)
    }

    #[test]
    fn map_gradient_matches_finite_differences() {
        let (state, spec, ys, _) = fd_fixture();
        let v = state.potential.net.clone();
        let (_, g) = map_loss_and_grad(&state.map.net, &v, &ys, &spec).unwrap();
        let mut t = state.map.net.clone();
        let mut params = t.params().to_vec();
        fd_check(&mut params, g.as_slice(), |p| {
            t.params_mut().copy_from_slice(p);
            map_loss(&t, &v, &ys, &spec).unwrap()
        });
    }

    #[test]
    fn potential_gradient_matches_finite_differences() {
        let (state, spec, ys, xs) = fd_fixture();
        let t = state.map.net.clone();
        for conj in [DivergenceConj::Kl, DivergenceConj::Identity] {
            let (_, g) = potential_loss_and_grad(&t, &state.potential.net, &ys, &xs, &spec, conj).unwrap();
            let mut v = state.potential.net.clone();
            let mut params = v.params().to_vec();
            fd_check(&mut params, g.as_slice(), |p| {
                v.params_mut().copy_from_slice(p);
                potential_loss(&t, &v, &ys, &xs, &spec, conj).unwrap()
            });
        }
    }

    #[test]
    fn potential_overflow_is_divergence() {
        let err = potential_objective(DivergenceConj::Kl, &[0.0], &[-40.0]).unwrap_err();
        assert!(err.is_divergence());
    }

    #[test]
    fn objective_shape_in_v_values() {
        let mut rng = Rng::new(12);
        for _ in 0..200 {
            let a: Vec<f64> = (0..3).map(|_| rng.uniform_range(-3.0, 3.0)).collect();
            let b: Vec<f64> = (0..3).map(|_| rng.uniform_range(-3.0, 3.0)).collect();
            let va: Vec<f64> = (0..2).map(|_| rng.uniform_range(-3.0, 3.0)).collect();
            let vb: Vec<f64> = (0..2).map(|_| rng.uniform_range(-3.0, 3.0)).collect();
            let mid = |p: &[f64], q: &[f64]| -> Vec<f64> { p.iter().zip(q).map(|(x, y)| 0.5 * (x + y)).collect() };
            for conj in [DivergenceConj::Kl, DivergenceConj::Identity] {
                let fa = potential_objective(conj, &a, &va).unwrap();
                let fb = potential_objective(conj, &b, &vb).unwrap();
                let fm = potential_objective(conj, &mid(&a, &b), &mid(&va, &vb)).unwrap();
                match conj {
                    DivergenceConj::Kl => assert!(fm <= 0.5 * (fa + fb) + 1e-12),
                    DivergenceConj::Identity => assert!((fm - 0.5 * (fa + fb)).abs() < 1e-12),
                }
            }
        }
    }

    #[test]
    fn zero_iterations_returns_initial_state() {
        let config = tiny_config();
        let spec = CostSpec::full(1.0, CorruptionOp::Identity { dim: 2 }).unwrap();
        let mut mu = FnSampler::new(2, |r: &mut Rng| Ok(vec![r.normal(), r.normal()]));
        let mut nu = FnSampler::new(2, |r: &mut Rng| Ok(vec![r.normal(), r.normal()]));
        let state = train(&config, &mut mu, &mut nu, &spec).unwrap();
        assert_eq!(state, TrainState::init(&config, 2, 2).unwrap());
        assert!(state.history.is_empty());
    }

    #[test]
    fn runs_are_seed_deterministic() {
        let config = TrainConfig { iterations: 25, ..tiny_config() };
        let spec = CostSpec::full(1.0, CorruptionOp::Identity { dim: 2 }).unwrap();
        let run = || {
            let mut mu = FnSampler::new(2, |r: &mut Rng| Ok(vec![r.normal(), r.normal()]));
            let mut nu = FnSampler::new(2, |r: &mut Rng| Ok(vec![r.normal() + 2.0, r.normal()]));
            train(&config, &mut mu, &mut nu, &spec).unwrap()
        };
        let (a, b) = (run(), run());
        assert_eq!(a.history.len(), 25);
        assert_eq!(a.history, b.history);
        assert_eq!(a.map.net, b.map.net);
        assert!(a.history.windows(2).all(|w| w[0].step < w[1].step));
    }

    #[test]
    fn snapshots_follow_eval_every() {
        let config = TrainConfig { iterations: 10, eval_every: 4, ..tiny_config() };
        let spec = CostSpec::full(1.0, CorruptionOp::Identity { dim: 2 }).unwrap();
        let mut mu = FnSampler::new(2, |r: &mut Rng| Ok(vec![r.normal(), r.normal()]));
        let mut nu = Dataset::from_rows(&[vec![0.0, 1.0], vec![1.0, 0.0]]).unwrap();
        let mut seen = Vec::new();
        train_with(&config, &mut mu, &mut nu, &spec, &mut |s| {
            seen.push(s.step);
            Ok(())
        })
        .unwrap();
        assert_eq!(seen, vec![4, 8, 10]);
    }

    #[test]
    fn divergence_keeps_last_good_state() {
        // A potential learning rate this large blows `v` up within a few steps.
        let config = TrainConfig {
            iterations: 200,
            eval_every: 1,
            lr_potential: 50.0,
            lr_map: 50.0,
            ..tiny_config()
        };
        let spec = CostSpec::full(1.0, CorruptionOp::Identity { dim: 2 }).unwrap();
        let mut mu = FnSampler::new(2, |r: &mut Rng| Ok(vec![10.0 * r.normal(), 10.0 * r.normal()]));
        let mut nu = FnSampler::new(2, |r: &mut Rng| Ok(vec![r.normal() + 20.0, r.normal()]));
        let out = train_with(&config, &mut mu, &mut nu, &spec, &mut |_| Ok(())).unwrap();
        let d = out.divergence.clone().expect("diverges");
        assert_eq!(out.state.step + 1, d.step);
        assert!(out.into_result().unwrap_err().is_divergence());
    }
}
