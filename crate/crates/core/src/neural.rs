//! Fully connected networks with exact reverse-mode gradients and Adam.
//!
//! Parameters live in one flat buffer (per layer: weight rows, then bias) so a
//! [`Grads`] buffer and the Adam moments share the same layout.

use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::math::{all_finite, gemm, Mat, Rng};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Tanh,
    Silu,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FinalActivation {
    #[default]
    None,
    Tanh,
}

#[inline]
fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

impl Activation {
    #[inline]
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Tanh => z.tanh(),
            Activation::Silu => z * sigmoid(z),
        }
    }

    #[inline]
    fn deriv(self, z: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => {
                let t = z.tanh();
                1.0 - t * t
            }
            Activation::Silu => {
                let s = sigmoid(z);
                s * (1.0 + z * (1.0 - s))
            }
        }
    }
}

impl FinalActivation {
    fn as_activation(self) -> Option<Activation> {
        match self {
            FinalActivation::None => None,
            FinalActivation::Tanh => Some(Activation::Tanh),
        }
    }
}

#[derive(Clone, Copy, Debug)]
struct LayerOffsets {
    weight: usize,
    bias: usize,
    fan_in: usize,
    fan_out: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    dims: Vec<usize>,
    params: Vec<f64>,
    activation: Activation,
    final_activation: FinalActivation,
}

/// Gradient buffer congruent with an [`Mlp`]'s flat parameter layout.
#[derive(Clone, Debug, PartialEq)]
pub struct Grads(pub Vec<f64>);

impl Grads {
    pub fn zeros_like(net: &Mlp) -> Self {
        Grads(vec![0.0; net.num_params()])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn add_assign(&mut self, other: &Grads) {
        for (a, b) in self.0.iter_mut().zip(&other.0) {
            *a += b;
        }
    }
}

/// Activations retained by a cached forward pass.
#[derive(Clone, Debug)]
pub struct ForwardCache {
    /// Input to each layer (batch × fan_in).
    inputs: Vec<Mat>,
    /// Pre-activation of each layer (batch × fan_out).
    pre: Vec<Mat>,
}

impl ForwardCache {
    pub fn batch(&self) -> usize {
        self.inputs.first().map_or(0, Mat::rows)
    }
}

fn layer_offsets(dims: &[usize]) -> Vec<LayerOffsets> {
    let mut out = Vec::with_capacity(dims.len().saturating_sub(1));
    let mut at = 0;
    for w in dims.windows(2) {
        let (fan_in, fan_out) = (w[0], w[1]);
        out.push(LayerOffsets {
            weight: at,
            bias: at + fan_in * fan_out,
            fan_in,
            fan_out,
        });
        at += fan_in * fan_out + fan_out;
    }
    out
}

fn param_count(dims: &[usize]) -> usize {
    dims.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
}

impl Mlp {
    /// All-zero network.
    pub fn zeros(
        dims: &[usize],
        activation: Activation,
        final_activation: FinalActivation,
    ) -> Result<Self> {
        if dims.len() < 2 || dims.contains(&0) {
            return Err(Error::invalid(format!(
                "layer dims must have >= 2 positive entries, got {dims:?}"
            )));
        }
        Ok(Mlp {
            dims: dims.to_vec(),
            params: vec![0.0; param_count(dims)],
            activation,
            final_activation,
        })
    }

    /// Kaiming-uniform fan-in initialization: weights ~ U(±√(6 / fan_in)), biases zero.
    pub fn new(
        dims: &[usize],
        activation: Activation,
        final_activation: FinalActivation,
        rng: &mut Rng,
    ) -> Result<Self> {
        let mut net = Mlp::zeros(dims, activation, final_activation)?;
        for l in layer_offsets(dims) {
            let bound = (6.0 / l.fan_in as f64).sqrt();
            for w in &mut net.params[l.weight..l.bias] {
                *w = rng.uniform_range(-bound, bound);
            }
        }
        Ok(net)
    }

    pub fn from_params(
        dims: &[usize],
        activation: Activation,
        final_activation: FinalActivation,
        params: Vec<f64>,
    ) -> Result<Self> {
        let mut net = Mlp::zeros(dims, activation, final_activation)?;
        check_dim("Mlp::from_params", net.params.len(), params.len())?;
        if !all_finite(&params) {
            return Err(Error::NonFinite("network parameters".into()));
        }
        net.params = params;
        Ok(net)
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn input_dim(&self) -> usize {
        self.dims[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.dims.last().expect("at least two dims")
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn final_activation(&self) -> FinalActivation {
        self.final_activation
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    /// Weight of layer `l` as an (fan_out × fan_in) row-major slice.
    pub fn weight(&self, l: usize) -> &[f64] {
        let o = layer_offsets(&self.dims)[l];
        &self.params[o.weight..o.bias]
    }

    pub fn weight_mut(&mut self, l: usize) -> &mut [f64] {
        let o = layer_offsets(&self.dims)[l];
        &mut self.params[o.weight..o.bias]
    }

    pub fn bias(&self, l: usize) -> &[f64] {
        let o = layer_offsets(&self.dims)[l];
        &self.params[o.bias..o.bias + o.fan_out]
    }

    pub fn bias_mut(&mut self, l: usize) -> &mut [f64] {
        let o = layer_offsets(&self.dims)[l];
        &mut self.params[o.bias..o.bias + o.fan_out]
    }

    fn layer_activation(&self, l: usize, n_layers: usize) -> Option<Activation> {
        if l + 1 == n_layers {
            self.final_activation.as_activation()
        } else {
            Some(self.activation)
        }
    }

    fn affine(&self, o: &LayerOffsets, input: &Mat) -> Mat {
        let batch = input.rows();
        let bias = &self.params[o.bias..o.bias + o.fan_out];
        let mut z = Mat::from_fn(batch, o.fan_out, |_, j| bias[j]);
        // z += input · Wᵀ
        gemm(
            batch,
            o.fan_in,
            o.fan_out,
            1.0,
            (input.data(), o.fan_in as isize, 1),
            (&self.params[o.weight..o.bias], 1, o.fan_in as isize),
            1.0,
            (z.data_mut(), o.fan_out as isize),
        );
        z
    }

    fn run(&self, input: &Mat, mut cache: Option<&mut ForwardCache>) -> Result<Mat> {
        check_dim("Mlp::forward", self.input_dim(), input.cols())?;
        let offsets = layer_offsets(&self.dims);
        let n_layers = offsets.len();
        let mut h = input.clone();
        for (l, o) in offsets.iter().enumerate() {
            let z = self.affine(o, &h);
            let mut next = z.clone();
            if let Some(act) = self.layer_activation(l, n_layers) {
                next.data_mut().iter_mut().for_each(|v| *v = act.apply(*v));
            }
            if let Some(c) = cache.as_deref_mut() {
                c.inputs.push(std::mem::replace(&mut h, next));
                c.pre.push(z);
            } else {
                h = next;
            }
        }
        Ok(h)
    }

    /// Forward pass over a batch (one sample per row).
    pub fn forward_batch(&self, input: &Mat) -> Result<Mat> {
        self.run(input, None)
    }

    pub fn forward_batch_cached(&self, input: &Mat) -> Result<(Mat, ForwardCache)> {
        let mut cache = ForwardCache {
            inputs: Vec::new(),
            pre: Vec::new(),
        };
        let out = self.run(input, Some(&mut cache))?;
        Ok((out, cache))
    }

    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>> {
        let x = Mat::from_vec(1, input.len(), input.to_vec())?;
        Ok(self.forward_batch(&x)?.into_data())
    }

    pub fn forward_cached(&self, input: &[f64]) -> Result<(Vec<f64>, ForwardCache)> {
        let x = Mat::from_vec(1, input.len(), input.to_vec())?;
        let (out, cache) = self.forward_batch_cached(&x)?;
        Ok((out.into_data(), cache))
    }

    /// Reverse pass for `⟨upstream, forward(input)⟩`, summed over the batch.
    /// Parameter gradients are added into `grads`; the input gradient is returned.
    pub fn backward_into(
        &self,
        cache: &ForwardCache,
        upstream: &Mat,
        grads: &mut Grads,
    ) -> Result<Mat> {
        let offsets = layer_offsets(&self.dims);
        let n_layers = offsets.len();
        if cache.pre.len() != n_layers {
            return Err(Error::invalid(
                "forward cache does not belong to this network",
            ));
        }
        check_dim("Mlp::backward grads", self.params.len(), grads.0.len())?;
        check_dim("Mlp::backward upstream", self.output_dim(), upstream.cols())?;
        check_dim("Mlp::backward batch", cache.batch(), upstream.rows())?;
        let batch = upstream.rows();

        let mut delta = upstream.clone();
        for l in (0..n_layers).rev() {
            let o = &offsets[l];
            let z = &cache.pre[l];
            check_dim("Mlp::backward cache", o.fan_out, z.cols())?;
            if let Some(act) = self.layer_activation(l, n_layers) {
                for (d, &zv) in delta.data_mut().iter_mut().zip(z.data()) {
                    *d *= act.deriv(zv);
                }
            }
            let input = &cache.inputs[l];
            // dW += deltaᵀ · input
            gemm(
                o.fan_out,
                batch,
                o.fan_in,
                1.0,
                (delta.data(), 1, o.fan_out as isize),
                (input.data(), o.fan_in as isize, 1),
                1.0,
                (&mut grads.0[o.weight..o.bias], o.fan_in as isize),
            );
            let db = &mut grads.0[o.bias..o.bias + o.fan_out];
            for row in delta.row_iter() {
                for (g, d) in db.iter_mut().zip(row) {
                    *g += d;
                }
            }
            // d(input) = delta · W
            let mut dx = Mat::zeros(batch, o.fan_in);
            gemm(
                batch,
                o.fan_out,
                o.fan_in,
                1.0,
                (delta.data(), o.fan_out as isize, 1),
                (&self.params[o.weight..o.bias], o.fan_in as isize, 1),
                0.0,
                (dx.data_mut(), o.fan_in as isize),
            );
            delta = dx;
        }
        Ok(delta)
    }

    pub fn backward(&self, cache: &ForwardCache, upstream: &Mat) -> Result<(Grads, Mat)> {
        let mut grads = Grads::zeros_like(self);
        let dx = self.backward_into(cache, upstream, &mut grads)?;
        Ok((grads, dx))
    }

    /// Write the checkpoint: one JSON header line, then little-endian f64 parameters.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_to(&mut file)?;
        file.flush()?;
        Ok(())
    }

    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        let header = CheckpointHeader {
            format: CHECKPOINT_FORMAT.to_string(),
            layer_dims: self.dims.clone(),
            activation: self.activation,
            final_activation: self.final_activation,
            param_count: self.params.len(),
        };
        serde_json::to_writer(&mut *w, &header)?;
        w.write_all(b"\n")?;
        for p in &self.params {
            w.write_all(&p.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        Mlp::read_from(BufReader::new(file))
    }

    pub fn read_from<R: BufRead>(mut r: R) -> Result<Self> {
        let mut line = String::new();
        r.read_line(&mut line)?;
        let header: CheckpointHeader = serde_json::from_str(line.trim_end())
            .map_err(|e| Error::Checkpoint(format!("bad header: {e}")))?;
        if header.format != CHECKPOINT_FORMAT {
            return Err(Error::Checkpoint(format!(
                "unsupported format {:?}",
                header.format
            )));
        }
        if header.param_count != param_count(&header.layer_dims) {
            return Err(Error::Checkpoint(
                "param_count disagrees with layer_dims".into(),
            ));
        }
        let mut bytes = vec![0u8; header.param_count * 8];
        r.read_exact(&mut bytes)
            .map_err(|e| Error::Checkpoint(format!("truncated parameters: {e}")))?;
        if r.read(&mut [0u8; 1])? != 0 {
            return Err(Error::Checkpoint("trailing bytes after parameters".into()));
        }
        let params = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        Mlp::from_params(
            &header.layer_dims,
            header.activation,
            header.final_activation,
            params,
        )
    }
}

const CHECKPOINT_FORMAT: &str = "uot-lab-mlp/1";

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CheckpointHeader {
    format: String,
    layer_dims: Vec<usize>,
    activation: Activation,
    final_activation: FinalActivation,
    param_count: usize,
}

/// Bias-corrected Adam moments for one network.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: u64,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl AdamState {
    pub fn new(net: &Mlp, lr: f64, beta1: f64, beta2: f64, eps: f64) -> Result<Self> {
        if !(lr >= 0.0 && lr.is_finite()) || !(0.0..1.0).contains(&beta1) || !(0.0..1.0).contains(&beta2) || !(eps > 0.0) {
            return Err(Error::invalid(format!(
                "bad Adam hyperparameters lr={lr} beta1={beta1} beta2={beta2} eps={eps}"
            )));
        }
        Ok(AdamState {
            lr,
            beta1,
            beta2,
            eps,
            t: 0,
            m: vec![0.0; net.num_params()],
            v: vec![0.0; net.num_params()],
        })
    }

    pub fn with_lr(net: &Mlp, lr: f64) -> Result<Self> {
        AdamState::new(net, lr, 0.9, 0.999, 1e-8)
    }

    pub fn step_count(&self) -> u64 {
        self.t
    }

    pub fn step(&mut self, net: &mut Mlp, grads: &Grads) -> Result<()> {
        check_dim("adam_step", self.m.len(), grads.0.len())?;
        check_dim("adam_step", net.params.len(), grads.0.len())?;
        if let Some(i) = grads.0.iter().position(|g| !g.is_finite()) {
            return Err(Error::NonFinite(format!(
                "gradient entry {i} = {} at Adam step {}",
                grads.0[i],
                self.t + 1
            )));
        }
        self.t += 1;
        let t = self.t as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for (((p, g), m), v) in net
            .params
            .iter_mut()
            .zip(&grads.0)
            .zip(&mut self.m)
            .zip(&mut self.v)
        {
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *p -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_row(v: &[f64]) -> Mat {
        Mat::from_vec(1, v.len(), v.to_vec()).unwrap()
    }

    /// Central-difference gradient of `⟨upstream, net(x)⟩` w.r.t. every parameter.
    fn fd_param_grad(net: &Mlp, x: &Mat, upstream: &Mat, h: f64) -> Vec<f64> {
        let f = |n: &Mlp| -> f64 {
            let out = n.forward_batch(x).unwrap();
            out.data().iter().zip(upstream.data()).map(|(a, b)| a * b).sum()
        };
        (0..net.num_params())
            .map(|i| {
                let mut plus = net.clone();
                plus.params_mut()[i] += h;
                let mut minus = net.clone();
                minus.params_mut()[i] -= h;
                (f(&plus) - f(&minus)) / (2.0 * h)
            })
            .collect()
    }

    fn max_rel_err(a: &[f64], b: &[f64]) -> f64 {
        let scale = a.iter().chain(b).fold(0.0f64, |m, v| m.max(v.abs())).max(1e-12);
        a.iter()
            .zip(b)
            .map(|(x, y)| (x - y).abs() / scale.max(x.abs().max(y.abs())))
            .fold(0.0, f64::max)
    }

    #[test]
    fn zero_net_outputs_zero() {
        let net = Mlp::zeros(&[3, 4, 2], Activation::Silu, FinalActivation::None).unwrap();
        assert_eq!(net.forward(&[1.0, -2.0, 5.0]).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn single_linear_layer() {
        let net =
            Mlp::from_params(&[1, 1], Activation::Relu, FinalActivation::None, vec![2.0, 1.0])
                .unwrap();
        assert_eq!(net.forward(&[3.0]).unwrap(), vec![7.0]);
        assert!(matches!(net.forward(&[1.0, 2.0]), Err(Error::Dim { .. })));
    }

    #[test]
    fn relu_layer_clamps_negatives() {
        // identity affine into ReLU, then identity affine out
        let mut net = Mlp::zeros(&[2, 2, 2], Activation::Relu, FinalActivation::None).unwrap();
        net.weight_mut(0).copy_from_slice(&[1.0, 0.0, 0.0, 1.0]);
        net.weight_mut(1).copy_from_slice(&[1.0, 0.0, 0.0, 1.0]);
        assert_eq!(net.forward(&[-1.0, 2.0]).unwrap(), vec![0.0, 2.0]);
    }

    #[test]
    fn linear_gradient_is_outer_product() {
        let mut net = Mlp::zeros(&[3, 2], Activation::Tanh, FinalActivation::None).unwrap();
        net.weight_mut(0).copy_from_slice(&[1.0, 2.0, 3.0, -1.0, 0.5, 0.0]);
        let x = [0.5, -1.0, 2.0];
        let up = [3.0, -2.0];
        let (_, cache) = net.forward_cached(&x).unwrap();
        let (g, dx) = net.backward(&cache, &one_row(&up)).unwrap();
        let want: Vec<f64> = up.iter().flat_map(|u| x.iter().map(move |xi| u * xi)).collect();
        assert_eq!(&g.0[..6], &want[..]);
        assert_eq!(&g.0[6..], &up[..]);
        // dx = Wᵀ up
        assert_eq!(dx.data(), &[3.0 + 2.0, 6.0 - 1.0, 9.0]);
    }

    #[test]
    fn identity_net_input_grad_is_upstream() {
        let mut net = Mlp::zeros(&[2, 2], Activation::Silu, FinalActivation::None).unwrap();
        net.weight_mut(0).copy_from_slice(&[1.0, 0.0, 0.0, 1.0]);
        let (_, cache) = net.forward_cached(&[0.3, 0.7]).unwrap();
        let (_, dx) = net.backward(&cache, &one_row(&[0.25, -4.0])).unwrap();
        assert_eq!(dx.data(), &[0.25, -4.0]);
    }

    #[test]
    fn backward_rejects_foreign_cache() {
        let a = Mlp::zeros(&[2, 3, 2], Activation::Silu, FinalActivation::None).unwrap();
        let b = Mlp::zeros(&[2, 2], Activation::Silu, FinalActivation::None).unwrap();
        let (_, cache) = b.forward_cached(&[1.0, 1.0]).unwrap();
        assert!(a.backward(&cache, &one_row(&[1.0, 1.0])).is_err());
    }

    #[test]
    fn finite_difference_all_parameters() {
        for (act, fin) in [
            (Activation::Silu, FinalActivation::None),
            (Activation::Tanh, FinalActivation::Tanh),
            (Activation::Relu, FinalActivation::None),
        ] {
            let mut rng = Rng::new(17);
            let net = Mlp::new(&[2, 16, 16, 2], act, fin, &mut rng).unwrap();
            let x = Mat::from_fn(3, 2, |_, _| rng.normal());
            let up = Mat::from_fn(3, 2, |_, _| rng.normal());
            let (_, cache) = net.forward_batch_cached(&x).unwrap();
            let (g, dx) = net.backward(&cache, &up).unwrap();
            let fd = fd_param_grad(&net, &x, &up, 1e-5);
            let err = max_rel_err(&g.0, &fd);
            assert!(err < 1e-5, "{act:?}: param rel err {err}");

            // input gradient
            let mut fd_x = Vec::new();
            for i in 0..x.data().len() {
                let mut p = x.clone();
                p.data_mut()[i] += 1e-5;
                let mut m = x.clone();
                m.data_mut()[i] -= 1e-5;
                let f = |z: &Mat| -> f64 {
                    net.forward_batch(z).unwrap().data().iter().zip(up.data()).map(|(a, b)| a * b).sum()
                };
                fd_x.push((f(&p) - f(&m)) / 2e-5);
            }
            assert!(max_rel_err(dx.data(), &fd_x) < 1e-5);
        }
    }

    #[test]
    fn adam_first_step() {
        let mut net = Mlp::zeros(&[1, 1], Activation::Silu, FinalActivation::None).unwrap();
        let mut adam = AdamState::new(&net, 0.1, 0.9, 0.999, 1e-8).unwrap();
        adam.step(&mut net, &Grads(vec![1.0, 1.0])).unwrap();
        for p in net.params() {
            assert!((p + 0.1).abs() < 1e-8, "{p}");
        }
        assert_eq!(adam.step_count(), 1);
        // second identical gradient: m̂ = v̂ = 1 again, so the step is lr once more
        let before = net.params()[0];
        adam.step(&mut net, &Grads(vec![1.0, 1.0])).unwrap();
        assert!(((before - net.params()[0]) - 0.1).abs() < 1e-8);
    }

    #[test]
    fn adam_zero_gradient_and_zero_lr() {
        let mut rng = Rng::new(2);
        let mut net = Mlp::new(&[2, 4, 1], Activation::Silu, FinalActivation::None, &mut rng).unwrap();
        let before = net.clone();
        let mut adam = AdamState::with_lr(&net, 0.01).unwrap();
        adam.step(&mut net, &Grads::zeros_like(&before)).unwrap();
        assert_eq!(net, before);

        let mut frozen = AdamState::new(&net, 0.0, 0.9, 0.999, 1e-8).unwrap();
        let g = Grads((0..net.num_params()).map(|i| i as f64 - 3.0).collect());
        frozen.step(&mut net, &g).unwrap();
        assert_eq!(net.params(), before.params());
    }

    #[test]
    fn adam_rejects_non_finite() {
        let mut net = Mlp::zeros(&[1, 1], Activation::Silu, FinalActivation::None).unwrap();
        let mut adam = AdamState::with_lr(&net, 0.1).unwrap();
        let err = adam.step(&mut net, &Grads(vec![f64::NAN, 0.0])).unwrap_err();
        assert!(err.to_string().contains("gradient entry 0"));
    }

    #[test]
    fn checkpoint_round_trip() {
        let mut rng = Rng::new(8);
        let net = Mlp::new(&[3, 5, 2], Activation::Tanh, FinalActivation::Tanh, &mut rng).unwrap();
        let mut buf = Vec::new();
        net.write_to(&mut buf).unwrap();
        let back = Mlp::read_from(&buf[..]).unwrap();
        assert_eq!(back, net);

        let newline = buf.iter().position(|&b| b == b'\n').unwrap();
        assert_eq!(buf.len() - newline - 1, net.num_params() * 8);
        assert!(Mlp::read_from(&buf[..buf.len() - 3]).is_err());
    }
}
