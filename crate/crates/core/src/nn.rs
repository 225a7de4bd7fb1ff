//! Dense tanh networks with hand-written reverse mode, diagonal Gaussian
//! helpers and Adam.
//!
//! Parameters of a [`DenseNet`] live in one flat vector. Layer `l` owns a
//! weight block laid out `[fan_in][fan_out]` followed by its bias block, so
//! gradients, Adam moments and finite-difference probes all share the same
//! indexing.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};

pub const OBS_DIM: usize = 6;
pub const ACTION_DIM: usize = 2;

/// ln(2π)
pub const LN_2PI: f64 = 1.837_877_066_409_345_3;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetSpec {
    pub input_dim: usize,
    pub hidden: Vec<usize>,
    pub output_dim: usize,
}

impl NetSpec {
    pub fn new(input_dim: usize, hidden: Vec<usize>, output_dim: usize) -> Result<Self> {
        if hidden.is_empty() {
            return Err(Error::Config("network needs at least one hidden layer".into()));
        }
        if input_dim == 0 || output_dim == 0 || hidden.contains(&0) {
            return Err(Error::Config("network dimensions must be positive".into()));
        }
        Ok(Self {
            input_dim,
            hidden,
            output_dim,
        })
    }

    /// `(fan_in, fan_out)` per layer, output layer last.
    pub fn layer_dims(&self) -> Vec<(usize, usize)> {
        let mut dims = Vec::with_capacity(self.hidden.len() + 1);
        let mut prev = self.input_dim;
        for &h in &self.hidden {
            dims.push((prev, h));
            prev = h;
        }
        dims.push((prev, self.output_dim));
        dims
    }

    pub fn num_params(&self) -> usize {
        self.layer_dims().iter().map(|(i, o)| i * o + o).sum()
    }
}

/// Which policy assembly a parameter count refers to.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum HeadLayout {
    /// Actor `6→hidden→2` and critic `6→hidden→1`, plus the shared log-std.
    ActorCriticSeparate,
    /// One trunk `6→hidden→3` (two action means and a value), plus log-std.
    CombinedDistilled,
}

/// Trainable parameter total of a policy with the given hidden layers,
/// including the state-independent log-std entries.
pub fn param_count(hidden: &[usize], layout: HeadLayout) -> usize {
    let net = |out: usize| {
        let mut total = 0;
        let mut prev = OBS_DIM;
        for &h in hidden.iter().chain(std::iter::once(&out)) {
            total += prev * h + h;
            prev = h;
        }
        total
    };
    match layout {
        HeadLayout::ActorCriticSeparate => net(ACTION_DIM) + net(1) + ACTION_DIM,
        HeadLayout::CombinedDistilled => net(ACTION_DIM + 1) + ACTION_DIM,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
struct Layer {
    fan_in: usize,
    fan_out: usize,
    w_off: usize,
    b_off: usize,
}

impl Layer {
    fn end(&self) -> usize {
        self.b_off + self.fan_out
    }
}

fn build_layers(spec: &NetSpec) -> Vec<Layer> {
    let mut off = 0;
    spec.layer_dims()
        .into_iter()
        .map(|(fan_in, fan_out)| {
            let layer = Layer {
                fan_in,
                fan_out,
                w_off: off,
                b_off: off + fan_in * fan_out,
            };
            off = layer.end();
            layer
        })
        .collect()
}

#[derive(Serialize, Deserialize)]
struct DenseNetData {
    spec: NetSpec,
    params: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "DenseNetData", into = "DenseNetData")]
pub struct DenseNet {
    spec: NetSpec,
    params: Vec<f64>,
    layers: Vec<Layer>,
}

impl TryFrom<DenseNetData> for DenseNet {
    type Error = Error;

    fn try_from(data: DenseNetData) -> Result<Self> {
        DenseNet::from_params(data.spec, data.params)
    }
}

impl From<DenseNet> for DenseNetData {
    fn from(net: DenseNet) -> Self {
        DenseNetData {
            spec: net.spec,
            params: net.params,
        }
    }
}

/// Post-activation values of every layer from one forward pass, input first.
#[derive(Clone, Debug)]
pub struct ForwardCache {
    activations: Vec<Vec<f64>>,
}

impl ForwardCache {
    pub fn output(&self) -> &[f64] {
        self.activations.last().expect("cache holds at least the input")
    }

    pub fn input(&self) -> &[f64] {
        &self.activations[0]
    }
}

#[derive(Clone, Debug)]
pub struct Backward {
    pub param_grads: Vec<f64>,
    pub input_grad: Vec<f64>,
}

impl DenseNet {
    pub fn zeros(spec: NetSpec) -> Self {
        let params = vec![0.0; spec.num_params()];
        let layers = build_layers(&spec);
        Self {
            spec,
            params,
            layers,
        }
    }

    pub fn from_params(spec: NetSpec, params: Vec<f64>) -> Result<Self> {
        check_len("parameter vector", spec.num_params(), params.len())?;
        if params.iter().any(|p| !p.is_finite()) {
            return Err(Error::Config("network parameters must be finite".into()));
        }
        let layers = build_layers(&spec);
        Ok(Self {
            spec,
            params,
            layers,
        })
    }

    /// Orthogonal initialization: each weight matrix has orthonormal rows or
    /// columns scaled by `hidden_gain` (hidden layers) or by the per-unit
    /// `output_gains` (output layer). Biases start at zero.
    pub fn orthogonal<R: Rng + ?Sized>(
        spec: NetSpec,
        hidden_gain: f64,
        output_gains: &[f64],
        rng: &mut R,
    ) -> Self {
        assert_eq!(output_gains.len(), spec.output_dim, "one gain per output unit");
        let mut net = Self::zeros(spec);
        let n_layers = net.layers.len();
        for (l, layer) in net.layers.clone().into_iter().enumerate() {
            let q = orthogonal_matrix(layer.fan_out, layer.fan_in, rng);
            for j in 0..layer.fan_out {
                let gain = if l + 1 == n_layers {
                    output_gains[j]
                } else {
                    hidden_gain
                };
                for i in 0..layer.fan_in {
                    net.params[layer.w_off + i * layer.fan_out + j] = gain * q[j * layer.fan_in + i];
                }
            }
        }
        net
    }

    pub fn spec(&self) -> &NetSpec {
        &self.spec
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    /// Index of the layer owning flat parameter `index`.
    pub fn layer_of(&self, index: usize) -> usize {
        self.layers
            .iter()
            .position(|l| index < l.end())
            .unwrap_or(self.layers.len().saturating_sub(1))
    }

    /// Parameter range `(start, end)` of weights or biases of layer `l`.
    pub fn weight_range(&self, l: usize) -> std::ops::Range<usize> {
        self.layers[l].w_off..self.layers[l].b_off
    }

    pub fn bias_range(&self, l: usize) -> std::ops::Range<usize> {
        self.layers[l].b_off..self.layers[l].end()
    }

    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>> {
        check_len("network input", self.spec.input_dim, input.len())?;
        let mut x = input.to_vec();
        let last = self.layers.len() - 1;
        for (l, layer) in self.layers.iter().enumerate() {
            let mut z = self.affine(layer, &x);
            if l != last {
                z.iter_mut().for_each(|v| *v = v.tanh());
            }
            x = z;
        }
        Ok(x)
    }

    pub fn forward_cached(&self, input: &[f64]) -> Result<ForwardCache> {
        check_len("network input", self.spec.input_dim, input.len())?;
        let mut activations = Vec::with_capacity(self.layers.len() + 1);
        activations.push(input.to_vec());
        let last = self.layers.len() - 1;
        for (l, layer) in self.layers.iter().enumerate() {
            let mut z = self.affine(layer, activations.last().unwrap());
            if l != last {
                z.iter_mut().for_each(|v| *v = v.tanh());
            }
            activations.push(z);
        }
        Ok(ForwardCache { activations })
    }

    fn affine(&self, layer: &Layer, x: &[f64]) -> Vec<f64> {
        let mut z = self.params[layer.b_off..layer.end()].to_vec();
        let w = &self.params[layer.w_off..layer.b_off];
        for (i, &xi) in x.iter().enumerate() {
            let row = &w[i * layer.fan_out..(i + 1) * layer.fan_out];
            for (zj, &wij) in z.iter_mut().zip(row) {
                *zj += xi * wij;
            }
        }
        z
    }

    /// Reverse pass through a cached forward. Parameter gradients are
    /// accumulated into `grads`; the input gradient is returned.
    pub fn backward_into(
        &self,
        cache: &ForwardCache,
        output_grad: &[f64],
        grads: &mut [f64],
    ) -> Result<Vec<f64>> {
        check_len("output gradient", self.spec.output_dim, output_grad.len())?;
        check_len("gradient buffer", self.params.len(), grads.len())?;
        let last = self.layers.len() - 1;
        let mut delta = output_grad.to_vec();
        for l in (0..self.layers.len()).rev() {
            let layer = &self.layers[l];
            if l != last {
                let a = &cache.activations[l + 1];
                for (d, &aj) in delta.iter_mut().zip(a) {
                    *d *= 1.0 - aj * aj;
                }
            }
            let a_prev = &cache.activations[l];
            for (gb, &d) in grads[layer.b_off..layer.end()].iter_mut().zip(&delta) {
                *gb += d;
            }
            let gw = &mut grads[layer.w_off..layer.b_off];
            for (i, &ai) in a_prev.iter().enumerate() {
                let row = &mut gw[i * layer.fan_out..(i + 1) * layer.fan_out];
                for (g, &d) in row.iter_mut().zip(&delta) {
                    *g += ai * d;
                }
            }
            let w = &self.params[layer.w_off..layer.b_off];
            let mut prev = vec![0.0; layer.fan_in];
            for (i, p) in prev.iter_mut().enumerate() {
                let row = &w[i * layer.fan_out..(i + 1) * layer.fan_out];
                *p = row.iter().zip(&delta).map(|(wij, d)| wij * d).sum();
            }
            delta = prev;
        }
        Ok(delta)
    }

    pub fn backward(&self, input: &[f64], output_grad: &[f64]) -> Result<Backward> {
        let cache = self.forward_cached(input)?;
        let mut param_grads = vec![0.0; self.params.len()];
        let input_grad = self.backward_into(&cache, output_grad, &mut param_grads)?;
        Ok(Backward {
            param_grads,
            input_grad,
        })
    }

    /// Adam update; a non-finite gradient rejects the whole step and names
    /// the first offending layer.
    pub fn adam_step(&mut self, grads: &[f64], adam: &mut Adam) -> Result<()> {
        check_len("gradient", self.params.len(), grads.len())?;
        if let Some(bad) = grads.iter().position(|g| !g.is_finite()) {
            return Err(Error::NonFiniteGradient {
                layer: self.layer_of(bad),
            });
        }
        adam.step(&mut self.params, grads)
    }
}

fn orthogonal_matrix<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> Vec<f64> {
    // Gram-Schmidt on the shorter side of a Gaussian matrix.
    let (long, short) = (rows.max(cols), rows.min(cols));
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(short);
    while basis.len() < short {
        let mut v: Vec<f64> = (0..long).map(|_| rng.sample(StandardNormal)).collect();
        for b in &basis {
            let dot: f64 = v.iter().zip(b).map(|(x, y)| x * y).sum();
            v.iter_mut().zip(b).for_each(|(x, y)| *x -= dot * y);
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-8 {
            v.iter_mut().for_each(|x| *x /= norm);
            basis.push(v);
        }
    }
    let mut out = vec![0.0; rows * cols];
    for r in 0..rows {
        for c in 0..cols {
            out[r * cols + c] = if rows >= cols { basis[c][r] } else { basis[r][c] };
        }
    }
    out
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    first_moment: Vec<f64>,
    second_moment: Vec<f64>,
    step_count: u64,
}

impl Adam {
    pub fn new(num_params: usize, lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            first_moment: vec![0.0; num_params],
            second_moment: vec![0.0; num_params],
            step_count: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) -> Result<()> {
        check_len("adam parameters", self.first_moment.len(), params.len())?;
        check_len("adam gradients", self.first_moment.len(), grads.len())?;
        if grads.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFiniteGradient { layer: 0 });
        }
        self.step_count += 1;
        let t = self.step_count as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        for (((p, &g), m), v) in params
            .iter_mut()
            .zip(grads)
            .zip(self.first_moment.iter_mut())
            .zip(self.second_moment.iter_mut())
        {
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            let m_hat = *m / bc1;
            let v_hat = *v / bc2;
            *p -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
        }
        Ok(())
    }
}

/// Log density of a diagonal Gaussian.
pub fn gaussian_logprob(mean: &[f64], log_std: &[f64], action: &[f64]) -> Result<f64> {
    check_len("log_std", mean.len(), log_std.len())?;
    check_len("action", mean.len(), action.len())?;
    Ok(mean
        .iter()
        .zip(log_std)
        .zip(action)
        .map(|((&m, &s), &a)| {
            let z = (a - m) * (-s).exp();
            -0.5 * z * z - s - 0.5 * LN_2PI
        })
        .sum())
}

/// Gradient of [`gaussian_logprob`] with respect to `(mean, log_std)`.
pub fn gaussian_logprob_grad(mean: &[f64], log_std: &[f64], action: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let mut d_mean = Vec::with_capacity(mean.len());
    let mut d_log_std = Vec::with_capacity(mean.len());
    for ((&m, &s), &a) in mean.iter().zip(log_std).zip(action) {
        let inv_var = (-2.0 * s).exp();
        let diff = a - m;
        d_mean.push(diff * inv_var);
        d_log_std.push(diff * diff * inv_var - 1.0);
    }
    (d_mean, d_log_std)
}

/// Differential entropy of a diagonal Gaussian; its gradient is 1 per log-std entry.
pub fn gaussian_entropy(log_std: &[f64]) -> f64 {
    log_std.iter().map(|s| s + 0.5 * (1.0 + LN_2PI)).sum()
}

pub fn gaussian_sample<R: Rng + ?Sized>(mean: &[f64], log_std: &[f64], rng: &mut R) -> Vec<f64> {
    mean.iter()
        .zip(log_std)
        .map(|(&m, &s)| {
            let z: f64 = rng.sample(StandardNormal);
            m + s.exp() * z
        })
        .collect()
}

/// `exp(logprob)`.
pub fn gaussian_density(mean: &[f64], log_std: &[f64], action: &[f64]) -> Result<f64> {
    gaussian_logprob(mean, log_std, action).map(f64::exp)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    fn spec(input: usize, hidden: &[usize], out: usize) -> NetSpec {
        NetSpec::new(input, hidden.to_vec(), out).unwrap()
    }

    fn random_net(s: NetSpec, seed: u64) -> DenseNet {
        let mut r = rng::stream(seed, "test");
        let params = (0..s.num_params()).map(|_| r.gen_range(-0.8..0.8)).collect();
        DenseNet::from_params(s, params).unwrap()
    }

    /// Naive forward with explicit matrices W[out][in], independent of the
    /// flat-buffer path.
    fn naive_forward(net: &DenseNet, x: &[f64]) -> Vec<f64> {
        let dims = net.spec().layer_dims();
        let p = net.params();
        let mut off = 0;
        let mut a = x.to_vec();
        for (l, &(fan_in, fan_out)) in dims.iter().enumerate() {
            let mut w = vec![vec![0.0; fan_in]; fan_out];
            for i in 0..fan_in {
                for j in 0..fan_out {
                    w[j][i] = p[off + i * fan_out + j];
                }
            }
            off += fan_in * fan_out;
            let b = &p[off..off + fan_out];
            off += fan_out;
            let mut z = vec![0.0; fan_out];
            for j in 0..fan_out {
                let mut s = 0.0;
                for i in 0..fan_in {
                    s += w[j][i] * a[i];
                }
                z[j] = s + b[j];
                if l + 1 < dims.len() {
                    z[j] = z[j].tanh();
                }
            }
            a = z;
        }
        a
    }

    #[test]
    fn netspec_rejects_empty_hidden() {
        assert!(NetSpec::new(6, vec![], 2).is_err());
        assert!(NetSpec::new(6, vec![0], 2).is_err());
    }

    #[test]
    fn zero_net_outputs_zero() {
        let net = DenseNet::zeros(spec(6, &[64, 64], 3));
        assert_eq!(net.forward(&[1.0, -2.0, 3.0, 0.5, 0.1, 9.0]).unwrap(), vec![0.0; 3]);
    }

    #[test]
    fn dead_hidden_unit_passes_output_bias() {
        let mut net = DenseNet::zeros(spec(2, &[1], 2));
        let b = net.bias_range(1);
        net.params_mut()[b.start] = 0.25;
        net.params_mut()[b.start + 1] = -1.5;
        assert_eq!(net.forward(&[3.0, 4.0]).unwrap(), vec![0.25, -1.5]);
    }

    #[test]
    fn forward_matches_naive_oracle() {
        let net = random_net(spec(6, &[64, 64], 3), 11);
        let x = [0.3, -0.7, 0.1, 0.9, -0.2, 0.5];
        let fast = net.forward(&x).unwrap();
        let slow = naive_forward(&net, &x);
        for (a, b) in fast.iter().zip(&slow) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn forward_rejects_bad_input() {
        let net = DenseNet::zeros(spec(6, &[8], 2));
        assert!(matches!(net.forward(&[0.0; 5]), Err(Error::Dimension { .. })));
    }

    #[test]
    fn zero_output_grad_gives_zero_param_grads() {
        let net = random_net(spec(6, &[16], 3), 2);
        let bw = net.backward(&[0.1; 6], &[0.0; 3]).unwrap();
        assert!(bw.param_grads.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn linear_unit_gradient_is_analytic() {
        // y = w·tanh-free path is impossible with a hidden layer, so check
        // the output layer block: dW_out = hidden activation, db_out = 1.
        let net = random_net(spec(3, &[4], 1), 5);
        let x = [0.2, -0.4, 0.6];
        let cache = net.forward_cached(&x).unwrap();
        let mut g = vec![0.0; net.num_params()];
        net.backward_into(&cache, &[1.0], &mut g).unwrap();
        let h = &cache.activations[1];
        let w = net.weight_range(1);
        for i in 0..4 {
            assert!((g[w.start + i] - h[i]).abs() < 1e-15);
        }
        assert_eq!(g[net.bias_range(1).start], 1.0);
    }

    #[test]
    fn backward_matches_finite_differences() {
        let net = random_net(spec(6, &[32], 3), 9);
        let x = [0.5, -0.1, 0.3, -0.8, 0.2, 0.7];
        let c = [0.3, -1.1, 0.7];
        let bw = net.backward(&x, &c).unwrap();
        let loss = |n: &DenseNet| -> f64 {
            n.forward(&x).unwrap().iter().zip(&c).map(|(o, c)| o * c).sum()
        };
        let h = 1e-5;
        let mut worst: f64 = 0.0;
        for k in 0..net.num_params() {
            let mut plus = net.clone();
            plus.params_mut()[k] += h;
            let mut minus = net.clone();
            minus.params_mut()[k] -= h;
            let fd = (loss(&plus) - loss(&minus)) / (2.0 * h);
            let a = bw.param_grads[k];
            worst = worst.max((a - fd).abs() / a.abs().max(fd.abs()).max(1e-3));
        }
        assert!(worst < 1e-6, "max rel err {worst}");
    }

    #[test]
    fn forward_backward_are_bitwise_deterministic() {
        let net = random_net(spec(6, &[64, 64], 2), 4);
        let x = [0.1, 0.2, 0.3, 0.4, 0.5, 0.6];
        assert_eq!(net.forward(&x).unwrap(), net.forward(&x).unwrap());
        let a = net.backward(&x, &[1.0, -1.0]).unwrap();
        let b = net.backward(&x, &[1.0, -1.0]).unwrap();
        assert_eq!(a.param_grads, b.param_grads);
        assert_eq!(a.input_grad, b.input_grad);
    }

    #[test]
    fn adam_zero_grad_is_noop() {
        let mut p = vec![0.5, -0.5];
        let mut adam = Adam::new(2, 0.1);
        adam.step(&mut p, &[0.0, 0.0]).unwrap();
        assert_eq!(p, vec![0.5, -0.5]);
        assert_eq!(adam.step_count(), 1);
    }

    #[test]
    fn adam_first_step_moves_by_lr() {
        let mut p = vec![0.0];
        let mut adam = Adam::new(1, 0.1);
        adam.step(&mut p, &[1.0]).unwrap();
        assert!((p[0] + 0.1).abs() < 1e-6);
    }

    #[test]
    fn adam_descends_on_quadratic() {
        let mut p = vec![1.0];
        let mut adam = Adam::new(1, 0.1);
        for _ in 0..10 {
            let g = 2.0 * p[0];
            adam.step(&mut p, &[g]).unwrap();
        }
        assert!(p[0].abs() < 1.0);
    }

    #[test]
    fn adam_rejects_non_finite_with_layer() {
        let mut net = random_net(spec(6, &[8, 8], 2), 1);
        let before = net.params().to_vec();
        let mut adam = Adam::new(net.num_params(), 1e-3);
        let mut g = vec![0.0; net.num_params()];
        g[net.bias_range(1).start] = f64::NAN;
        match net.adam_step(&g, &mut adam) {
            Err(Error::NonFiniteGradient { layer }) => assert_eq!(layer, 1),
            other => panic!("expected rejection, got {other:?}"),
        }
        assert_eq!(net.params(), &before[..]);
        assert_eq!(adam.step_count(), 0);
    }

    #[test]
    fn logprob_analytic_values() {
        let lp = gaussian_logprob(&[0.0, 0.0], &[0.0, 0.0], &[0.0, 0.0]).unwrap();
        assert!((lp + 1.837877).abs() < 1e-6);
        let lp = gaussian_logprob(&[0.0, 0.0], &[0.0, 0.0], &[1.0, 0.0]).unwrap();
        assert!((lp + 2.337877).abs() < 1e-6);
        let s = [0.3, -0.9];
        let lp = gaussian_logprob(&[0.4, 0.1], &s, &[0.4, 0.1]).unwrap();
        assert!((lp - (-(s[0] + s[1]) - LN_2PI)).abs() < 1e-12);
        assert!(gaussian_logprob(&[0.0], &[0.0, 0.0], &[0.0]).is_err());
    }

    #[test]
    fn logprob_integrates_to_one() {
        let mean = [0.3, -0.2];
        let log_std = [-0.5, 0.4];
        let mut r = rng::stream(1, "mc");
        let n = 400_000;
        let half: Vec<f64> = log_std.iter().map(|s: &f64| 6.0 * s.exp()).collect();
        let volume = 4.0 * half[0] * half[1];
        let mut acc = 0.0;
        for _ in 0..n {
            let a = [
                mean[0] + r.gen_range(-half[0]..half[0]),
                mean[1] + r.gen_range(-half[1]..half[1]),
            ];
            acc += gaussian_density(&mean, &log_std, &a).unwrap();
        }
        let integral = acc / n as f64 * volume;
        assert!((integral - 1.0).abs() < 0.01, "integral {integral}");
    }

    #[test]
    fn sample_degenerate_and_deterministic() {
        let mut r = rng::stream(3, "s");
        let a = gaussian_sample(&[0.7, -0.2], &[-20.0, -20.0], &mut r);
        assert!((a[0] - 0.7).abs() < 1e-6 && (a[1] + 0.2).abs() < 1e-6);
        let x = gaussian_sample(&[0.0, 0.0], &[0.0, 0.0], &mut rng::stream(5, "s"));
        let y = gaussian_sample(&[0.0, 0.0], &[0.0, 0.0], &mut rng::stream(5, "s"));
        assert_eq!(x, y);
    }

    #[test]
    fn sample_moments() {
        let mut r = rng::stream(8, "moments");
        let n = 100_000;
        let draws: Vec<f64> = (0..n)
            .flat_map(|_| gaussian_sample(&[0.0, 0.0], &[0.0, 0.0], &mut r))
            .collect();
        for d in 0..2 {
            let xs: Vec<f64> = draws.iter().skip(d).step_by(2).copied().collect();
            let m = xs.iter().sum::<f64>() / n as f64;
            let sd = (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt();
            assert!(m.abs() < 0.02 && (sd - 1.0).abs() < 0.02);
        }
    }

    #[test]
    fn param_counts_match_published_table() {
        use HeadLayout::*;
        assert_eq!(param_count(&[32], ActorCriticSeparate), 549);
        assert_eq!(param_count(&[64, 64], ActorCriticSeparate), 9413);
        assert_eq!(param_count(&[128, 128, 128, 128], ActorCriticSeparate), 101_253);
        assert_eq!(param_count(&[32], CombinedDistilled), 325);
        assert_eq!(param_count(&[64, 64], CombinedDistilled), 4805);
        assert_eq!(param_count(&[128, 128, 128, 128], CombinedDistilled), 50_821);
    }

    #[test]
    fn orthogonal_init_has_orthonormal_columns() {
        let mut r = rng::stream(2, "init");
        let net = DenseNet::orthogonal(spec(6, &[64], 2), 1.0, &[1.0, 1.0], &mut r);
        // first layer: 6 inputs -> 64 outputs, column vectors (per input) orthonormal
        let p = net.params();
        for a in 0..6 {
            for b in 0..6 {
                let dot: f64 = (0..64).map(|j| p[a * 64 + j] * p[b * 64 + j]).sum();
                let want = if a == b { 1.0 } else { 0.0 };
                assert!((dot - want).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn serde_round_trip_preserves_net() {
        let net = random_net(spec(6, &[8], 3), 3);
        let json = serde_json::to_string(&net).unwrap();
        let back: DenseNet = serde_json::from_str(&json).unwrap();
        assert_eq!(net, back);
    }
}
