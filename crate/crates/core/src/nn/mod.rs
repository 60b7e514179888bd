//! Minimal feedforward-network engine: tanh hidden layers, identity output,
//! exact reverse-mode gradients, and the two network heads used by the
//! controller (certificate and policy).

mod certificate;
mod optimizer;

pub use certificate::{Certificate, CertificateParams, Policy, PolicyParams};
pub use optimizer::{OptimizerConfig, OptimizerMethod, OptimizerState, StepStatus};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Fully connected network. `weights[l]` is row-major with shape
/// `layer_sizes[l + 1] x layer_sizes[l]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub layer_sizes: Vec<usize>,
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<Vec<f64>>,
}

/// Dot product with four independent accumulators; breaks the serial FMA
/// dependency chain in the hot forward loops.
#[inline]
fn dot_unrolled(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().min(b.len());
    let (mut s0, mut s1, mut s2, mut s3) = (0.0, 0.0, 0.0, 0.0);
    let chunks = n / 4;
    for c in 0..chunks {
        let i = 4 * c;
        s0 += a[i] * b[i];
        s1 += a[i + 1] * b[i + 1];
        s2 += a[i + 2] * b[i + 2];
        s3 += a[i + 3] * b[i + 3];
    }
    let mut rest = 0.0;
    for i in 4 * chunks..n {
        rest += a[i] * b[i];
    }
    (s0 + s1) + (s2 + s3) + rest
}

/// Per-layer activations recorded by a forward pass, consumed by `backward`.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    /// `activations[0]` is the input; `activations[L]` is the output.
    activations: Vec<Vec<f64>>,
}

impl ForwardCache {
    pub fn output(&self) -> &[f64] {
        self.activations.last().expect("cache has layers")
    }
}

/// Parameter-shaped buffer for gradients and optimizer moments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpGrads {
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<Vec<f64>>,
}

impl MlpGrads {
    pub fn zeros_like(net: &Mlp) -> Self {
        MlpGrads {
            weights: net.weights.iter().map(|w| vec![0.0; w.len()]).collect(),
            biases: net.biases.iter().map(|b| vec![0.0; b.len()]).collect(),
        }
    }

    pub fn zero(&mut self) {
        for w in &mut self.weights {
            w.fill(0.0);
        }
        for b in &mut self.biases {
            b.fill(0.0);
        }
    }

    pub fn scale(&mut self, s: f64) {
        for w in &mut self.weights {
            for v in w.iter_mut() {
                *v *= s;
            }
        }
        for b in &mut self.biases {
            for v in b.iter_mut() {
                *v *= s;
            }
        }
    }

    pub fn is_finite(&self) -> bool {
        self.weights
            .iter()
            .chain(self.biases.iter())
            .all(|v| v.iter().all(|x| x.is_finite()))
    }

    pub fn max_abs(&self) -> f64 {
        self.weights
            .iter()
            .chain(self.biases.iter())
            .flat_map(|v| v.iter())
            .fold(0.0f64, |acc, &x| acc.max(x.abs()))
    }
}

impl Mlp {
    /// Network with all parameters zero.
    pub fn zeros(layer_sizes: &[usize]) -> Result<Self> {
        if layer_sizes.len() < 2 {
            return Err(Error::Contract(
                "an MLP needs at least input and output sizes".into(),
            ));
        }
        if layer_sizes.iter().any(|&s| s == 0) {
            return Err(Error::Contract("layer sizes must be positive".into()));
        }
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for pair in layer_sizes.windows(2) {
            weights.push(vec![0.0; pair[0] * pair[1]]);
            biases.push(vec![0.0; pair[1]]);
        }
        Ok(Mlp {
            layer_sizes: layer_sizes.to_vec(),
            weights,
            biases,
        })
    }

    /// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) initialization.
    pub fn init<R: Rng>(layer_sizes: &[usize], rng: &mut R) -> Result<Self> {
        let mut net = Mlp::zeros(layer_sizes)?;
        for (l, pair) in layer_sizes.windows(2).enumerate() {
            let bound = 1.0 / (pair[0] as f64).sqrt();
            for w in net.weights[l].iter_mut() {
                *w = rng.gen_range(-bound..bound);
            }
            for b in net.biases[l].iter_mut() {
                *b = rng.gen_range(-bound..bound);
            }
        }
        Ok(net)
    }

    pub fn input_dim(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_sizes.last().unwrap()
    }

    pub fn num_layers(&self) -> usize {
        self.weights.len()
    }

    pub fn param_count(&self) -> usize {
        self.weights.iter().map(|w| w.len()).sum::<usize>()
            + self.biases.iter().map(|b| b.len()).sum::<usize>()
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.input_dim() {
            return Err(Error::Contract(format!(
                "network expects input of size {}, got {}",
                self.input_dim(),
                x.len()
            )));
        }
        Ok(())
    }

    /// Forward pass recording every layer's activation.
    pub fn forward_cached(&self, x: &[f64]) -> Result<ForwardCache> {
        self.check_input(x)?;
        let mut activations = Vec::with_capacity(self.num_layers() + 1);
        activations.push(x.to_vec());
        let last = self.num_layers() - 1;
        for l in 0..self.num_layers() {
            let (n_in, n_out) = (self.layer_sizes[l], self.layer_sizes[l + 1]);
            let prev = &activations[l];
            let mut out = vec![0.0; n_out];
            for row in 0..n_out {
                let w_row = &self.weights[l][row * n_in..(row + 1) * n_in];
                let acc = self.biases[l][row] + dot_unrolled(w_row, prev);
                out[row] = if l < last { acc.tanh() } else { acc };
            }
            activations.push(out);
        }
        Ok(ForwardCache { activations })
    }

    /// Forward pass returning only the output vector.
    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        let mut cache = self.forward_cached(x)?;
        Ok(cache.activations.pop().expect("cache has layers"))
    }

    /// Reverse-mode pass. Accumulates `d(upstream . output)/d(params)` into
    /// `grads` and returns the gradient with respect to the input.
    pub fn backward(
        &self,
        cache: &ForwardCache,
        upstream: &[f64],
        grads: &mut MlpGrads,
    ) -> Result<Vec<f64>> {
        if upstream.len() != self.output_dim() {
            return Err(Error::Contract(format!(
                "upstream gradient has size {}, output has size {}",
                upstream.len(),
                self.output_dim()
            )));
        }
        let mut delta = upstream.to_vec();
        for l in (0..self.num_layers()).rev() {
            let (n_in, n_out) = (self.layer_sizes[l], self.layer_sizes[l + 1]);
            let prev = &cache.activations[l];
            for row in 0..n_out {
                let d = delta[row];
                grads.biases[l][row] += d;
                let g_row = &mut grads.weights[l][row * n_in..(row + 1) * n_in];
                for (gi, pi) in g_row.iter_mut().zip(prev.iter()) {
                    *gi += d * pi;
                }
            }
            // Propagate through W^T and the tanh of the previous hidden layer.
            let mut prop = vec![0.0; n_in];
            for row in 0..n_out {
                let d = delta[row];
                let w_row = &self.weights[l][row * n_in..(row + 1) * n_in];
                for (pi, wi) in prop.iter_mut().zip(w_row.iter()) {
                    *pi += d * wi;
                }
            }
            if l > 0 {
                for (p, a) in prop.iter_mut().zip(prev.iter()) {
                    *p *= 1.0 - a * a;
                }
            }
            delta = prop;
        }
        Ok(delta)
    }

    /// One-shot convenience wrapper around `forward_cached` + `backward`.
    pub fn backward_fresh(&self, x: &[f64], upstream: &[f64]) -> Result<(MlpGrads, Vec<f64>)> {
        let cache = self.forward_cached(x)?;
        let mut grads = MlpGrads::zeros_like(self);
        let dx = self.backward(&cache, upstream, &mut grads)?;
        Ok((grads, dx))
    }

    /// Validates internal shape consistency (used after deserialization).
    pub fn validate(&self) -> Result<()> {
        if self.layer_sizes.len() < 2 {
            return Err(Error::Parse("network needs at least two layer sizes".into()));
        }
        if self.weights.len() != self.layer_sizes.len() - 1
            || self.biases.len() != self.layer_sizes.len() - 1
        {
            return Err(Error::Parse(
                "weight/bias layer count does not match layer_sizes".into(),
            ));
        }
        for (l, pair) in self.layer_sizes.windows(2).enumerate() {
            if self.weights[l].len() != pair[0] * pair[1] {
                return Err(Error::Parse(format!(
                    "layer {l} weights have {} entries, expected {}",
                    self.weights[l].len(),
                    pair[0] * pair[1]
                )));
            }
            if self.biases[l].len() != pair[1] {
                return Err(Error::Parse(format!(
                    "layer {l} biases have {} entries, expected {}",
                    self.biases[l].len(),
                    pair[1]
                )));
            }
        }
        let finite = self
            .weights
            .iter()
            .chain(self.biases.iter())
            .all(|v| v.iter().all(|x| x.is_finite()));
        if !finite {
            return Err(Error::Parse("network parameters contain non-finite values".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    pub(crate) fn rel_err(a: f64, b: f64) -> f64 {
        (a - b).abs() / a.abs().max(b.abs()).max(1e-3)
    }

    #[test]
    fn zero_network_outputs_zero() {
        let net = Mlp::zeros(&[3, 8, 2]).unwrap();
        let out = net.forward(&[0.3, -1.0, 2.0]).unwrap();
        assert_eq!(out, vec![0.0, 0.0]);
    }

    #[test]
    fn one_one_one_identity_like() {
        let mut net = Mlp::zeros(&[1, 1, 1]).unwrap();
        net.weights[0][0] = 1.0;
        net.weights[1][0] = 1.0;
        let out = net.forward(&[0.0]).unwrap();
        assert_eq!(out, vec![0.0]);
    }

    #[test]
    fn single_linear_layer_is_affine() {
        let mut net = Mlp::zeros(&[1, 1]).unwrap();
        net.weights[0][0] = 2.0;
        net.biases[0][0] = 1.0;
        let out = net.forward(&[0.5]).unwrap();
        assert!((out[0] - 2.0).abs() < 1e-15);
    }

    #[test]
    fn forward_is_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let net = Mlp::init(&[3, 8, 8, 1], &mut rng).unwrap();
        let x = [0.2, -0.4, 1.1];
        let a = net.forward(&x).unwrap();
        let b = net.forward(&x).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn zero_upstream_gives_zero_grads() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let net = Mlp::init(&[3, 8, 8, 1], &mut rng).unwrap();
        let (grads, dx) = net.backward_fresh(&[0.1, 0.2, 0.3], &[0.0]).unwrap();
        assert!(grads.max_abs() == 0.0);
        assert!(dx.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn linear_layer_weight_grad_is_input() {
        let mut net = Mlp::zeros(&[3, 1]).unwrap();
        net.weights[0] = vec![0.5, -0.5, 2.0];
        let x = [0.7, -1.3, 0.4];
        let (grads, dx) = net.backward_fresh(&x, &[1.0]).unwrap();
        for (g, xi) in grads.weights[0].iter().zip(x.iter()) {
            assert!((g - xi).abs() < 1e-15);
        }
        for (d, w) in dx.iter().zip(net.weights[0].iter()) {
            assert!((d - w).abs() < 1e-15);
        }
    }

    #[test]
    fn backward_matches_central_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let h = 1e-5;
        for _ in 0..20 {
            let mut net = Mlp::init(&[3, 8, 8, 1], &mut rng).unwrap();
            let x: Vec<f64> = (0..3).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let (grads, dx) = net.backward_fresh(&x, &[1.0]).unwrap();

            for l in 0..net.num_layers() {
                for i in 0..net.weights[l].len() {
                    let orig = net.weights[l][i];
                    net.weights[l][i] = orig + h;
                    let fp = net.forward(&x).unwrap()[0];
                    net.weights[l][i] = orig - h;
                    let fm = net.forward(&x).unwrap()[0];
                    net.weights[l][i] = orig;
                    let fd = (fp - fm) / (2.0 * h);
                    assert!(
                        rel_err(grads.weights[l][i], fd) <= 1e-5,
                        "weight grad mismatch: {} vs {}",
                        grads.weights[l][i],
                        fd
                    );
                }
                for i in 0..net.biases[l].len() {
                    let orig = net.biases[l][i];
                    net.biases[l][i] = orig + h;
                    let fp = net.forward(&x).unwrap()[0];
                    net.biases[l][i] = orig - h;
                    let fm = net.forward(&x).unwrap()[0];
                    net.biases[l][i] = orig;
                    let fd = (fp - fm) / (2.0 * h);
                    assert!(rel_err(grads.biases[l][i], fd) <= 1e-5);
                }
            }

            let mut xp = x.clone();
            for i in 0..x.len() {
                let orig = xp[i];
                xp[i] = orig + h;
                let fp = net.forward(&xp).unwrap()[0];
                xp[i] = orig - h;
                let fm = net.forward(&xp).unwrap()[0];
                xp[i] = orig;
                let fd = (fp - fm) / (2.0 * h);
                assert!(rel_err(dx[i], fd) <= 1e-5);
            }
        }
    }

    #[test]
    fn validate_catches_shape_corruption() {
        let mut net = Mlp::zeros(&[2, 4, 1]).unwrap();
        net.weights[0].pop();
        assert!(net.validate().is_err());
    }
}
