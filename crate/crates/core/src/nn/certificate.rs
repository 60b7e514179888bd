//! Certificate and policy heads on top of `Mlp`.
//!
//! The certificate is `V(x) = w(x)^T w(x)`, nonnegative by construction. The
//! policy squashes the network output onto the input box with tanh so its
//! actions are always strictly feasible.

use serde::{Deserialize, Serialize};

use super::{ForwardCache, Mlp, MlpGrads};
use crate::error::{Error, Result};
use crate::task::Bounds;

pub const PARAMS_VERSION: u32 = 1;

/// Learned terminal certificate: value `V(x) = ||w(x)||^2` with level `c`.
#[derive(Debug, Clone, PartialEq)]
pub struct Certificate {
    pub w_net: Mlp,
    pub level: f64,
}

impl Certificate {
    pub fn new(w_net: Mlp, level: f64) -> Result<Self> {
        if !(level > 0.0) {
            return Err(Error::Contract(format!(
                "certificate level must be positive, got {level}"
            )));
        }
        Ok(Certificate { w_net, level })
    }

    pub fn state_dim(&self) -> usize {
        self.w_net.input_dim()
    }

    pub fn value(&self, x: &[f64]) -> Result<f64> {
        let w = self.w_net.forward(x)?;
        Ok(w.iter().map(|v| v * v).sum())
    }

    /// Value together with `dV/dx`.
    pub fn value_and_grad_x(&self, x: &[f64]) -> Result<(f64, Vec<f64>)> {
        let cache = self.w_net.forward_cached(x)?;
        let w = cache.output();
        let value = w.iter().map(|v| v * v).sum();
        let upstream: Vec<f64> = w.iter().map(|v| 2.0 * v).collect();
        let dx = self.w_net.backward_input(&cache, &upstream)?;
        Ok((value, dx))
    }

    /// Accumulates `scale * dV/d(theta)` into `grads` and returns
    /// `(V(x), scale * dV/dx)`.
    pub fn backward_value(
        &self,
        cache: &ForwardCache,
        scale: f64,
        grads: &mut MlpGrads,
    ) -> Result<(f64, Vec<f64>)> {
        let w = cache.output();
        let value = w.iter().map(|v| v * v).sum();
        let upstream: Vec<f64> = w.iter().map(|v| 2.0 * scale * v).collect();
        let dx = self.w_net.backward(cache, &upstream, grads)?;
        Ok((value, dx))
    }

    pub fn forward_cached(&self, x: &[f64]) -> Result<ForwardCache> {
        self.w_net.forward_cached(x)
    }

    pub fn value_from_cache(cache: &ForwardCache) -> f64 {
        cache.output().iter().map(|v| v * v).sum()
    }
}

/// Learned control policy squashed onto the input box.
#[derive(Debug, Clone, PartialEq)]
pub struct Policy {
    pub net: Mlp,
    pub input_box: Bounds,
}

/// Forward cache for one policy evaluation.
pub struct PolicyCache {
    net_cache: ForwardCache,
    tanh: Vec<f64>,
}

impl Policy {
    pub fn new(net: Mlp, input_box: Bounds) -> Result<Self> {
        if net.output_dim() != input_box.dim() {
            return Err(Error::Contract(format!(
                "policy output dim {} does not match input box dim {}",
                net.output_dim(),
                input_box.dim()
            )));
        }
        Ok(Policy { net, input_box })
    }

    pub fn state_dim(&self) -> usize {
        self.net.input_dim()
    }

    pub fn action_dim(&self) -> usize {
        self.net.output_dim()
    }

    /// `u_i = mid_i + half_i * tanh(net(x)_i)`, strictly inside the box.
    pub fn action(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(self.action_cached(x)?.0)
    }

    pub fn action_cached(&self, x: &[f64]) -> Result<(Vec<f64>, PolicyCache)> {
        let net_cache = self.net.forward_cached(x)?;
        let tanh: Vec<f64> = net_cache.output().iter().map(|v| v.tanh()).collect();
        let action = tanh
            .iter()
            .zip(self.input_box.lo.iter().zip(&self.input_box.hi))
            .map(|(&t, (&l, &h))| 0.5 * (l + h) + 0.5 * (h - l) * t)
            .collect();
        Ok((action, PolicyCache { net_cache, tanh }))
    }

    /// Accumulates `d(upstream . u)/d(phi)` into `grads`; returns the gradient
    /// with respect to the state.
    pub fn backward_action(
        &self,
        cache: &PolicyCache,
        upstream: &[f64],
        grads: &mut MlpGrads,
    ) -> Result<Vec<f64>> {
        self.backward_action_floored(cache, upstream, grads, 0.0)
    }

    /// Like `backward_action` with the squash derivative floored at
    /// `derivative_floor`, so saturated output channels keep a usable
    /// training signal. A floor of zero gives the exact gradient.
    pub fn backward_action_floored(
        &self,
        cache: &PolicyCache,
        upstream: &[f64],
        grads: &mut MlpGrads,
        derivative_floor: f64,
    ) -> Result<Vec<f64>> {
        let net_upstream: Vec<f64> = upstream
            .iter()
            .zip(cache.tanh.iter())
            .zip(self.input_box.lo.iter().zip(&self.input_box.hi))
            .map(|((&up, &t), (&l, &h))| {
                up * 0.5 * (h - l) * (1.0 - t * t).max(derivative_floor)
            })
            .collect();
        self.net.backward(&cache.net_cache, &net_upstream, grads)
    }
}

impl Mlp {
    /// Input gradient without accumulating parameter gradients.
    pub fn backward_input(&self, cache: &ForwardCache, upstream: &[f64]) -> Result<Vec<f64>> {
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
}

/// On-disk payload for a certificate.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CertificateParams {
    pub version: u32,
    pub kind: String,
    pub level: f64,
    pub d_w: usize,
    pub net: Mlp,
}

/// On-disk payload for a policy.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PolicyParams {
    pub version: u32,
    pub kind: String,
    pub input_lo: Vec<f64>,
    pub input_hi: Vec<f64>,
    pub net: Mlp,
}

impl Certificate {
    pub fn to_params(&self) -> CertificateParams {
        CertificateParams {
            version: PARAMS_VERSION,
            kind: "certificate".into(),
            level: self.level,
            d_w: self.w_net.output_dim(),
            net: self.w_net.clone(),
        }
    }

    pub fn from_params(params: CertificateParams) -> Result<Self> {
        if params.version != PARAMS_VERSION {
            return Err(Error::Parse(format!(
                "unsupported certificate params version {}",
                params.version
            )));
        }
        if params.kind != "certificate" {
            return Err(Error::Parse(format!(
                "expected kind 'certificate', got '{}'",
                params.kind
            )));
        }
        params.net.validate()?;
        if params.d_w != params.net.output_dim() {
            return Err(Error::Parse(format!(
                "d_w {} does not match network output dim {}",
                params.d_w,
                params.net.output_dim()
            )));
        }
        Certificate::new(params.net, params.level)
    }
}

impl Policy {
    pub fn to_params(&self) -> PolicyParams {
        PolicyParams {
            version: PARAMS_VERSION,
            kind: "policy".into(),
            input_lo: self.input_box.lo.clone(),
            input_hi: self.input_box.hi.clone(),
            net: self.net.clone(),
        }
    }

    pub fn from_params(params: PolicyParams) -> Result<Self> {
        if params.version != PARAMS_VERSION {
            return Err(Error::Parse(format!(
                "unsupported policy params version {}",
                params.version
            )));
        }
        if params.kind != "policy" {
            return Err(Error::Parse(format!(
                "expected kind 'policy', got '{}'",
                params.kind
            )));
        }
        params.net.validate()?;
        Policy::new(params.net, Bounds::new(params.input_lo, params.input_hi)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rel_err(a: f64, b: f64) -> f64 {
        (a - b).abs() / a.abs().max(b.abs()).max(1e-3)
    }

    #[test]
    fn zero_certificate_is_zero() {
        let cert = Certificate::new(Mlp::zeros(&[3, 8, 1]).unwrap(), 7.0).unwrap();
        assert_eq!(cert.value(&[1.0, -2.0, 0.5]).unwrap(), 0.0);
    }

    #[test]
    fn certificate_value_is_squared_norm() {
        // Constant w(x) = [3, 4] via zero weights and fixed biases.
        let mut net = Mlp::zeros(&[3, 2]).unwrap();
        net.biases[0] = vec![3.0, 4.0];
        let cert = Certificate::new(net, 7.0).unwrap();
        assert!((cert.value(&[0.0, 0.0, 0.0]).unwrap() - 25.0).abs() < 1e-12);
    }

    #[test]
    fn certificate_nonnegative_on_random_nets() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let net = Mlp::init(&[3, 16, 16, 1], &mut rng).unwrap();
            let cert = Certificate::new(net, 7.0).unwrap();
            let x: Vec<f64> = (0..3).map(|_| rng.gen_range(-8.0..8.0)).collect();
            assert!(cert.value(&x).unwrap() >= 0.0);
        }
    }

    #[test]
    fn certificate_grad_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let net = Mlp::init(&[3, 8, 8, 2], &mut rng).unwrap();
        let cert = Certificate::new(net, 7.0).unwrap();
        let x = [0.4, -0.9, 1.2];
        let (_, grad) = cert.value_and_grad_x(&x).unwrap();
        let h = 1e-5;
        for i in 0..3 {
            let mut xp = x;
            let mut xm = x;
            xp[i] += h;
            xm[i] -= h;
            let fd = (cert.value(&xp).unwrap() - cert.value(&xm).unwrap()) / (2.0 * h);
            assert!(rel_err(grad[i], fd) <= 1e-5);
        }
    }

    #[test]
    fn policy_midpoint_and_saturation() {
        let boxed = Bounds::new(vec![0.0], vec![2.0]).unwrap();
        let pol = Policy::new(Mlp::zeros(&[2, 1]).unwrap(), boxed).unwrap();
        assert!((pol.action(&[0.3, 0.4]).unwrap()[0] - 1.0).abs() < 1e-12);

        // tanh saturates to 1.0 in f64 for large preactivations, so the
        // action approaches (and numerically reaches) the upper bound.
        let mut saturated = Mlp::zeros(&[2, 1]).unwrap();
        saturated.biases[0][0] = 50.0;
        let pol = Policy::new(saturated, Bounds::new(vec![0.0], vec![2.0]).unwrap()).unwrap();
        let u = pol.action(&[0.0, 0.0]).unwrap()[0];
        assert!(u <= 2.0 && u > 2.0 - 1e-9);

        let sym = Bounds::new(vec![-std::f64::consts::FRAC_PI_2], vec![std::f64::consts::FRAC_PI_2])
            .unwrap();
        let pol = Policy::new(Mlp::zeros(&[2, 1]).unwrap(), sym).unwrap();
        assert_eq!(pol.action(&[1.0, 1.0]).unwrap()[0], 0.0);
    }

    #[test]
    fn policy_actions_stay_in_box() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let boxed = Bounds::new(vec![0.0, -1.5], vec![2.0, 1.5]).unwrap();
        for _ in 0..50 {
            let net = Mlp::init(&[3, 16, 16, 2], &mut rng).unwrap();
            let pol = Policy::new(net, boxed.clone()).unwrap();
            let x: Vec<f64> = (0..3).map(|_| rng.gen_range(-8.0..8.0)).collect();
            let u = pol.action(&x).unwrap();
            assert!(boxed.contains(&u));
        }
    }

    #[test]
    fn policy_backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let boxed = Bounds::new(vec![0.0, -1.5], vec![2.0, 1.5]).unwrap();
        let mut pol = Policy::new(Mlp::init(&[3, 8, 8, 2], &mut rng).unwrap(), boxed).unwrap();
        let x = [0.2, -0.7, 0.9];
        let upstream = [1.3, -0.4];

        let (_, cache) = pol.action_cached(&x).unwrap();
        let mut grads = MlpGrads::zeros_like(&pol.net);
        pol.backward_action(&cache, &upstream, &mut grads).unwrap();

        let h = 1e-5;
        let scalar = |p: &Policy| {
            let u = p.action(&x).unwrap();
            u[0] * upstream[0] + u[1] * upstream[1]
        };
        for l in 0..pol.net.num_layers() {
            for i in 0..pol.net.weights[l].len() {
                let orig = pol.net.weights[l][i];
                pol.net.weights[l][i] = orig + h;
                let fp = scalar(&pol);
                pol.net.weights[l][i] = orig - h;
                let fm = scalar(&pol);
                pol.net.weights[l][i] = orig;
                let fd = (fp - fm) / (2.0 * h);
                assert!(rel_err(grads.weights[l][i], fd) <= 1e-5);
            }
        }
    }

    #[test]
    fn params_roundtrip() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let cert = Certificate::new(Mlp::init(&[3, 32, 32, 1], &mut rng).unwrap(), 7.0).unwrap();
        let json = serde_json::to_string(&cert.to_params()).unwrap();
        let back = Certificate::from_params(serde_json::from_str(&json).unwrap()).unwrap();
        assert_eq!(cert, back);

        let boxed = Bounds::new(vec![0.0, -1.0], vec![2.0, 1.0]).unwrap();
        let pol = Policy::new(Mlp::init(&[3, 16, 16, 2], &mut rng).unwrap(), boxed).unwrap();
        let json = serde_json::to_string(&pol.to_params()).unwrap();
        let back = Policy::from_params(serde_json::from_str(&json).unwrap()).unwrap();
        assert_eq!(pol, back);
    }

    #[test]
    fn corrupt_params_rejected() {
        let cert = Certificate::new(Mlp::zeros(&[3, 4, 1]).unwrap(), 7.0).unwrap();
        let mut params = cert.to_params();
        params.d_w = 2;
        assert!(Certificate::from_params(params).is_err());
    }
}
