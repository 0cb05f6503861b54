use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nets::{Mlp, ParamGrads};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// Adam moments for one parameter group, aligned with `Mlp::params()`.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub config: AdamConfig,
    pub step: u64,
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(net: &Mlp, config: AdamConfig) -> Self {
        let zeros: Vec<Vec<f64>> = net.params().iter().map(|t| vec![0.0; t.len()]).collect();
        Adam { config, step: 0, m: zeros.clone(), v: zeros }
    }

    /// One bias-corrected descent step `p -= lr * m_hat / (sqrt(v_hat) + eps)`.
    ///
    /// A non-finite gradient leaves both the parameters and the moments
    /// untouched and is reported as [`Error::NonFiniteGradient`].
    pub fn step(&mut self, group: &str, net: &mut Mlp, grads: &ParamGrads, lr: f64) -> Result<()> {
        if !grads.all_finite() {
            return Err(Error::NonFiniteGradient(group.to_string()));
        }
        let params = net.params_mut();
        if params.len() != grads.0.len() || params.len() != self.m.len() {
            return Err(Error::InvalidShape(format!("adam: {} parameters, {} gradients", params.len(), grads.0.len())));
        }
        self.step += 1;
        let AdamConfig { beta1, beta2, eps } = self.config;
        let c1 = 1.0 - beta1.powi(self.step as i32);
        let c2 = 1.0 - beta2.powi(self.step as i32);
        for (((p, g), m), v) in params.into_iter().zip(&grads.0).zip(&mut self.m).zip(&mut self.v) {
            if g.len() != p.len() {
                return Err(Error::InvalidShape("adam: gradient length".into()));
            }
            adam_update(p.data_mut(), g, m, v, lr, beta1, beta2, eps, c1, c2);
        }
        Ok(())
    }
}

#[allow(clippy::too_many_arguments)]
fn adam_update(
    p: &mut [f64],
    g: &[f64],
    m: &mut [f64],
    v: &mut [f64],
    lr: f64,
    b1: f64,
    b2: f64,
    eps: f64,
    c1: f64,
    c2: f64,
) {
    for k in 0..p.len() {
        m[k] = b1 * m[k] + (1.0 - b1) * g[k];
        v[k] = b2 * v[k] + (1.0 - b2) * g[k] * g[k];
        let mhat = m[k] / c1;
        let vhat = v[k] / c2;
        p[k] -= lr * mhat / (vhat.sqrt() + eps);
    }
}

/// Adam on a flat slice, for callers outside the network plumbing.
/// `step` is the 1-based step count after this update.
pub fn adam_step(
    config: &AdamConfig,
    step: u64,
    param: &mut [f64],
    grad: &[f64],
    m: &mut [f64],
    v: &mut [f64],
    lr: f64,
) -> Result<()> {
    if param.len() != grad.len() || m.len() != grad.len() || v.len() != grad.len() {
        return Err(Error::InvalidShape("adam_step operands differ in length".into()));
    }
    if grad.iter().any(|g| !g.is_finite()) {
        return Err(Error::NonFiniteGradient("adam_step".into()));
    }
    let c1 = 1.0 - config.beta1.powi(step as i32);
    let c2 = 1.0 - config.beta2.powi(step as i32);
    adam_update(param, grad, m, v, lr, config.beta1, config.beta2, config.eps, c1, c2);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nets::Activation;
    use crate::tensor::Tensor;

    #[test]
    fn first_step_is_lr_times_sign() {
        let cfg = AdamConfig::default();
        for g in [3.0, -0.02, 250.0] {
            let mut p = [1.0];
            let (mut m, mut v) = ([0.0], [0.0]);
            adam_step(&cfg, 1, &mut p, &[g], &mut m, &mut v, 0.01).unwrap();
            let expect = 1.0 - 0.01 * g / (g.abs() + 1e-8);
            assert!((p[0] - expect).abs() < 1e-15);
            assert!((p[0] - (1.0 - 0.01 * g.signum())).abs() < 1e-8);
        }
    }

    #[test]
    fn zero_gradient_keeps_parameters() {
        let mut net = Mlp::zeros(&[2, 3, 1], Activation::Relu).unwrap();
        net.params_mut()[0].data_mut()[0] = 0.5;
        let before = net.clone();
        let mut opt = Adam::new(&net, AdamConfig::default());
        let zeros = ParamGrads::zeros_like(&net);
        for _ in 0..10 {
            opt.step("test", &mut net, &zeros, 0.1).unwrap();
        }
        assert_eq!(net, before);
    }

    #[test]
    fn scripted_quadratic_trace() {
        // Independent scalar Adam on f(w) = w^2 written out longhand.
        let (b1, b2, eps, lr) = (0.9f64, 0.999f64, 1e-8, 0.1);
        let (mut w, mut m, mut v) = (1.0f64, 0.0f64, 0.0f64);
        let mut trace = Vec::new();
        for t in 1..=20 {
            let g = 2.0 * w;
            m = b1 * m + (1.0 - b1) * g;
            v = b2 * v + (1.0 - b2) * g * g;
            let mh = m / (1.0 - b1.powi(t));
            let vh = v / (1.0 - b2.powi(t));
            w -= lr * mh / (vh.sqrt() + eps);
            trace.push(w);
        }

        let mut net = Mlp::from_params(
            Activation::Relu,
            vec![Tensor::matrix(1, 1, vec![1.0]).unwrap(), Tensor::vector(vec![0.0]).unwrap()],
        )
        .unwrap();
        let mut opt = Adam::new(&net, AdamConfig::default());
        for expect in trace {
            let w = net.params()[0].data()[0];
            let grads = ParamGrads(vec![vec![2.0 * w], vec![0.0]]);
            opt.step("w", &mut net, &grads, lr).unwrap();
            assert!((net.params()[0].data()[0] - expect).abs() <= 1e-12);
        }
        assert!(opt.v.iter().flatten().all(|v| *v >= 0.0));
    }

    #[test]
    fn non_finite_gradient_skips_step() {
        let mut net = Mlp::zeros(&[1, 1], Activation::Relu).unwrap();
        let before = net.clone();
        let mut opt = Adam::new(&net, AdamConfig::default());
        let bad = ParamGrads(vec![vec![f64::NAN], vec![0.0]]);
        assert_eq!(opt.step("prior", &mut net, &bad, 0.1), Err(Error::NonFiniteGradient("prior".into())));
        assert_eq!(net, before);
        assert_eq!(opt.step, 0);
    }
}
