use rand::Rng;

use super::mlp::{Activation, BoundMlp, Mlp};
use crate::error::{Error, Result};
use crate::tensor::{Tape, Var};

/// Bound applied to the encoder's log-variance head before exponentiation.
pub const LOGVAR_CLAMP: f64 = 10.0;

/// Inference network `q_phi(z | x)`: a diagonal Gaussian whose mean and
/// log-variance come from one MLP with `2d` outputs.
#[derive(Debug, Clone, PartialEq)]
pub struct AmortizedPosterior {
    net: Mlp,
}

impl AmortizedPosterior {
    pub fn new<R: Rng + ?Sized>(data_dim: usize, latent_dim: usize, hidden: &[usize], rng: &mut R) -> Result<Self> {
        let mut w = vec![data_dim];
        w.extend_from_slice(hidden);
        w.push(2 * latent_dim);
        Ok(AmortizedPosterior { net: Mlp::new(&w, Activation::Relu, rng)? })
    }

    pub fn from_net(net: Mlp) -> Result<Self> {
        if !net.output_dim().is_multiple_of(2) {
            return Err(Error::InvalidShape(format!("encoder output width {} is odd", net.output_dim())));
        }
        Ok(AmortizedPosterior { net })
    }

    pub fn net(&self) -> &Mlp {
        &self.net
    }

    pub fn net_mut(&mut self) -> &mut Mlp {
        &mut self.net
    }

    pub fn data_dim(&self) -> usize {
        self.net.input_dim()
    }

    pub fn latent_dim(&self) -> usize {
        self.net.output_dim() / 2
    }

    pub fn bind(&self, tape: &mut Tape, track: bool) -> Result<BoundMlp> {
        self.net.bind(tape, track)
    }

    /// `(mu, logvar)` for one observation.
    pub fn encode(&self, x: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        if x.len() != self.data_dim() {
            return Err(Error::InvalidShape(format!(
                "observation of length {}, encoder expects {}",
                x.len(),
                self.data_dim()
            )));
        }
        self.encode_batch(x)
    }

    /// Row-major `(mu, logvar)`, each `n x d`, for a batch of observations.
    pub fn encode_batch(&self, x: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        let dd = self.data_dim();
        if x.is_empty() || !x.len().is_multiple_of(dd) {
            return Err(Error::InvalidShape(format!("batch of {} values for width {dd}", x.len())));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteInput("observation".into()));
        }
        let mut tape = Tape::new();
        let b = self.bind(&mut tape, false)?;
        let xv = tape.constant(x.len() / dd, dd, x.to_vec())?;
        let (mu, lv) = encode_on(&mut tape, &b, xv)?;
        Ok((tape.value(mu)?.to_vec(), tape.value(lv)?.to_vec()))
    }
}

/// Splits the encoder output into `mu` and clamped `logvar`.
pub fn encode_on(tape: &mut Tape, enc: &BoundMlp, x: Var) -> Result<(Var, Var)> {
    let out = enc.forward(tape, x)?;
    let d = tape.dims(out)?.1 / 2;
    let mu = tape.slice_cols(out, 0, d)?;
    let raw = tape.slice_cols(out, d, d)?;
    let lv = tape.clamp(raw, -LOGVAR_CLAMP, LOGVAR_CLAMP)?;
    Ok((mu, lv))
}

/// `z = mu + exp(logvar / 2) * eps`.
pub fn reparam_sample(mu: &[f64], logvar: &[f64], eps: &[f64]) -> Result<Vec<f64>> {
    if mu.len() != logvar.len() || mu.len() != eps.len() {
        return Err(Error::InvalidShape(format!(
            "reparam: mu {}, logvar {}, eps {}",
            mu.len(),
            logvar.len(),
            eps.len()
        )));
    }
    let z: Vec<f64> = mu.iter().zip(logvar).zip(eps).map(|((m, lv), e)| m + (0.5 * lv).exp() * e).collect();
    if z.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteInput("reparameterized sample".into()));
    }
    Ok(z)
}

/// Differentiable reparameterization; `eps` is a constant of the same shape.
pub fn reparam_on(tape: &mut Tape, mu: Var, logvar: Var, eps: Vec<f64>) -> Result<Var> {
    let (r, c) = tape.dims(mu)?;
    let e = tape.constant(r, c, eps)?;
    let half = tape.scale(logvar, 0.5)?;
    let std = tape.exp(half)?;
    let noise = tape.mul(std, e)?;
    tape.add(mu, noise)
}

/// Per row `KL(q || N(0, I))` on the tape (`n x 1`).
pub fn kl_to_standard_normal_on(tape: &mut Tape, mu: Var, logvar: Var) -> Result<Var> {
    let d = tape.dims(mu)?.1 as f64;
    let var = tape.exp(logvar)?;
    let mu2 = tape.mul(mu, mu)?;
    let s = tape.add(var, mu2)?;
    let s = tape.sub(s, logvar)?;
    let rows = tape.sum_rows(s)?;
    let rows = tape.add_const(rows, -d)?;
    tape.scale(rows, 0.5)
}
