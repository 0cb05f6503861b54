use rand::Rng;
use serde::{Deserialize, Serialize};

use super::mlp::{Activation, BoundMlp, Mlp};
use crate::error::{Error, Result};
use crate::tensor::{softmax, Tape, Var};

/// Observation model attached to the generator network.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "variant", rename_all = "lowercase")]
pub enum DecoderKind {
    /// `x ~ N(g(z), sigma2 I)` with a fixed variance.
    Gaussian { sigma2: f64 },
    /// Word counts with unigram probabilities `softmax(g(z))`.
    Multinomial,
}

/// Generator `g_beta` plus its observation model.
#[derive(Debug, Clone, PartialEq)]
pub struct Decoder {
    kind: DecoderKind,
    net: Mlp,
}

impl Decoder {
    pub fn new<R: Rng + ?Sized>(
        kind: DecoderKind,
        latent_dim: usize,
        obs_dim: usize,
        hidden: &[usize],
        rng: &mut R,
    ) -> Result<Self> {
        let mut w = vec![latent_dim];
        w.extend_from_slice(hidden);
        w.push(obs_dim);
        Self::from_net(kind, Mlp::new(&w, Activation::Relu, rng)?)
    }

    pub fn from_net(kind: DecoderKind, net: Mlp) -> Result<Self> {
        if let DecoderKind::Gaussian { sigma2 } = kind {
            if !(sigma2 > 0.0 && sigma2.is_finite()) {
                return Err(Error::InvalidInput(format!("sigma2 must be positive, got {sigma2}")));
            }
        }
        Ok(Decoder { kind, net })
    }

    pub fn kind(&self) -> DecoderKind {
        self.kind
    }

    pub fn net(&self) -> &Mlp {
        &self.net
    }

    pub fn net_mut(&mut self) -> &mut Mlp {
        &mut self.net
    }

    pub fn latent_dim(&self) -> usize {
        self.net.input_dim()
    }

    pub fn obs_dim(&self) -> usize {
        self.net.output_dim()
    }

    pub fn bind(&self, tape: &mut Tape, track: bool) -> Result<BoundMlp> {
        self.net.bind(tape, track)
    }

    /// Checks a row-major batch of observations and returns its row count.
    pub fn check_observations(&self, x: &[f64]) -> Result<usize> {
        let dim = self.obs_dim();
        if !x.len().is_multiple_of(dim) {
            return Err(Error::InvalidShape(format!("observations of {} values for width {dim}", x.len())));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteInput("observation".into()));
        }
        if self.kind == DecoderKind::Multinomial && x.iter().any(|&c| c < 0.0) {
            return Err(Error::InvalidInput("negative word count".into()));
        }
        Ok(x.len() / dim)
    }

    /// `log p_beta(x | z)`. The multinomial variant omits the count
    /// coefficient `log(N! / prod x_w!)`, which does not depend on `z` or `beta`.
    pub fn decode_log_likelihood(&self, z: &[f64], x: &[f64]) -> Result<f64> {
        if z.len() != self.latent_dim() {
            return Err(Error::InvalidShape(format!(
                "latent vector of length {}, decoder expects {}",
                z.len(),
                self.latent_dim()
            )));
        }
        if x.len() != self.obs_dim() {
            return Err(Error::InvalidShape(format!(
                "observation of length {}, decoder expects {}",
                x.len(),
                self.obs_dim()
            )));
        }
        let mut tape = Tape::new();
        let b = self.bind(&mut tape, false)?;
        let zv = tape.constant(1, z.len(), z.to_vec())?;
        let ll = log_likelihood_on(&mut tape, self, &b, zv, x)?;
        tape.scalar(ll)
    }

    /// Mean of the observation model: `g(z)` for the Gaussian decoder,
    /// word probabilities for the multinomial one. Row-major `n x D`.
    pub fn mean(&self, z: &[f64]) -> Result<Vec<f64>> {
        let d = self.latent_dim();
        if z.is_empty() || !z.len().is_multiple_of(d) {
            return Err(Error::InvalidShape("latent batch".into()));
        }
        let out = self.net.forward(z, z.len() / d)?;
        match self.kind {
            DecoderKind::Gaussian { .. } => Ok(out),
            DecoderKind::Multinomial => {
                Ok(out.chunks(self.obs_dim()).map(softmax).collect::<Result<Vec<_>>>()?.concat())
            }
        }
    }
}

/// Per-row `log p_beta(x | z)` (`n x 1`) for a batch of observations `x`.
pub fn log_likelihood_on(tape: &mut Tape, dec: &Decoder, bound: &BoundMlp, z: Var, x: &[f64]) -> Result<Var> {
    let n = dec.check_observations(x)?;
    if n != tape.dims(z)?.0 {
        return Err(Error::InvalidShape(format!("{n} observations for {} latent rows", tape.dims(z)?.0)));
    }
    let out = bound.forward(tape, z)?;
    match dec.kind {
        DecoderKind::Gaussian { sigma2 } => tape.gaussian_log_density(out, x.to_vec(), sigma2),
        DecoderKind::Multinomial => tape.weighted_log_softmax(out, x.to_vec()),
    }
}
