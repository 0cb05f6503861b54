//! The three networks of the model: the latent EBM prior, the inference
//! network and the generator.

mod decoder;
mod encoder;
mod mlp;
mod prior;

pub use decoder::{log_likelihood_on, Decoder, DecoderKind};
pub use encoder::{encode_on, kl_to_standard_normal_on, reparam_on, reparam_sample, AmortizedPosterior, LOGVAR_CLAMP};
pub use mlp::{Activation, BoundMlp, Linear, Mlp, ParamGrads};
pub use prior::{marginal_energy_on, EbmPrior};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Architecture hyperparameters; enough to rebuild a [`Model`] from a
/// parameter dump.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub latent_dim: usize,
    pub classes: usize,
    /// `D` for Gaussian observations, vocabulary size `V` for counts.
    pub data_dim: usize,
    pub prior_hidden: Vec<usize>,
    pub encoder_hidden: Vec<usize>,
    pub decoder_hidden: Vec<usize>,
    pub decoder: DecoderKind,
}

impl ModelSpec {
    pub fn validate(&self) -> Result<()> {
        if self.latent_dim == 0 || self.classes == 0 || self.data_dim == 0 {
            return Err(Error::InvalidInput("latent_dim, classes and data_dim must be positive".into()));
        }
        if let DecoderKind::Gaussian { sigma2 } = self.decoder {
            if !(sigma2 > 0.0 && sigma2.is_finite()) {
                return Err(Error::InvalidInput(format!("sigma2 must be positive, got {sigma2}")));
            }
        }
        Ok(())
    }
}

/// Prior, inference network and generator, trained together.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub prior: EbmPrior,
    pub encoder: AmortizedPosterior,
    pub decoder: Decoder,
}

impl Model {
    /// Fresh Xavier-initialized networks, drawn in prior, encoder, decoder order.
    pub fn new<R: Rng + ?Sized>(spec: &ModelSpec, rng: &mut R) -> Result<Self> {
        spec.validate()?;
        let prior = EbmPrior::new(spec.latent_dim, spec.classes, &spec.prior_hidden, rng)?;
        let encoder = AmortizedPosterior::new(spec.data_dim, spec.latent_dim, &spec.encoder_hidden, rng)?;
        let decoder = Decoder::new(spec.decoder, spec.latent_dim, spec.data_dim, &spec.decoder_hidden, rng)?;
        Ok(Model { prior, encoder, decoder })
    }

    pub fn spec(&self) -> ModelSpec {
        let hidden = |m: &Mlp| {
            let w = m.widths();
            w[1..w.len() - 1].to_vec()
        };
        ModelSpec {
            latent_dim: self.prior.latent_dim(),
            classes: self.prior.classes(),
            data_dim: self.decoder.obs_dim(),
            prior_hidden: hidden(self.prior.net()),
            encoder_hidden: hidden(self.encoder.net()),
            decoder_hidden: hidden(self.decoder.net()),
            decoder: self.decoder.kind(),
        }
    }

    pub fn all_finite(&self) -> bool {
        self.prior.net().all_finite() && self.encoder.net().all_finite() && self.decoder.net().all_finite()
    }
}
