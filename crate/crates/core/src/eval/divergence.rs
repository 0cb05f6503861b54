//! The divergence-perturbation view of learning, evaluated exactly on a
//! low-dimensional toy model.
//!
//! `Delta = KL(p_data || p_theta) + KL(q+(z|x) || p_theta(z|x)) - KL(q-(z) || p_alpha(z))`,
//! with the positive-phase term averaged over the data. Both samplers are
//! given as frozen log-densities on the quadrature grid, so `Delta` is a
//! plain function of the model parameters.
//!
//! The data term is reported as the cross-entropy `E_data[-log p_theta(x)]`:
//! for an empirical data distribution the entropy is not finite, and it does
//! not depend on the parameters anyway.

use rand::Rng;
use rand_distr::StandardNormal;

use super::quadrature::{posterior_from_prior, quadrature_prior, QuadratureGrid};
use crate::error::{Error, Result};
use crate::nets::{Decoder, DecoderKind, EbmPrior};
use crate::rng::{domain, stream};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DivergenceTerms {
    pub delta: f64,
    pub data_kl: f64,
    pub positive_kl: f64,
    pub negative_kl: f64,
}

/// `sum_i w_i q_i (log q_i - log p_i)`, skipping nodes where `q` vanishes.
fn grid_kl(weights: &[f64], log_q: &[f64], log_p: &[f64]) -> f64 {
    weights
        .iter()
        .zip(log_q)
        .zip(log_p)
        .map(|((w, lq), lp)| {
            let q = lq.exp();
            if q == 0.0 {
                0.0
            } else {
                w * q * (lq - lp)
            }
        })
        .sum()
}

fn check_dims(prior: &EbmPrior, dec: &Decoder) -> Result<()> {
    if prior.latent_dim() > 2 {
        return Err(Error::UnsupportedDimension(prior.latent_dim()));
    }
    if dec.obs_dim() > 2 {
        return Err(Error::UnsupportedDimension(dec.obs_dim()));
    }
    Ok(())
}

/// `q_plus[r]` is `log q+(z | x_r)` on the grid for data row `r`; `q_minus` is
/// `log q-(z)` on the grid.
pub fn divergence_perturbation(
    prior: &EbmPrior,
    dec: &Decoder,
    q_plus: &[Vec<f64>],
    q_minus: &[f64],
    data: &[f64],
    grid: &QuadratureGrid,
) -> Result<DivergenceTerms> {
    check_dims(prior, dec)?;
    let dd = dec.obs_dim();
    let n = dec.check_observations(data)?;
    if q_plus.len() != n || q_plus.iter().any(|q| q.len() != grid.len()) || q_minus.len() != grid.len() {
        return Err(Error::InvalidShape("sampler densities do not match data and grid".into()));
    }
    let pq = quadrature_prior(prior, grid)?;
    let w = grid.weights();
    let (mut data_kl, mut positive_kl) = (0.0, 0.0);
    for (x, lq) in data.chunks(dd).zip(q_plus) {
        let (log_px, log_post) = posterior_from_prior(&pq, dec, x, grid)?;
        data_kl -= log_px / n as f64;
        positive_kl += grid_kl(&w, lq, &log_post) / n as f64;
    }
    let negative_kl = grid_kl(&w, q_minus, &pq.log_density);
    Ok(DivergenceTerms { delta: data_kl + positive_kl - negative_kl, data_kl, positive_kl, negative_kl })
}

/// Exact posteriors `log p_theta(z | x_r)` on the grid, one per data row.
pub fn exact_posteriors(prior: &EbmPrior, dec: &Decoder, data: &[f64], grid: &QuadratureGrid) -> Result<Vec<Vec<f64>>> {
    check_dims(prior, dec)?;
    let pq = quadrature_prior(prior, grid)?;
    data.chunks(dec.obs_dim()).map(|x| Ok(posterior_from_prior(&pq, dec, x, grid)?.1)).collect()
}

/// `E_data[-log p_theta(x)]` by quadrature.
pub fn data_cross_entropy(prior: &EbmPrior, dec: &Decoder, data: &[f64], grid: &QuadratureGrid) -> Result<f64> {
    check_dims(prior, dec)?;
    let pq = quadrature_prior(prior, grid)?;
    let rows: Vec<&[f64]> = data.chunks(dec.obs_dim()).collect();
    let mut total = 0.0;
    for x in &rows {
        total -= posterior_from_prior(&pq, dec, x, grid)?.0;
    }
    Ok(total / rows.len() as f64)
}

/// A d = 1, D = 1 model with a two-class prior, plus 40 observations from a
/// two-component mixture at +-1.5.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyProblem {
    pub prior: EbmPrior,
    pub decoder: Decoder,
    pub data: Vec<f64>,
}

impl ToyProblem {
    pub fn new(seed: u64) -> Result<Self> {
        let mut rng = stream(seed, domain::DIAGNOSE, 1);
        let prior = EbmPrior::new(1, 2, &[8], &mut rng)?;
        let decoder = Decoder::new(DecoderKind::Gaussian { sigma2: 0.25 }, 1, 1, &[8], &mut rng)?;
        let data =
            (0..40).map(|i| if i % 2 == 0 { 1.5 } else { -1.5 } + 0.5 * rng.sample::<f64, _>(StandardNormal)).collect();
        Ok(ToyProblem { prior, decoder, data })
    }

    /// Prior parameters followed by generator parameters.
    pub fn theta(&self) -> Vec<f64> {
        let mut t = self.prior.net().flat_params();
        t.extend(self.decoder.net().flat_params());
        t
    }

    pub fn with_theta(&self, theta: &[f64]) -> Result<Self> {
        let mut out = self.clone();
        let k = self.prior.net().param_count();
        if theta.len() != k + self.decoder.net().param_count() {
            return Err(Error::InvalidShape("parameter vector length".into()));
        }
        out.prior.net_mut().set_flat_params(&theta[..k])?;
        out.decoder.net_mut().set_flat_params(&theta[k..])?;
        Ok(out)
    }
}
