//! Gradient estimators for the three parameter groups. All returned
//! gradients point in the ascent direction of their objective.

use crate::error::{Error, Result};
use crate::nets::{
    encode_on, kl_to_standard_normal_on, log_likelihood_on, marginal_energy_on, reparam_on, AmortizedPosterior,
    Decoder, EbmPrior, ParamGrads,
};
use crate::tensor::Tape;

fn check_rows(z: &[f64], d: usize, what: &str) -> Result<usize> {
    if z.is_empty() {
        return Err(Error::InvalidBatch);
    }
    if !z.len().is_multiple_of(d) {
        return Err(Error::InvalidShape(format!("{what}: {} values for dimension {d}", z.len())));
    }
    Ok(z.len() / d)
}

/// `mean grad_alpha F(z_pos) - mean grad_alpha F(z_neg)`.
pub fn prior_grad(prior: &EbmPrior, z_pos: &[f64], z_neg: &[f64]) -> Result<ParamGrads> {
    let d = prior.latent_dim();
    let n = check_rows(z_neg, d, "negative samples")?;
    prior_grad_weighted(prior, z_pos, z_neg, &vec![1.0 / n as f64; n])
}

/// Like [`prior_grad`] with the negative phase `sum_j w_j grad_alpha F(z_j)`.
/// With quadrature nodes and normalized prior weights this is the exact
/// negative phase.
pub fn prior_grad_weighted(prior: &EbmPrior, z_pos: &[f64], z_neg: &[f64], weights: &[f64]) -> Result<ParamGrads> {
    let d = prior.latent_dim();
    let np = check_rows(z_pos, d, "positive samples")?;
    let nn = check_rows(z_neg, d, "negative samples")?;
    if weights.len() != nn {
        return Err(Error::InvalidShape(format!("{} weights for {nn} negative samples", weights.len())));
    }
    let mut tape = Tape::new();
    let bound = prior.bind(&mut tape, true)?;
    let zp = tape.constant(np, d, z_pos.to_vec())?;
    let zn = tape.constant(nn, d, z_neg.to_vec())?;
    let fp = marginal_energy_on(&mut tape, &bound, zp)?;
    let pos = tape.mean(fp)?;
    let fnv = marginal_energy_on(&mut tape, &bound, zn)?;
    let w = tape.constant(nn, 1, weights.to_vec())?;
    let wf = tape.mul(fnv, w)?;
    let neg = tape.sum(wf)?;
    let obj = tape.sub(pos, neg)?;
    tape.backward(obj)?;
    bound.grads(&tape)
}

/// Terms and gradients of the unsupervised bound with respect to the
/// inference network and generator; the prior enters as a constant.
#[derive(Debug, Clone, PartialEq)]
pub struct PsiObjective {
    /// Batch mean of `recon - kl + energy`.
    pub value: f64,
    pub recon: f64,
    /// Mean `KL(q || N(0, I))`.
    pub kl: f64,
    /// Mean `F_alpha(z)` at the posterior samples.
    pub energy: f64,
    pub encoder: ParamGrads,
    pub decoder: ParamGrads,
    /// The reparameterized posterior samples, row-major `m x d`.
    pub z: Vec<f64>,
}

/// Batch mean of `E_q[log p(x|z)] - KL(q || N(0, I)) + E_q[F_alpha(z)]` with one
/// reparameterized sample per row (`eps` is `m x d`). The `log Z_alpha` term
/// does not depend on the encoder or generator and is omitted.
pub fn unsup_psi_objective(
    encoder: &AmortizedPosterior,
    decoder: &Decoder,
    prior: &EbmPrior,
    x: &[f64],
    eps: &[f64],
) -> Result<PsiObjective> {
    let dd = encoder.data_dim();
    let d = encoder.latent_dim();
    let m = check_rows(x, dd, "unlabeled batch")?;
    if eps.len() != m * d {
        return Err(Error::InvalidShape(format!("{} noise values for {m}x{d} latents", eps.len())));
    }
    let mut tape = Tape::new();
    let eb = encoder.bind(&mut tape, true)?;
    let db = decoder.bind(&mut tape, true)?;
    let pb = prior.bind(&mut tape, false)?;
    let xv = tape.constant(m, dd, x.to_vec())?;
    let (mu, lv) = encode_on(&mut tape, &eb, xv)?;
    let z = reparam_on(&mut tape, mu, lv, eps.to_vec())?;
    let ll = log_likelihood_on(&mut tape, decoder, &db, z, x)?;
    let kl = kl_to_standard_normal_on(&mut tape, mu, lv)?;
    let f = marginal_energy_on(&mut tape, &pb, z)?;
    let recon = tape.mean(ll)?;
    let kl_mean = tape.mean(kl)?;
    let energy = tape.mean(f)?;
    let obj = tape.sub(recon, kl_mean)?;
    let obj = tape.add(obj, energy)?;
    tape.backward(obj)?;
    Ok(PsiObjective {
        value: tape.scalar(obj)?,
        recon: tape.scalar(recon)?,
        kl: tape.scalar(kl_mean)?,
        energy: tape.scalar(energy)?,
        encoder: eb.grads(&tape)?,
        decoder: db.grads(&tape)?,
        z: tape.value(z)?.to_vec(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SupervisedObjective {
    /// Batch mean of `log (1/n_mc) sum_s p_alpha(y | z_s)`.
    pub value: f64,
    pub prior: ParamGrads,
    pub encoder: ParamGrads,
}

/// Labeled-data term: for each labeled row, the log of the Monte Carlo
/// average of `p_alpha(y | z_s)` over `n_mc` reparameterized draws. `eps` is
/// laid out draw-major: `n_mc` blocks of `n x d`.
pub fn supervised_objective(
    prior: &EbmPrior,
    encoder: &AmortizedPosterior,
    x: &[f64],
    labels: &[usize],
    eps: &[f64],
    n_mc: usize,
) -> Result<SupervisedObjective> {
    let dd = encoder.data_dim();
    let d = encoder.latent_dim();
    let k = prior.classes();
    let n = check_rows(x, dd, "labeled batch")?;
    if labels.len() != n {
        return Err(Error::InvalidShape(format!("{} labels for {n} rows", labels.len())));
    }
    if let Some(&bad) = labels.iter().find(|&&y| y >= k) {
        return Err(Error::InvalidLabel { label: bad as i64, classes: k });
    }
    if n_mc == 0 {
        return Err(Error::InvalidInput("n_mc must be at least 1".into()));
    }
    if eps.len() != n_mc * n * d {
        return Err(Error::InvalidShape(format!("{} noise values for {n_mc}x{n}x{d}", eps.len())));
    }
    let mut onehot = vec![0.0; n * k];
    for (r, &y) in labels.iter().enumerate() {
        onehot[r * k + y] = 1.0;
    }
    let mut tape = Tape::new();
    let pb = prior.bind(&mut tape, true)?;
    let eb = encoder.bind(&mut tape, true)?;
    let xv = tape.constant(n, dd, x.to_vec())?;
    let (mu, lv) = encode_on(&mut tape, &eb, xv)?;
    let mut cols = Vec::with_capacity(n_mc);
    for block in eps.chunks(n * d) {
        let z = reparam_on(&mut tape, mu, lv, block.to_vec())?;
        let logits = pb.forward(&mut tape, z)?;
        cols.push(tape.weighted_log_softmax(logits, onehot.clone())?);
    }
    let per_row = if n_mc == 1 {
        cols[0]
    } else {
        let all = tape.concat_cols(&cols)?;
        let lse = tape.logsumexp_rows(all)?;
        tape.add_const(lse, -(n_mc as f64).ln())?
    };
    let obj = tape.mean(per_row)?;
    tape.backward(obj)?;
    Ok(SupervisedObjective { value: tape.scalar(obj)?, prior: pb.grads(&tape)?, encoder: eb.grads(&tape)? })
}
