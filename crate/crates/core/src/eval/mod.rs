//! Test-time classification, accuracy, and the numerical oracles used to
//! verify training: quadrature, finite differences and the divergence
//! perturbation on a toy model.

pub mod diagnostics;
mod divergence;
mod gradcheck;
mod quadrature;

pub use divergence::{data_cross_entropy, divergence_perturbation, exact_posteriors, DivergenceTerms, ToyProblem};
pub use gradcheck::{finite_diff_check, numeric_gradient, relative_error, MAX_CHECKED_COORDS};
pub use quadrature::{
    binned_prior_mass, grid_expectation, histogram, quadrature_log_z, quadrature_posterior, quadrature_prior,
    total_variation, PriorQuadrature, QuadratureGrid,
};

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::nets::{AmortizedPosterior, EbmPrior};
use crate::par;
use crate::rng::{domain, stream};
use crate::tensor::softmax;

pub const DEFAULT_N_MC: usize = 100;

/// Class probabilities averaged over the given latent draws
/// `z_j = mu + exp(logvar / 2) * eps_j` (`eps` is `n_mc x d`).
pub fn classify_with_noise(
    prior: &EbmPrior,
    enc: &AmortizedPosterior,
    x: &[f64],
    eps: &[f64],
) -> Result<(Vec<f64>, usize)> {
    let (mu, lv) = enc.encode(x)?;
    average_probs(prior, &mu, &lv, eps)
}

fn average_probs(prior: &EbmPrior, mu: &[f64], lv: &[f64], eps: &[f64]) -> Result<(Vec<f64>, usize)> {
    let d = mu.len();
    if eps.is_empty() || !eps.len().is_multiple_of(d) {
        return Err(Error::InvalidShape(format!("{} noise values for latent dimension {d}", eps.len())));
    }
    let n_mc = eps.len() / d;
    let z: Vec<f64> =
        eps.chunks(d).flat_map(|e| mu.iter().zip(lv).zip(e).map(|((m, l), e)| m + (0.5 * l).exp() * e)).collect();
    if z.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteInput("latent draws".into()));
    }
    let k = prior.classes();
    let logits = prior.logits_batch(&z)?;
    let mut probs = vec![0.0; k];
    for row in logits.chunks(k) {
        probs.iter_mut().zip(softmax(row)?).for_each(|(p, s)| *p += s);
    }
    probs.iter_mut().for_each(|p| *p /= n_mc as f64);
    Ok((probs.clone(), argmax(&probs)))
}

/// First index of the largest entry.
pub fn argmax(v: &[f64]) -> usize {
    v.iter().enumerate().fold((0, f64::NEG_INFINITY), |(bi, bv), (i, &x)| if x > bv { (i, x) } else { (bi, bv) }).0
}

fn draws(seed: u64, example: usize, n_mc: usize, d: usize) -> Vec<f64> {
    let mut rng = stream(seed, domain::CLASSIFY, example as u64);
    (0..n_mc * d).map(|_| rng.sample(StandardNormal)).collect()
}

/// Monte Carlo class probabilities `(1/n_mc) sum_j softmax(f_alpha(z_j))`,
/// `z_j ~ q(z | x)`, and the argmax label.
pub fn classify(
    prior: &EbmPrior,
    enc: &AmortizedPosterior,
    x: &[f64],
    n_mc: usize,
    seed: u64,
) -> Result<(Vec<f64>, usize)> {
    if n_mc == 0 {
        return Err(Error::InvalidInput("n_mc must be at least 1".into()));
    }
    classify_with_noise(prior, enc, x, &draws(seed, 0, n_mc, enc.latent_dim()))
}

/// [`classify`] for every row of `xs`; row `i` draws from its own stream, so
/// row 0 agrees with a single [`classify`] call.
pub fn classify_batch(
    prior: &EbmPrior,
    enc: &AmortizedPosterior,
    xs: &[f64],
    n_mc: usize,
    seed: u64,
) -> Result<Vec<(Vec<f64>, usize)>> {
    if n_mc == 0 {
        return Err(Error::InvalidInput("n_mc must be at least 1".into()));
    }
    let dd = enc.data_dim();
    let d = enc.latent_dim();
    if !xs.len().is_multiple_of(dd) {
        return Err(Error::InvalidShape(format!("{} values for data dimension {dd}", xs.len())));
    }
    let n = xs.len() / dd;
    let chunks = par::map_chunks(n, par::CHUNK, |range| -> Result<Vec<(Vec<f64>, usize)>> {
        let (mu, lv) = enc.encode_batch(&xs[range.start * dd..range.end * dd])?;
        range
            .clone()
            .enumerate()
            .map(|(k, i)| {
                average_probs(prior, &mu[k * d..(k + 1) * d], &lv[k * d..(k + 1) * d], &draws(seed, i, n_mc, d))
            })
            .collect()
    });
    let mut out = Vec::with_capacity(n);
    for c in chunks {
        out.extend(c?);
    }
    Ok(out)
}

pub fn accuracy(preds: &[usize], labels: &[usize]) -> Result<f64> {
    if preds.is_empty() {
        return Err(Error::InvalidInput("accuracy of an empty set".into()));
    }
    if preds.len() != labels.len() {
        return Err(Error::InvalidShape(format!("{} predictions for {} labels", preds.len(), labels.len())));
    }
    Ok(preds.iter().zip(labels).filter(|(p, y)| p == y).count() as f64 / preds.len() as f64)
}

/// Accuracy restricted to each true class; `None` for absent classes.
pub fn per_class_accuracy(preds: &[usize], labels: &[usize], classes: usize) -> Vec<Option<f64>> {
    (0..classes)
        .map(|c| {
            let rows: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == c).collect();
            (!rows.is_empty()).then(|| rows.iter().filter(|&&i| preds[i] == c).count() as f64 / rows.len() as f64)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nets::{Activation, Mlp};
    use crate::tensor::Tensor;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn models(seed: u64, d: usize, k: usize) -> (EbmPrior, AmortizedPosterior) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (EbmPrior::new(d, k, &[12], &mut rng).unwrap(), AmortizedPosterior::new(3, d, &[8], &mut rng).unwrap())
    }

    #[test]
    fn zero_noise_collapses_to_class_posterior_at_the_mean() {
        let (prior, enc) = models(0, 2, 3);
        let x = [0.3, -1.0, 2.0];
        let (probs, label) = classify_with_noise(&prior, &enc, &x, &[0.0; 10]).unwrap();
        let (mu, _) = enc.encode(&x).unwrap();
        let exact = prior.class_posterior(&mu).unwrap();
        for (p, e) in probs.iter().zip(&exact) {
            assert!((p - e).abs() < 1e-15);
        }
        assert_eq!(label, argmax(&exact));
    }

    #[test]
    fn zero_energy_is_uniform() {
        let prior = EbmPrior::zeros(2, 4, &[6]).unwrap();
        let (_, enc) = models(1, 2, 4);
        for n_mc in [1, 7, 50] {
            let (p, _) = classify(&prior, &enc, &[1.0, 2.0, 3.0], n_mc, 3).unwrap();
            assert!(p.iter().all(|v| (v - 0.25).abs() < 1e-15));
        }
    }

    #[test]
    fn logit_shift_invariance() {
        let (prior, enc) = models(2, 2, 3);
        let mut shifted = prior.clone();
        let last = shifted.net_mut().layers_mut().last_mut().unwrap();
        last.bias.data_mut().iter_mut().for_each(|b| *b += 7.5);
        let x = [0.1, 0.2, 0.3];
        let (a, la) = classify(&prior, &enc, &x, 20, 1).unwrap();
        let (b, lb) = classify(&shifted, &enc, &x, 20, 1).unwrap();
        assert_eq!(la, lb);
        assert!(a.iter().zip(&b).all(|(p, q)| (p - q).abs() <= 1e-12));
    }

    #[test]
    fn monte_carlo_matches_quadrature() {
        // d = 1: E_q[softmax(f(z))] on a 2048-point grid over mu +- 8 sd.
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let prior = EbmPrior::new(1, 3, &[8], &mut rng).unwrap();
        let enc = AmortizedPosterior::from_net(
            Mlp::from_params(
                Activation::Relu,
                vec![Tensor::matrix(2, 1, vec![0.5, 0.0]).unwrap(), Tensor::vector(vec![0.2, -0.7]).unwrap()],
            )
            .unwrap(),
        )
        .unwrap();
        let x = [1.0];
        let (mu, lv) = enc.encode(&x).unwrap();
        let sd = (0.5 * lv[0]).exp();
        let n = 2048;
        let h = 16.0 * sd / (n - 1) as f64;
        let mut expect = [0.0; 3];
        for i in 0..n {
            let z = mu[0] - 8.0 * sd + h * i as f64;
            let w = if i == 0 || i == n - 1 { 0.5 * h } else { h };
            let dens = (-0.5 * ((z - mu[0]) / sd).powi(2)).exp() / (sd * (2.0 * std::f64::consts::PI).sqrt());
            let p = prior.class_posterior(&[z]).unwrap();
            expect.iter_mut().zip(p).for_each(|(e, p)| *e += w * dens * p);
        }
        let (probs, _) = classify(&prior, &enc, &x, 2000, 11).unwrap();
        for (p, e) in probs.iter().zip(expect) {
            assert!((p - e).abs() <= 0.01, "{p} vs {e}");
        }
    }

    #[test]
    fn batch_agrees_with_single_calls() {
        let (prior, enc) = models(5, 2, 3);
        let xs = [0.1, 0.2, 0.3, -1.0, 0.0, 2.0];
        let batch = classify_batch(&prior, &enc, &xs, 9, 4).unwrap();
        assert_eq!(batch[0], classify(&prior, &enc, &xs[..3], 9, 4).unwrap());
        assert_eq!(batch, classify_batch(&prior, &enc, &xs, 9, 4).unwrap());
    }

    #[test]
    fn accuracy_values() {
        assert_eq!(accuracy(&[0, 1, 2], &[0, 1, 2]).unwrap(), 1.0);
        assert_eq!(accuracy(&[1, 0], &[0, 1]).unwrap(), 0.0);
        assert_eq!(accuracy(&[1, 0, 1, 1], &[1, 1, 0, 1]).unwrap(), 0.5);
        assert!(accuracy(&[], &[]).is_err());
        assert_eq!(per_class_accuracy(&[0, 0, 1], &[0, 1, 1], 3), vec![Some(1.0), Some(0.5), None]);
    }
}
