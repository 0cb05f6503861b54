//! Langevin dynamics in the latent space.
//!
//! Prior sampling keeps a pool of persistent chains that survive across
//! training iterations; each chain owns a keyed random stream so parallel
//! and serial updates produce the same trajectories. Posterior sampling is
//! only used for diagnostics, since training amortizes the posterior with
//! the inference network.

use log::warn;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::nets::{log_likelihood_on, marginal_energy_on, Decoder, EbmPrior};
use crate::par;
use crate::rng::{domain, stream, stream_at};
use crate::tensor::Tape;

/// `grad_z log p_alpha(z) = grad_z F_alpha(z) - z` for a row-major batch.
pub fn prior_score_batch(prior: &EbmPrior, z: &[f64]) -> Result<Vec<f64>> {
    let d = prior.latent_dim();
    if z.is_empty() || !z.len().is_multiple_of(d) {
        return Err(Error::InvalidShape(format!("latent batch of {} for dimension {d}", z.len())));
    }
    if z.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteInput("prior score input".into()));
    }
    let mut tape = Tape::new();
    let bound = prior.bind(&mut tape, false)?;
    let zv = tape.variable(z.len() / d, d, z.to_vec())?;
    let energy = marginal_energy_on(&mut tape, &bound, zv)?;
    let total = tape.sum(energy)?;
    tape.backward(total)?;
    let mut g = tape.grad_or_zeros(zv)?;
    g.iter_mut().zip(z).for_each(|(g, z)| *g -= z);
    Ok(g)
}

/// Score of the prior at a single latent vector.
pub fn prior_score(prior: &EbmPrior, z: &[f64]) -> Result<Vec<f64>> {
    if z.len() != prior.latent_dim() {
        return Err(Error::InvalidShape(format!(
            "latent vector of length {}, expected {}",
            z.len(),
            prior.latent_dim()
        )));
    }
    prior_score_batch(prior, z)
}

/// `grad_z [F_alpha(z) - |z|^2 / 2 + log p_beta(x | z)]` for rows of `z`
/// paired with rows of `x`.
pub fn posterior_score_batch(prior: &EbmPrior, dec: &Decoder, z: &[f64], x: &[f64]) -> Result<Vec<f64>> {
    let d = prior.latent_dim();
    if z.is_empty() || !z.len().is_multiple_of(d) {
        return Err(Error::InvalidShape(format!("latent batch of {} for dimension {d}", z.len())));
    }
    if z.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteInput("posterior score input".into()));
    }
    let n = z.len() / d;
    let mut tape = Tape::new();
    let pb = prior.bind(&mut tape, false)?;
    let db = dec.bind(&mut tape, false)?;
    let zv = tape.variable(n, d, z.to_vec())?;
    let energy = marginal_energy_on(&mut tape, &pb, zv)?;
    let ll = log_likelihood_on(&mut tape, dec, &db, zv, x)?;
    let joint = tape.add(energy, ll)?;
    let total = tape.sum(joint)?;
    tape.backward(total)?;
    let mut g = tape.grad_or_zeros(zv)?;
    g.iter_mut().zip(z).for_each(|(g, z)| *g -= z);
    Ok(g)
}

pub fn posterior_score(prior: &EbmPrior, dec: &Decoder, z: &[f64], x: &[f64]) -> Result<Vec<f64>> {
    if z.len() != prior.latent_dim() {
        return Err(Error::InvalidShape("latent vector length".into()));
    }
    posterior_score_batch(prior, dec, z, x)
}

/// One unadjusted Langevin update `z + (s^2 / 2) score + s noise`, where
/// `noise` is a standard normal draw. A standalone step reports divergence
/// as chain 0, step 0.
pub fn langevin_step(z: &[f64], score: &[f64], step_size: f64, noise: &[f64]) -> Result<Vec<f64>> {
    if z.len() != score.len() || z.len() != noise.len() {
        return Err(Error::InvalidShape("langevin step operands differ in length".into()));
    }
    if step_size.is_nan() || step_size <= 0.0 {
        return Err(Error::InvalidInput(format!("step size must be positive, got {step_size}")));
    }
    let mut out = z.to_vec();
    if !langevin_update(&mut out, score, step_size, noise) {
        return Err(Error::ChainDiverged { chain: 0, step: 0 });
    }
    Ok(out)
}

/// In-place update; returns whether the result is finite.
fn langevin_update(z: &mut [f64], score: &[f64], s: f64, noise: &[f64]) -> bool {
    let half = 0.5 * s * s;
    let mut finite = true;
    for ((z, g), e) in z.iter_mut().zip(score).zip(noise) {
        *z += half * g + s * e;
        finite &= z.is_finite();
    }
    finite
}

fn draw_normal(rng: &mut ChaCha8Rng, out: &mut [f64]) {
    out.iter_mut().for_each(|v| *v = rng.sample(StandardNormal));
}

/// Chains whose state was non-finite after an update and were reset to a
/// fresh draw from `N(0, I)`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ChainUpdate {
    /// Post-update states of the selected chains, row-major `m x d`.
    pub samples: Vec<f64>,
    pub diverged: Vec<Error>,
}

/// Pool of `L` persistent Langevin chains targeting the prior.
#[derive(Debug, Clone, PartialEq)]
pub struct PersistentChains {
    dim: usize,
    states: Vec<f64>,
    seed: u64,
    word_pos: Vec<u128>,
    pub step_size: f64,
    pub steps_per_update: usize,
}

impl PersistentChains {
    /// `count` chains initialized i.i.d. from `N(0, I_dim)`; chain `i` draws
    /// from stream `i` of `seed`.
    pub fn new(count: usize, dim: usize, seed: u64, step_size: f64, steps_per_update: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidShape("latent dimension must be positive".into()));
        }
        if !(step_size > 0.0 && step_size.is_finite()) {
            return Err(Error::InvalidInput(format!("step size must be positive, got {step_size}")));
        }
        let mut states = vec![0.0; count * dim];
        let mut word_pos = Vec::with_capacity(count);
        for (i, row) in states.chunks_mut(dim).enumerate() {
            let mut rng = stream(seed, domain::CHAIN, i as u64);
            draw_normal(&mut rng, row);
            word_pos.push(rng.get_word_pos());
        }
        Ok(PersistentChains { dim, states, seed, word_pos, step_size, steps_per_update })
    }

    /// Restores chains from checkpointed parts.
    pub fn from_parts(
        dim: usize,
        states: Vec<f64>,
        seed: u64,
        word_pos: Vec<u128>,
        step_size: f64,
        steps_per_update: usize,
    ) -> Result<Self> {
        if dim == 0 || states.len() != dim * word_pos.len() {
            return Err(Error::InvalidShape("chain states do not match chain count".into()));
        }
        if states.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteInput("chain states".into()));
        }
        Ok(PersistentChains { dim, states, seed, word_pos, step_size, steps_per_update })
    }

    pub fn len(&self) -> usize {
        self.word_pos.len()
    }

    pub fn is_empty(&self) -> bool {
        self.word_pos.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn states(&self) -> &[f64] {
        &self.states
    }

    pub fn state(&self, i: usize) -> &[f64] {
        &self.states[i * self.dim..(i + 1) * self.dim]
    }

    pub fn word_positions(&self) -> &[u128] {
        &self.word_pos
    }

    /// Advances each chain in `indices` by `steps_per_update` Langevin steps
    /// under the prior score and returns their new states in `indices` order.
    ///
    /// Only a read-only view of the prior is used. A chain whose state turns
    /// non-finite is logged, redrawn from `N(0, I)` and keeps going; the
    /// event is reported in [`ChainUpdate::diverged`].
    pub fn update(&mut self, prior: &EbmPrior, indices: &[usize]) -> Result<ChainUpdate> {
        if prior.latent_dim() != self.dim {
            return Err(Error::InvalidShape(format!(
                "prior dimension {} for chains of dimension {}",
                prior.latent_dim(),
                self.dim
            )));
        }
        let mut seen = vec![false; self.len()];
        for &i in indices {
            if i >= self.len() {
                return Err(Error::InvalidInput(format!("chain index {i} out of {}", self.len())));
            }
            if std::mem::replace(&mut seen[i], true) {
                return Err(Error::InvalidInput(format!("chain index {i} selected twice")));
            }
        }
        let d = self.dim;
        let (s, steps, seed) = (self.step_size, self.steps_per_update, self.seed);
        let states = &self.states;
        let word_pos = &self.word_pos;
        let results = par::map_chunks(indices.len(), par::CHUNK, |range| {
            let ids = &indices[range];
            let mut z: Vec<f64> = ids.iter().flat_map(|&i| states[i * d..(i + 1) * d].to_vec()).collect();
            let mut rngs: Vec<ChaCha8Rng> =
                ids.iter().map(|&i| stream_at(seed, domain::CHAIN, i as u64, word_pos[i])).collect();
            let diverged = advance(prior, &mut z, &mut rngs, ids, steps, s)?;
            let pos: Vec<u128> = rngs.iter().map(|r| r.get_word_pos()).collect();
            Ok::<_, Error>((z, pos, diverged))
        });
        let mut out = ChainUpdate { samples: Vec::with_capacity(indices.len() * d), diverged: Vec::new() };
        let mut offset = 0;
        for r in results {
            let (z, pos, diverged): (Vec<f64>, Vec<u128>, Vec<Error>) = r?;
            for (k, row) in z.chunks(d).enumerate() {
                let i = indices[offset + k];
                self.states[i * d..(i + 1) * d].copy_from_slice(row);
                self.word_pos[i] = pos[k];
            }
            offset += pos.len();
            out.samples.extend_from_slice(&z);
            out.diverged.extend(diverged);
        }
        Ok(out)
    }

    /// Advances every chain.
    pub fn update_all(&mut self, prior: &EbmPrior) -> Result<ChainUpdate> {
        let all: Vec<usize> = (0..self.len()).collect();
        self.update(prior, &all)
    }
}

/// Runs `steps` batched Langevin steps on the rows of `z`.
fn advance(
    prior: &EbmPrior,
    z: &mut [f64],
    rngs: &mut [ChaCha8Rng],
    ids: &[usize],
    steps: usize,
    s: f64,
) -> Result<Vec<Error>> {
    let d = prior.latent_dim();
    let mut diverged = Vec::new();
    let mut noise = vec![0.0; d];
    for step in 0..steps {
        let score = robust_scores(prior, z)?;
        for (k, (row, rng)) in z.chunks_mut(d).zip(rngs.iter_mut()).enumerate() {
            draw_normal(rng, &mut noise);
            let finite = match &score[k] {
                Some(g) => langevin_update(row, g, s, &noise),
                None => false,
            };
            if !finite {
                warn!("chain {} diverged at step {step}; redrawing from N(0, I)", ids[k]);
                draw_normal(rng, row);
                diverged.push(Error::ChainDiverged { chain: ids[k], step });
            }
        }
    }
    Ok(diverged)
}

/// Per-row scores; rows whose score cannot be evaluated come back as `None`.
fn robust_scores(prior: &EbmPrior, z: &[f64]) -> Result<Vec<Option<Vec<f64>>>> {
    let d = prior.latent_dim();
    match prior_score_batch(prior, z) {
        Ok(g) => Ok(g.chunks(d).map(|r| Some(r.to_vec())).collect()),
        Err(Error::NonFiniteInput(_)) => Ok(z
            .chunks(d)
            .map(|row| prior_score_batch(prior, row).ok().filter(|g| g.iter().all(|v| v.is_finite())))
            .collect()),
        Err(e) => Err(e),
    }
}

/// Posterior Langevin for one observation: `chains` independent chains
/// started at `N(0, I)`, `burn_in` discarded steps, then `samples` states
/// recorded every `thin` steps. Returns row-major samples.
#[allow(clippy::too_many_arguments)]
pub fn posterior_langevin(
    prior: &EbmPrior,
    dec: &Decoder,
    x: &[f64],
    chains: usize,
    burn_in: usize,
    samples: usize,
    thin: usize,
    step_size: f64,
    seed: u64,
) -> Result<Vec<f64>> {
    let d = prior.latent_dim();
    let mut rngs: Vec<ChaCha8Rng> = (0..chains).map(|i| stream(seed, domain::DIAGNOSE, i as u64)).collect();
    let mut z = vec![0.0; chains * d];
    for (row, rng) in z.chunks_mut(d).zip(rngs.iter_mut()) {
        draw_normal(rng, row);
    }
    let xs: Vec<f64> = (0..chains).flat_map(|_| x.iter().copied()).collect();
    let mut noise = vec![0.0; d];
    let mut out = Vec::with_capacity(chains * samples * d);
    let thin = thin.max(1);
    for step in 0..burn_in + samples * thin {
        let score = posterior_score_batch(prior, dec, &z, &xs)?;
        for (k, (row, rng)) in z.chunks_mut(d).zip(rngs.iter_mut()).enumerate() {
            draw_normal(rng, &mut noise);
            if !langevin_update(row, &score[k * d..(k + 1) * d], step_size, &noise) {
                return Err(Error::ChainDiverged { chain: k, step });
            }
        }
        if step >= burn_in && (step - burn_in + 1).is_multiple_of(thin) {
            out.extend_from_slice(&z);
        }
    }
    Ok(out)
}
