//! Joint training of prior, inference network and generator.
//!
//! One iteration draws (in this order, from the trainer stream) the chain
//! indices, the unlabeled reparameterization noise and the labeled noise;
//! evaluates all three gradients at the current parameters; then applies
//! three independent Adam updates: prior (`eta_prior`), inference network
//! plus generator (`eta_psi`) and the supervised term on prior plus
//! inference network (`eta_sup`).

mod adam;
mod init;
mod objectives;

pub use adam::{adam_step, Adam, AdamConfig};
pub use init::xavier_init;
pub use objectives::{
    prior_grad, prior_grad_weighted, supervised_objective, unsup_psi_objective, PsiObjective, SupervisedObjective,
};

use log::warn;
use rand::seq::index::sample;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nets::{Model, ModelSpec, ParamGrads};
use crate::rng::{domain, stream};
use crate::sampler::PersistentChains;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub iterations: u64,
    pub eta_prior: f64,
    pub eta_psi: f64,
    pub eta_sup: f64,
    /// Unlabeled rows per iteration (`m`).
    pub batch_unlabeled: usize,
    /// Labeled rows per iteration (`n`); capped by the number of labels.
    pub batch_labeled: usize,
    /// Persistent chain pool size (`L`).
    pub chains: usize,
    pub langevin_steps: usize,
    pub step_size: f64,
    /// Reparameterized draws per labeled row in the supervised term.
    pub n_mc_label: usize,
    /// Consecutive iterations with a skipped update before giving up.
    pub max_nonfinite_retries: usize,
    pub adam: AdamConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            iterations: 2000,
            eta_prior: 2e-4,
            eta_psi: 1e-4,
            eta_sup: 1e-4,
            batch_unlabeled: 100,
            batch_labeled: 100,
            chains: 1000,
            langevin_steps: 20,
            step_size: 0.6,
            n_mc_label: 1,
            max_nonfinite_retries: 5,
            adam: AdamConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, lr) in [("eta_prior", self.eta_prior), ("eta_psi", self.eta_psi), ("eta_sup", self.eta_sup)] {
            if !(lr >= 0.0 && lr.is_finite()) {
                return Err(Error::InvalidInput(format!("{name} must be a finite non-negative rate, got {lr}")));
            }
        }
        if self.batch_unlabeled == 0 || self.chains < self.batch_unlabeled {
            return Err(Error::InvalidInput(format!(
                "need 0 < batch_unlabeled <= chains, got {} and {}",
                self.batch_unlabeled, self.chains
            )));
        }
        if !(self.step_size > 0.0 && self.step_size.is_finite()) {
            return Err(Error::InvalidInput(format!("step_size must be positive, got {}", self.step_size)));
        }
        if self.n_mc_label == 0 {
            return Err(Error::InvalidInput("n_mc_label must be at least 1".into()));
        }
        Ok(())
    }
}

/// Adam states, one per (objective, network) pair.
#[derive(Debug, Clone, PartialEq)]
pub struct Optimizers {
    pub prior: Adam,
    pub encoder: Adam,
    pub decoder: Adam,
    pub sup_prior: Adam,
    pub sup_encoder: Adam,
}

impl Optimizers {
    pub fn new(model: &Model, cfg: AdamConfig) -> Self {
        Optimizers {
            prior: Adam::new(model.prior.net(), cfg),
            encoder: Adam::new(model.encoder.net(), cfg),
            decoder: Adam::new(model.decoder.net(), cfg),
            sup_prior: Adam::new(model.prior.net(), cfg),
            sup_encoder: Adam::new(model.encoder.net(), cfg),
        }
    }

    pub fn named(&self) -> [(&'static str, &Adam); 5] {
        [
            ("prior", &self.prior),
            ("encoder", &self.encoder),
            ("decoder", &self.decoder),
            ("sup_prior", &self.sup_prior),
            ("sup_encoder", &self.sup_encoder),
        ]
    }

    pub fn named_mut(&mut self) -> [(&'static str, &mut Adam); 5] {
        [
            ("prior", &mut self.prior),
            ("encoder", &mut self.encoder),
            ("decoder", &mut self.decoder),
            ("sup_prior", &mut self.sup_prior),
            ("sup_encoder", &mut self.sup_encoder),
        ]
    }
}

/// Everything that evolves during training.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    pub seed: u64,
    pub config: TrainConfig,
    pub model: Model,
    pub chains: PersistentChains,
    pub optim: Optimizers,
    pub iteration: u64,
    pub rng: ChaCha8Rng,
    pub nonfinite_streak: usize,
    /// Record batch noise and gradients in each [`StepReport`].
    pub capture: bool,
}

/// Inputs and ψ gradients of one step, for external verification.
#[derive(Debug, Clone, PartialEq)]
pub struct StepCapture {
    pub chain_indices: Vec<usize>,
    pub eps_unlabeled: Vec<f64>,
    pub eps_labeled: Vec<f64>,
    pub encoder: ParamGrads,
    pub decoder: ParamGrads,
    pub prior: ParamGrads,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepReport {
    pub iteration: u64,
    /// Mean `recon - kl + F` on the unlabeled batch (no `log Z` term).
    pub psi_objective: f64,
    pub recon: f64,
    pub kl: f64,
    /// Mean `F_alpha` at the posterior samples.
    pub energy_pos: f64,
    /// Mean `F_alpha` at the chain samples.
    pub energy_neg: f64,
    pub supervised: Option<f64>,
    pub diverged: Vec<Error>,
    /// Parameter groups whose update was skipped.
    pub skipped: Vec<&'static str>,
    pub capture: Option<StepCapture>,
}

impl TrainState {
    /// Fresh model, chains and optimizers for `seed`.
    pub fn new(spec: &ModelSpec, config: TrainConfig, seed: u64) -> Result<Self> {
        spec.validate()?;
        config.validate()?;
        let model = Model::new(spec, &mut stream(seed, domain::INIT, 0))?;
        let chains =
            PersistentChains::new(config.chains, spec.latent_dim, seed, config.step_size, config.langevin_steps)?;
        Ok(TrainState {
            seed,
            optim: Optimizers::new(&model, config.adam),
            config,
            model,
            chains,
            iteration: 0,
            rng: stream(seed, domain::TRAINER, 0),
            nonfinite_streak: 0,
            capture: false,
        })
    }

    fn normals(&mut self, n: usize) -> Vec<f64> {
        (0..n).map(|_| self.rng.sample(StandardNormal)).collect()
    }

    /// One iteration on an unlabeled batch (`m x D`, row-major) and a labeled
    /// batch (possibly empty).
    pub fn step(&mut self, x_unlabeled: &[f64], x_labeled: &[f64], labels: &[usize]) -> Result<StepReport> {
        let d = self.model.prior.latent_dim();
        let dd = self.model.encoder.data_dim();
        if x_unlabeled.is_empty() || !x_unlabeled.len().is_multiple_of(dd) {
            return Err(Error::InvalidBatch);
        }
        let m = x_unlabeled.len() / dd;
        if m > self.chains.len() {
            return Err(Error::InvalidInput(format!("batch of {m} exceeds {} chains", self.chains.len())));
        }
        if x_labeled.len() != labels.len() * dd {
            return Err(Error::InvalidShape(format!("{} labeled values for {} labels", x_labeled.len(), labels.len())));
        }
        let n = labels.len();
        let n_mc = self.config.n_mc_label;

        let indices = sample(&mut self.rng, self.chains.len(), m).into_vec();
        let eps_u = self.normals(m * d);
        let eps_l = self.normals(n_mc * n * d);

        let psi = unsup_psi_objective(&self.model.encoder, &self.model.decoder, &self.model.prior, x_unlabeled, &eps_u);
        self.chains.step_size = self.config.step_size;
        self.chains.steps_per_update = self.config.langevin_steps;
        let update = self.chains.update(&self.model.prior, &indices)?;
        let energy_neg = mean(&self.model.prior.marginal_energy_batch(&update.samples)?);
        let g_prior = match &psi {
            Ok(p) => prior_grad(&self.model.prior, &p.z, &update.samples),
            Err(e) => Err(e.clone()),
        };
        let sup = if n > 0 {
            Some(supervised_objective(&self.model.prior, &self.model.encoder, x_labeled, labels, &eps_l, n_mc))
        } else {
            None
        };

        let cfg = self.config.clone();
        let mut skipped = Vec::new();
        let model = &mut self.model;
        let optim = &mut self.optim;
        let mut apply =
            |name: &'static str, adam: &mut Adam, net: &mut crate::nets::Mlp, g: Result<&ParamGrads>, lr: f64| {
                let res = g.and_then(|g| {
                    let mut desc = g.clone();
                    desc.scale(-1.0);
                    adam.step(name, net, &desc, lr)
                });
                match res {
                    Ok(()) => Ok(()),
                    Err(e @ (Error::NonFiniteGradient(_) | Error::NonFiniteInput(_))) => {
                        warn!("skipping {name} update: {e}");
                        skipped.push(name);
                        Ok(())
                    }
                    Err(e) => Err(e),
                }
            };
        apply("prior", &mut optim.prior, model.prior.net_mut(), g_prior.as_ref().map_err(Clone::clone), cfg.eta_prior)?;
        let psi_ref = psi.as_ref().map_err(Clone::clone);
        apply(
            "encoder",
            &mut optim.encoder,
            model.encoder.net_mut(),
            psi_ref.clone().map(|p| &p.encoder),
            cfg.eta_psi,
        )?;
        apply("decoder", &mut optim.decoder, model.decoder.net_mut(), psi_ref.map(|p| &p.decoder), cfg.eta_psi)?;
        if let Some(sup) = &sup {
            let sref = sup.as_ref().map_err(Clone::clone);
            apply(
                "sup_prior",
                &mut optim.sup_prior,
                model.prior.net_mut(),
                sref.clone().map(|s| &s.prior),
                cfg.eta_sup,
            )?;
            apply(
                "sup_encoder",
                &mut optim.sup_encoder,
                model.encoder.net_mut(),
                sref.map(|s| &s.encoder),
                cfg.eta_sup,
            )?;
        }
        if !model.all_finite() {
            return Err(Error::NonFiniteGradient("parameters became non-finite".into()));
        }
        if skipped.is_empty() {
            self.nonfinite_streak = 0;
        } else {
            self.nonfinite_streak += 1;
            if self.nonfinite_streak > cfg.max_nonfinite_retries {
                return Err(Error::NonFiniteGradient(format!(
                    "{} consecutive iterations with skipped updates ({})",
                    self.nonfinite_streak,
                    skipped.join(", ")
                )));
            }
        }
        self.iteration += 1;

        let (psi_objective, recon, kl, energy_pos) = match &psi {
            Ok(p) => (p.value, p.recon, p.kl, p.energy),
            Err(_) => (f64::NAN, f64::NAN, f64::NAN, f64::NAN),
        };
        let capture = if self.capture {
            let zeros_or = |g: Option<&ParamGrads>, net: &crate::nets::Mlp| {
                g.cloned().unwrap_or_else(|| ParamGrads::zeros_like(net))
            };
            Some(StepCapture {
                chain_indices: indices,
                eps_unlabeled: eps_u,
                eps_labeled: eps_l,
                encoder: zeros_or(psi.as_ref().ok().map(|p| &p.encoder), self.model.encoder.net()),
                decoder: zeros_or(psi.as_ref().ok().map(|p| &p.decoder), self.model.decoder.net()),
                prior: zeros_or(g_prior.as_ref().ok(), self.model.prior.net()),
            })
        } else {
            None
        };
        Ok(StepReport {
            iteration: self.iteration,
            psi_objective,
            recon,
            kl,
            energy_pos,
            energy_neg,
            supervised: sup.and_then(|s| s.ok()).map(|s| s.value),
            diverged: update.diverged,
            skipped,
            capture,
        })
    }
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nets::DecoderKind;
    use rand::SeedableRng;

    fn spec() -> ModelSpec {
        ModelSpec {
            latent_dim: 2,
            classes: 2,
            data_dim: 2,
            prior_hidden: vec![16],
            encoder_hidden: vec![16],
            decoder_hidden: vec![16],
            decoder: DecoderKind::Gaussian { sigma2: 0.1 },
        }
    }

    fn blobs(seed: u64, n: usize) -> (Vec<f64>, Vec<usize>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut x = Vec::new();
        let mut y = Vec::new();
        for i in 0..n {
            let c = i % 2;
            let centre = if c == 0 { -2.0 } else { 2.0 };
            x.push(centre + 0.3 * rng.sample::<f64, _>(StandardNormal));
            x.push(centre + 0.3 * rng.sample::<f64, _>(StandardNormal));
            y.push(c);
        }
        (x, y)
    }

    fn small_config() -> TrainConfig {
        TrainConfig { batch_unlabeled: 20, batch_labeled: 10, chains: 50, langevin_steps: 5, ..TrainConfig::default() }
    }

    #[test]
    fn zero_learning_rates_leave_parameters_bit_identical() {
        let cfg = TrainConfig { eta_prior: 0.0, eta_psi: 0.0, eta_sup: 0.0, ..small_config() };
        let mut st = TrainState::new(&spec(), cfg, 3).unwrap();
        let before = st.model.clone();
        let (x, y) = blobs(0, 20);
        for _ in 0..10 {
            st.step(&x, &x[..20], &y[..10]).unwrap();
        }
        assert_eq!(st.model, before);
        assert_eq!(st.iteration, 10);
    }

    #[test]
    fn same_seed_same_trajectory() {
        let (x, y) = blobs(1, 20);
        let run = || {
            let mut st = TrainState::new(&spec(), small_config(), 11).unwrap();
            let mut trace = Vec::new();
            for _ in 0..5 {
                trace.push(st.step(&x, &x[..20], &y[..10]).unwrap().psi_objective.to_bits());
            }
            (st, trace)
        };
        let (a, ta) = run();
        let (b, tb) = run();
        assert_eq!(ta, tb);
        assert_eq!(a, b);
    }

    #[test]
    fn labeled_blobs_become_separable() {
        let (x, y) = blobs(2, 200);
        let cfg = TrainConfig { eta_prior: 1e-3, eta_psi: 1e-3, eta_sup: 1e-2, ..small_config() };
        let mut st = TrainState::new(&spec(), cfg, 5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..500 {
            let ids = sample(&mut rng, 200, 20).into_vec();
            let xb: Vec<f64> = ids.iter().flat_map(|&i| x[2 * i..2 * i + 2].to_vec()).collect();
            let yb: Vec<usize> = ids.iter().map(|&i| y[i]).collect();
            st.step(&xb, &xb[..20], &yb[..10]).unwrap();
        }
        let (mu, _) = st.model.encoder.encode_batch(&x).unwrap();
        let correct = (0..200)
            .filter(|&i| {
                let p = st.model.prior.class_posterior(&mu[2 * i..2 * i + 2]).unwrap();
                (p[1] > p[0]) == (y[i] == 1)
            })
            .count();
        assert_eq!(correct, 200);
    }

    #[test]
    fn rejects_oversized_batch() {
        let mut st = TrainState::new(&spec(), small_config(), 0).unwrap();
        let x = vec![0.0; 2 * 60];
        assert!(matches!(st.step(&x, &[], &[]), Err(Error::InvalidInput(_))));
        assert_eq!(st.step(&[], &[], &[]), Err(Error::InvalidBatch));
    }

    #[test]
    fn nonfinite_streak_aborts() {
        let mut cfg = small_config();
        cfg.max_nonfinite_retries = 2;
        let mut st = TrainState::new(&spec(), cfg, 0).unwrap();
        let (x, _) = blobs(0, 20);
        // A huge observation overflows the Gaussian log density.
        let mut bad = x.clone();
        bad[0] = 1e200;
        let mut outcome = Ok(());
        for _ in 0..4 {
            if let Err(e) = st.step(&bad, &[], &[]) {
                outcome = Err(e);
                break;
            }
        }
        assert!(matches!(outcome, Err(Error::NonFiniteGradient(_))));
    }
}
