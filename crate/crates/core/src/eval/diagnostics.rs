//! The diagnostic battery: gradient checks on the given model plus sampler
//! and quadrature checks on small tractable stand-ins.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::quadrature::log_std_normal;
use super::*;
use crate::error::Result;
use crate::nets::{DecoderKind, EbmPrior, Model};
use crate::rng::{domain, stream};
use crate::sampler::{prior_score_batch, PersistentChains};
use crate::trainer::{prior_grad_weighted, supervised_objective, unsup_psi_objective};

/// One emitted check.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckRecord {
    pub check: String,
    pub value: f64,
    pub tolerance: f64,
    pub pass: bool,
}

impl CheckRecord {
    fn at_most(check: &str, value: f64, tolerance: f64) -> Self {
        CheckRecord { check: check.to_string(), value, tolerance, pass: value.is_finite() && value <= tolerance }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DiagnoseOptions {
    pub seed: u64,
    /// Scales the autodiff gradients in the gradient checks by 1.01; used to
    /// confirm that a broken gradient is reported.
    pub corrupt_gradient: bool,
    pub ula_chains: usize,
    pub ula_samples: usize,
    pub tv_chains: usize,
    pub tv_burn_in: usize,
    pub tv_samples: usize,
    pub tv_thin: usize,
    pub tv_step_size: f64,
    pub tv_bins: usize,
}

impl Default for DiagnoseOptions {
    fn default() -> Self {
        DiagnoseOptions {
            seed: 0,
            corrupt_gradient: false,
            ula_chains: 500,
            ula_samples: 200,
            tv_chains: 2000,
            tv_burn_in: 500,
            tv_samples: 20,
            tv_thin: 200,
            tv_step_size: 0.1,
            tv_bins: 12,
        }
    }
}

const FD_STEP: f64 = 1e-5;
const FD_TOL: f64 = 1e-5;
const ULA_S: f64 = 0.6;
/// Stationary variance of ULA on a standard normal target: `1 / (1 - s^2 / 4)`.
const ULA_VAR: f64 = 0.36 / 0.3276;

fn normals<R: Rng>(rng: &mut R, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}

fn observations<R: Rng>(kind: DecoderKind, rows: usize, dim: usize, rng: &mut R) -> Vec<f64> {
    match kind {
        DecoderKind::Gaussian { .. } => normals(rng, rows * dim),
        // Positive counts: an all-zero row with zero biases sits exactly on
        // the ReLU kink, where finite differences and autodiff disagree.
        DecoderKind::Multinomial => (0..rows * dim).map(|_| rng.gen_range(1..5) as f64).collect(),
    }
}

fn concat(a: &[f64], b: &[f64]) -> Vec<f64> {
    let mut v = a.to_vec();
    v.extend_from_slice(b);
    v
}

/// Gradient checks for the model's objectives, energies and scores.
pub fn gradient_checks(model: &Model, opts: &DiagnoseOptions) -> Result<Vec<CheckRecord>> {
    let mut rng = stream(opts.seed, domain::DIAGNOSE, 2);
    let (d, dd) = (model.prior.latent_dim(), model.encoder.data_dim());
    let k = model.prior.classes();
    let fudge = if opts.corrupt_gradient { 1.01 } else { 1.0 };
    let x = observations(model.decoder.kind(), 4, dd, &mut rng);
    let eps = normals(&mut rng, 4 * d);
    let labels: Vec<usize> = (0..4).map(|i| i % k).collect();
    let z = normals(&mut rng, 4 * d);
    let mut out = Vec::new();

    let ne = model.encoder.net().param_count();
    let psi = unsup_psi_objective(&model.encoder, &model.decoder, &model.prior, &x, &eps)?;
    let grad: Vec<f64> = concat(&psi.encoder.flat(), &psi.decoder.flat()).iter().map(|g| g * fudge).collect();
    let params = concat(&model.encoder.net().flat_params(), &model.decoder.net().flat_params());
    let err = finite_diff_check(
        |p: &[f64]| {
            let mut m = model.clone();
            m.encoder.net_mut().set_flat_params(&p[..ne])?;
            m.decoder.net_mut().set_flat_params(&p[ne..])?;
            Ok(unsup_psi_objective(&m.encoder, &m.decoder, &m.prior, &x, &eps)?.value)
        },
        &params,
        &grad,
        FD_STEP,
        opts.seed,
    )?;
    out.push(CheckRecord::at_most("gradient/unsup_psi_objective", err, FD_TOL));

    let np = model.prior.net().param_count();
    let sup = supervised_objective(&model.prior, &model.encoder, &x, &labels, &eps, 1)?;
    let grad: Vec<f64> = concat(&sup.prior.flat(), &sup.encoder.flat()).iter().map(|g| g * fudge).collect();
    let params = concat(&model.prior.net().flat_params(), &model.encoder.net().flat_params());
    let err = finite_diff_check(
        |p: &[f64]| {
            let mut m = model.clone();
            m.prior.net_mut().set_flat_params(&p[..np])?;
            m.encoder.net_mut().set_flat_params(&p[np..])?;
            Ok(supervised_objective(&m.prior, &m.encoder, &x, &labels, &eps, 1)?.value)
        },
        &params,
        &grad,
        FD_STEP,
        opts.seed,
    )?;
    out.push(CheckRecord::at_most("gradient/supervised_objective", err, FD_TOL));

    // Mean energy over z: its alpha-gradient is the positive phase alone.
    let g = prior_grad_weighted(&model.prior, &z, &z[..d], &[0.0])?;
    let grad: Vec<f64> = g.flat().iter().map(|g| g * fudge).collect();
    let err = finite_diff_check(
        |p: &[f64]| {
            let mut pr = model.prior.clone();
            pr.net_mut().set_flat_params(p)?;
            let f = pr.marginal_energy_batch(&z)?;
            Ok(f.iter().sum::<f64>() / f.len() as f64)
        },
        &model.prior.net().flat_params(),
        &grad,
        FD_STEP,
        opts.seed,
    )?;
    out.push(CheckRecord::at_most("gradient/prior_energy", err, FD_TOL));

    let score: Vec<f64> = prior_score_batch(&model.prior, &z)?.iter().map(|g| g * fudge).collect();
    let err = finite_diff_check(
        |zz: &[f64]| {
            let f = model.prior.marginal_energy_batch(zz)?;
            Ok(f.iter().sum::<f64>() + zz.chunks(d).map(log_std_normal).sum::<f64>())
        },
        &z,
        &score,
        FD_STEP,
        opts.seed,
    )?;
    out.push(CheckRecord::at_most("gradient/prior_score", err, FD_TOL));
    Ok(out)
}

/// Runs `chains` fresh prior chains for `burn_in` steps, then records
/// `samples` states per chain every `thin` steps.
pub fn langevin_samples(
    prior: &EbmPrior,
    chains: usize,
    step_size: f64,
    burn_in: usize,
    samples: usize,
    thin: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    let mut pool = PersistentChains::new(chains, prior.latent_dim(), seed, step_size, burn_in)?;
    if burn_in > 0 {
        pool.update_all(prior)?;
    }
    pool.steps_per_update = thin;
    let mut out = Vec::with_capacity(chains * samples * prior.latent_dim());
    for _ in 0..samples {
        out.extend(pool.update_all(prior)?.samples);
    }
    Ok(out)
}

/// Per-coordinate sample variance of row-major samples.
pub fn coordinate_variances(samples: &[f64], d: usize) -> Vec<f64> {
    let n = (samples.len() / d) as f64;
    (0..d)
        .map(|j| {
            let col = samples.iter().skip(j).step_by(d);
            let mean = col.clone().sum::<f64>() / n;
            col.map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)
        })
        .collect()
}

/// Sampler and quadrature checks. The ULA check uses the model's prior
/// architecture with `f_alpha` zeroed; the TV check uses the model's prior
/// when `d <= 2` and the toy prior otherwise.
pub fn sampler_checks(model: &Model, opts: &DiagnoseOptions) -> Result<Vec<CheckRecord>> {
    let d = model.prior.latent_dim();
    let k = model.prior.classes();
    let mut out = Vec::new();

    let widths = model.prior.net().widths();
    let flat = EbmPrior::zeros(d, k, &widths[1..widths.len() - 1])?;
    let s = langevin_samples(&flat, opts.ula_chains, ULA_S, 50, opts.ula_samples, 10, opts.seed)?;
    let dev = coordinate_variances(&s, d).iter().map(|v| (v - ULA_VAR).abs()).fold(0.0, f64::max);
    out.push(CheckRecord::at_most("sampler/ula_stationary_variance", dev, 0.05));

    let qd = d.min(2);
    let zero = EbmPrior::zeros(qd, k, &[4])?;
    let lz = quadrature_log_z(&zero, &QuadratureGrid::default_for(qd)?)?;
    out.push(CheckRecord::at_most("quadrature/log_z_constant_energy", (lz - (k as f64).ln()).abs(), 1e-6));

    let toy = ToyProblem::new(opts.seed)?;
    let target = if d <= 2 { model.prior.clone() } else { toy.prior.clone() };
    let (lo, hi) = (-4.5, 4.5);
    let s = langevin_samples(
        &target,
        opts.tv_chains,
        opts.tv_step_size,
        opts.tv_burn_in,
        opts.tv_samples,
        opts.tv_thin,
        opts.seed ^ 0x5eed,
    )?;
    let dt = target.latent_dim();
    let tv = total_variation(
        &histogram(&s, dt, lo, hi, opts.tv_bins),
        &binned_prior_mass(&target, lo, hi, opts.tv_bins, 16)?,
    );
    out.push(CheckRecord::at_most("sampler/langevin_vs_quadrature_tv", tv, 0.05));
    Ok(out)
}

/// Divergence-perturbation checks on the built-in toy model, plus the
/// quadrature version of the prior-gradient identity.
pub fn divergence_checks(opts: &DiagnoseOptions) -> Result<Vec<CheckRecord>> {
    let toy = ToyProblem::new(opts.seed)?;
    let grid = QuadratureGrid::default_for(1)?;
    let qp = exact_posteriors(&toy.prior, &toy.decoder, &toy.data, &grid)?;
    let pq = quadrature_prior(&toy.prior, &grid)?;
    let t = divergence_perturbation(&toy.prior, &toy.decoder, &qp, &pq.log_density, &toy.data, &grid)?;
    let mut out = vec![CheckRecord::at_most(
        "divergence/exact_sampler_perturbation",
        t.positive_kl.abs().max(t.negative_kl.abs()),
        1e-6,
    )];

    let theta = toy.theta();
    let g_delta = numeric_gradient(
        |th: &[f64]| {
            let m = toy.with_theta(th)?;
            Ok(divergence_perturbation(&m.prior, &m.decoder, &qp, &pq.log_density, &m.data, &grid)?.delta)
        },
        &theta,
        FD_STEP,
    )?;
    let g_ce = numeric_gradient(
        |th: &[f64]| {
            let m = toy.with_theta(th)?;
            data_cross_entropy(&m.prior, &m.decoder, &m.data, &grid)
        },
        &theta,
        FD_STEP,
    )?;
    out.push(CheckRecord::at_most("divergence/gradient_equals_mle_gradient", vector_rel(&g_delta, &g_ce), 1e-3));

    let biased: Vec<f64> = grid.nodes().iter().map(|z| log_std_normal(&[z - 1.0])).collect();
    let b = divergence_perturbation(&toy.prior, &toy.decoder, &qp, &biased, &toy.data, &grid)?;
    let sign_ok = b.negative_kl > 0.0 && b.delta < b.data_kl + b.positive_kl && b.positive_kl >= -1e-9;
    out.push(CheckRecord {
        check: "divergence/biased_negative_sampler_sign".into(),
        value: b.negative_kl,
        tolerance: 0.0,
        pass: sign_ok,
    });

    // Negative phase by quadrature: prior_grad with grid nodes weighted by the
    // normalized prior equals the gradient of mean F(z+) - log Z.
    let mut rng = stream(opts.seed, domain::DIAGNOSE, 3);
    let z_pos = normals(&mut rng, 16);
    let weights: Vec<f64> = grid.weights().iter().zip(&pq.log_density).map(|(w, l)| w * l.exp()).collect();
    let g = prior_grad_weighted(&toy.prior, &z_pos, &grid.nodes(), &weights)?.flat();
    let fd = numeric_gradient(
        |p: &[f64]| {
            let mut pr = toy.prior.clone();
            pr.net_mut().set_flat_params(p)?;
            let f = pr.marginal_energy_batch(&z_pos)?;
            Ok(f.iter().sum::<f64>() / f.len() as f64 - quadrature_log_z(&pr, &grid)?)
        },
        &toy.prior.net().flat_params(),
        FD_STEP,
    )?;
    out.push(CheckRecord::at_most("quadrature/prior_gradient_identity", vector_rel(&g, &fd), 1e-3));
    Ok(out)
}

/// `||a - b|| / max(||b||, 1e-12)`.
pub fn vector_rel(a: &[f64], b: &[f64]) -> f64 {
    let diff = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    diff / b.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12)
}

/// The full battery.
pub fn run_battery(model: &Model, opts: &DiagnoseOptions) -> Result<Vec<CheckRecord>> {
    let mut out = gradient_checks(model, opts)?;
    out.extend(sampler_checks(model, opts)?);
    out.extend(divergence_checks(opts)?);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nets::ModelSpec;

    fn model(seed: u64) -> Model {
        let spec = ModelSpec {
            latent_dim: 2,
            classes: 3,
            data_dim: 2,
            prior_hidden: vec![16],
            encoder_hidden: vec![16],
            decoder_hidden: vec![16],
            decoder: DecoderKind::Gaussian { sigma2: 0.1 },
        };
        Model::new(&spec, &mut stream(seed, domain::INIT, 0)).unwrap()
    }

    #[test]
    fn fresh_model_passes_gradient_checks() {
        let recs = gradient_checks(&model(1), &DiagnoseOptions::default()).unwrap();
        assert_eq!(recs.len(), 4);
        for r in &recs {
            assert!(r.pass, "{r:?}");
        }
    }

    #[test]
    fn corrupted_gradient_fails() {
        let opts = DiagnoseOptions { corrupt_gradient: true, ..Default::default() };
        let recs = gradient_checks(&model(1), &opts).unwrap();
        assert!(recs.iter().all(|r| !r.pass));
    }

    #[test]
    fn divergence_battery_passes() {
        for r in divergence_checks(&DiagnoseOptions::default()).unwrap() {
            assert!(r.pass, "{r:?}");
        }
    }

    #[test]
    fn variances_of_known_samples() {
        let v = coordinate_variances(&[1.0, 10.0, 3.0, 10.0], 2);
        assert_eq!(v, vec![2.0, 0.0]);
    }
}
