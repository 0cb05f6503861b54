use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::nets::{Decoder, EbmPrior};
use crate::tensor::logsumexp;

/// Tensor-product trapezoid grid on `[lo, hi]^dim`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadratureGrid {
    dim: usize,
    lo: f64,
    hi: f64,
    points: usize,
}

impl QuadratureGrid {
    /// `points` per axis (at least 64); the range must cover `[-4, 4]`.
    pub fn new(dim: usize, lo: f64, hi: f64, points: usize) -> Result<Self> {
        if dim == 0 || dim > 2 {
            return Err(Error::UnsupportedDimension(dim));
        }
        if points < 64 {
            return Err(Error::InvalidInput(format!("{points} points per axis; need at least 64")));
        }
        if !(lo <= -4.0 && hi >= 4.0) {
            return Err(Error::InvalidInput(format!("range [{lo}, {hi}] does not cover [-4, 4]")));
        }
        Ok(QuadratureGrid { dim, lo, hi, points })
    }

    /// `[-6, 6]` with 512 points for `d = 1` and 128 per axis for `d = 2`.
    pub fn default_for(dim: usize) -> Result<Self> {
        match dim {
            1 => Self::new(1, -6.0, 6.0, 512),
            2 => Self::new(2, -6.0, 6.0, 128),
            d => Err(Error::UnsupportedDimension(d)),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Number of nodes.
    pub fn len(&self) -> usize {
        self.points.pow(self.dim as u32)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    fn axis(&self) -> (Vec<f64>, Vec<f64>) {
        let n = self.points;
        let h = (self.hi - self.lo) / (n - 1) as f64;
        let x = (0..n).map(|i| self.lo + h * i as f64).collect();
        let w = (0..n).map(|i| if i == 0 || i == n - 1 { 0.5 * h } else { h }).collect();
        (x, w)
    }

    /// Node coordinates, row-major `len x dim`.
    pub fn nodes(&self) -> Vec<f64> {
        let (x, _) = self.axis();
        match self.dim {
            1 => x,
            _ => x.iter().flat_map(|&a| x.iter().flat_map(move |&b| [a, b])).collect(),
        }
    }

    pub fn weights(&self) -> Vec<f64> {
        let (_, w) = self.axis();
        match self.dim {
            1 => w,
            _ => w.iter().flat_map(|&a| w.iter().map(move |&b| a * b)).collect(),
        }
    }
}

pub(crate) fn log_std_normal(z: &[f64]) -> f64 {
    -0.5 * z.iter().map(|v| v * v).sum::<f64>() - 0.5 * z.len() as f64 * (2.0 * PI).ln()
}

fn check_dim(prior: &EbmPrior, grid: &QuadratureGrid) -> Result<()> {
    let d = prior.latent_dim();
    if d > 2 {
        return Err(Error::UnsupportedDimension(d));
    }
    if d != grid.dim {
        return Err(Error::InvalidShape(format!("grid of dimension {} for latent dimension {d}", grid.dim)));
    }
    Ok(())
}

/// The prior normalized by quadrature.
#[derive(Debug, Clone, PartialEq)]
pub struct PriorQuadrature {
    pub log_z: f64,
    /// `log p_alpha` at each grid node.
    pub log_density: Vec<f64>,
}

pub fn quadrature_prior(prior: &EbmPrior, grid: &QuadratureGrid) -> Result<PriorQuadrature> {
    check_dim(prior, grid)?;
    let d = grid.dim;
    let nodes = grid.nodes();
    let energy = prior.marginal_energy_batch(&nodes)?;
    let unnorm: Vec<f64> = energy.iter().zip(nodes.chunks(d)).map(|(f, z)| f + log_std_normal(z)).collect();
    let terms: Vec<f64> = unnorm.iter().zip(grid.weights()).map(|(u, w)| u + w.ln()).collect();
    let log_z = logsumexp(&terms)?;
    Ok(PriorQuadrature { log_z, log_density: unnorm.iter().map(|u| u - log_z).collect() })
}

/// `log Z_alpha = log E_{N(0, I)}[exp F_alpha(z)]` by quadrature.
pub fn quadrature_log_z(prior: &EbmPrior, grid: &QuadratureGrid) -> Result<f64> {
    Ok(quadrature_prior(prior, grid)?.log_z)
}

/// `sum_i w_i exp(log_density_i) * values_i`.
pub fn grid_expectation(grid: &QuadratureGrid, log_density: &[f64], values: &[f64]) -> f64 {
    grid.weights().iter().zip(log_density).zip(values).map(|((w, l), v)| w * l.exp() * v).sum()
}

/// `log p_theta(x)` and `log p_theta(z | x)` at each node, for one observation.
pub fn quadrature_posterior(
    prior: &EbmPrior,
    dec: &Decoder,
    x: &[f64],
    grid: &QuadratureGrid,
) -> Result<(f64, Vec<f64>)> {
    let pq = quadrature_prior(prior, grid)?;
    posterior_from_prior(&pq, dec, x, grid)
}

pub(crate) fn posterior_from_prior(
    pq: &PriorQuadrature,
    dec: &Decoder,
    x: &[f64],
    grid: &QuadratureGrid,
) -> Result<(f64, Vec<f64>)> {
    let d = grid.dim;
    let nodes = grid.nodes();
    let joint: Vec<f64> = nodes
        .chunks(d)
        .zip(&pq.log_density)
        .map(|(z, lp)| Ok(lp + dec.decode_log_likelihood(z, x)?))
        .collect::<Result<_>>()?;
    let terms: Vec<f64> = joint.iter().zip(grid.weights()).map(|(j, w)| j + w.ln()).collect();
    let log_px = logsumexp(&terms)?;
    Ok((log_px, joint.iter().map(|j| j - log_px).collect()))
}

/// Prior mass per histogram cell of `[lo, hi]^d` (`bins` per axis), by a
/// midpoint rule with `sub` points per cell and axis, renormalized over the box.
pub fn binned_prior_mass(prior: &EbmPrior, lo: f64, hi: f64, bins: usize, sub: usize) -> Result<Vec<f64>> {
    let d = prior.latent_dim();
    if d > 2 {
        return Err(Error::UnsupportedDimension(d));
    }
    let per_axis = bins * sub;
    let h = (hi - lo) / per_axis as f64;
    let axis: Vec<f64> = (0..per_axis).map(|i| lo + h * (i as f64 + 0.5)).collect();
    let (nodes, cell): (Vec<f64>, Vec<usize>) = if d == 1 {
        (axis.clone(), (0..per_axis).map(|i| i / sub).collect())
    } else {
        let mut n = Vec::with_capacity(per_axis * per_axis * 2);
        let mut c = Vec::with_capacity(per_axis * per_axis);
        for (i, &a) in axis.iter().enumerate() {
            for (j, &b) in axis.iter().enumerate() {
                n.extend([a, b]);
                c.push((i / sub) * bins + j / sub);
            }
        }
        (n, c)
    };
    let energy = prior.marginal_energy_batch(&nodes)?;
    let logs: Vec<f64> = energy.iter().zip(nodes.chunks(d)).map(|(f, z)| f + log_std_normal(z)).collect();
    let top = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut mass = vec![0.0; bins.pow(d as u32)];
    for (l, &c) in logs.iter().zip(&cell) {
        mass[c] += (l - top).exp();
    }
    let total: f64 = mass.iter().sum();
    mass.iter_mut().for_each(|m| *m /= total);
    Ok(mass)
}

/// Normalized histogram of row-major samples over the same cells as
/// [`binned_prior_mass`]; samples outside the box are dropped.
pub fn histogram(samples: &[f64], d: usize, lo: f64, hi: f64, bins: usize) -> Vec<f64> {
    let mut counts = vec![0.0; bins.pow(d as u32)];
    let cell = |v: f64| -> Option<usize> {
        let t = ((v - lo) / (hi - lo) * bins as f64).floor();
        (t >= 0.0 && t < bins as f64).then_some(t as usize)
    };
    for z in samples.chunks(d) {
        let idx = z.iter().try_fold(0usize, |acc, &v| cell(v).map(|c| acc * bins + c));
        if let Some(i) = idx {
            counts[i] += 1.0;
        }
    }
    let total: f64 = counts.iter().sum();
    if total > 0.0 {
        counts.iter_mut().for_each(|c| *c /= total);
    }
    counts
}

pub fn total_variation(p: &[f64], q: &[f64]) -> f64 {
    0.5 * p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum::<f64>()
}
