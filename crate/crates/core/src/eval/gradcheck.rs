use rand::seq::index::sample;

use crate::error::{Error, Result};
use crate::rng::{domain, stream};

pub const MAX_CHECKED_COORDS: usize = 200;

/// `|a - b| / max(|a|, |b|, 1e-8)`.
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
}

/// Central-difference derivative along coordinate `i`.
fn central<F: FnMut(&[f64]) -> Result<f64>>(loss: &mut F, params: &[f64], i: usize, step: f64) -> Result<f64> {
    let mut p = params.to_vec();
    p[i] = params[i] + step;
    let up = loss(&p)?;
    p[i] = params[i] - step;
    let down = loss(&p)?;
    Ok((up - down) / (2.0 * step))
}

/// Worst relative error between `grad` and central differences of `loss`
/// over at most 200 coordinates, drawn with `seed` when there are more.
/// The loss is evaluated twice at `params` first; differing values mean it
/// is not a deterministic function of the parameters.
pub fn finite_diff_check<F>(mut loss: F, params: &[f64], grad: &[f64], step: f64, seed: u64) -> Result<f64>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    if params.len() != grad.len() || params.is_empty() {
        return Err(Error::InvalidShape(format!("{} parameters, {} gradient entries", params.len(), grad.len())));
    }
    let first = loss(params)?;
    let second = loss(params)?;
    if first.to_bits() != second.to_bits() {
        return Err(Error::NonDeterministicLoss { first, second });
    }
    let coords: Vec<usize> = if params.len() <= MAX_CHECKED_COORDS {
        (0..params.len()).collect()
    } else {
        let mut c = sample(&mut stream(seed, domain::DIAGNOSE, 0), params.len(), MAX_CHECKED_COORDS).into_vec();
        c.sort_unstable();
        c
    };
    let mut worst = 0.0f64;
    for i in coords {
        let fd = central(&mut loss, params, i, step)?;
        worst = worst.max(relative_error(fd, grad[i]));
    }
    Ok(worst)
}

/// Central-difference gradient over every coordinate.
pub fn numeric_gradient<F>(mut loss: F, params: &[f64], step: f64) -> Result<Vec<f64>>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    (0..params.len()).map(|i| central(&mut loss, params, i, step)).collect()
}
