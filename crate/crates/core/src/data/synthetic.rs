use std::f64::consts::PI;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::SSLDataset;
use crate::error::{Error, Result};
use crate::rng::{domain, stream};

const MIXTURE_RADIUS: f64 = 4.0;
const PINWHEEL_CLASSES: usize = 5;
const PINWHEEL_RADIAL_STD: f64 = 0.3;
const PINWHEEL_RATE: f64 = 0.25;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SyntheticKind {
    TwoMoons,
    /// Isotropic components evenly spaced on a circle of radius 4.
    GaussMixture {
        components: usize,
    },
    Pinwheel,
}

impl SyntheticKind {
    pub fn classes(&self) -> usize {
        match self {
            SyntheticKind::TwoMoons => 2,
            SyntheticKind::GaussMixture { components } => *components,
            SyntheticKind::Pinwheel => PINWHEEL_CLASSES,
        }
    }
}

impl FromStr for SyntheticKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "two_moons" => Ok(SyntheticKind::TwoMoons),
            "gauss_mixture" => Ok(SyntheticKind::GaussMixture { components: 8 }),
            "pinwheel" => Ok(SyntheticKind::Pinwheel),
            other => Err(Error::UnknownKind(other.to_string())),
        }
    }
}

/// `n` points with balanced classes (class sizes differ by at most one),
/// rows shuffled, all labels visible. For `two_moons` and `pinwheel`
/// `noise` is the Gaussian jitter std; for `gauss_mixture` it is the
/// component std.
pub fn make_synthetic(kind: SyntheticKind, n: usize, noise: f64, seed: u64) -> Result<SSLDataset> {
    let k = kind.classes();
    if k == 0 || n < 2 * k {
        return Err(Error::InvalidInput(format!("need at least {} points for {k} classes, got {n}", 2 * k)));
    }
    if !(noise >= 0.0 && noise.is_finite()) {
        return Err(Error::InvalidInput(format!("noise must be non-negative, got {noise}")));
    }
    let mut rng = stream(seed, domain::DATA, 2);
    let mut points: Vec<([f64; 2], usize)> = Vec::with_capacity(n);
    for c in 0..k {
        let count = n / k + usize::from(c < n % k);
        for j in 0..count {
            let p = match kind {
                SyntheticKind::TwoMoons => {
                    let t = if count > 1 { PI * j as f64 / (count - 1) as f64 } else { 0.0 };
                    let base = if c == 0 { [t.cos(), t.sin()] } else { [1.0 - t.cos(), 0.5 - t.sin()] };
                    [base[0] + noise * normal(&mut rng), base[1] + noise * normal(&mut rng)]
                }
                SyntheticKind::GaussMixture { .. } => {
                    let a = 2.0 * PI * c as f64 / k as f64;
                    [
                        MIXTURE_RADIUS * a.cos() + noise * normal(&mut rng),
                        MIXTURE_RADIUS * a.sin() + noise * normal(&mut rng),
                    ]
                }
                SyntheticKind::Pinwheel => {
                    let r = 1.0 + PINWHEEL_RADIAL_STD * normal(&mut rng);
                    let t = noise * normal(&mut rng);
                    let a = 2.0 * PI * c as f64 / k as f64 + PINWHEEL_RATE * r.exp();
                    [a.cos() * r - a.sin() * t, a.sin() * r + a.cos() * t]
                }
            };
            points.push((p, c));
        }
    }
    points.shuffle(&mut rng);
    let features = points.iter().flat_map(|(p, _)| p.iter().copied()).collect();
    let labels = points.iter().map(|(_, c)| *c as i64).collect();
    SSLDataset::new(features, 2, labels, k)
}

fn normal<R: Rng>(rng: &mut R) -> f64 {
    rng.sample(StandardNormal)
}
