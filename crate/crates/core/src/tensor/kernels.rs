use crate::error::{Error, Result};

fn check_vector(v: &[f64], what: &str) -> Result<()> {
    if v.is_empty() {
        return Err(Error::InvalidShape(format!("{what}: empty vector")));
    }
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFiniteInput(what.to_string()));
    }
    Ok(())
}

/// `log sum_k exp(v_k)`, shifted by the maximum so nothing overflows.
pub fn logsumexp(v: &[f64]) -> Result<f64> {
    check_vector(v, "logsumexp")?;
    Ok(lse_unchecked(v))
}

pub(crate) fn lse_unchecked(v: &[f64]) -> f64 {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let s: f64 = v.iter().map(|x| (x - m).exp()).sum();
    m + s.ln()
}

pub fn softmax(v: &[f64]) -> Result<Vec<f64>> {
    check_vector(v, "softmax")?;
    let mut out = vec![0.0; v.len()];
    softmax_into(v, &mut out);
    Ok(out)
}

pub(crate) fn softmax_into(v: &[f64], out: &mut [f64]) {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut s = 0.0;
    for (o, x) in out.iter_mut().zip(v) {
        *o = (x - m).exp();
        s += *o;
    }
    out.iter_mut().for_each(|o| *o /= s);
}

pub fn log_softmax(v: &[f64]) -> Result<Vec<f64>> {
    let lse = logsumexp(v)?;
    Ok(v.iter().map(|x| x - lse).collect())
}

/// `KL(N(mu, diag(exp(logvar))) || N(0, I))`.
pub fn kl_diag_gaussians(mu: &[f64], logvar: &[f64]) -> Result<f64> {
    if mu.len() != logvar.len() || mu.is_empty() {
        return Err(Error::InvalidShape(format!("kl: mu has {} entries, logvar {}", mu.len(), logvar.len())));
    }
    if mu.iter().chain(logvar).any(|x| !x.is_finite()) {
        return Err(Error::NonFiniteInput("kl_diag_gaussians".into()));
    }
    Ok(0.5 * mu.iter().zip(logvar).map(|(m, lv)| lv.exp() + m * m - 1.0 - lv).sum::<f64>())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn logsumexp_examples() {
        assert!((logsumexp(&[0.0; 4]).unwrap() - 4f64.ln()).abs() < 1e-15);
        assert!((logsumexp(&[0.0; 4]).unwrap() - 1.3862943611).abs() < 1e-10);
        assert_eq!(logsumexp(&[-3.7]).unwrap(), -3.7);
    }

    #[test]
    fn logsumexp_matches_naive_formula_in_safe_range() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..50 {
            let v: Vec<f64> = (0..10).map(|_| rng.gen_range(-5.0..5.0)).collect();
            let naive = v.iter().map(|x| x.exp()).sum::<f64>().ln();
            assert!((logsumexp(&v).unwrap() - naive).abs() <= 1e-12);
        }
    }

    #[test]
    fn logsumexp_does_not_overflow() {
        let v = [1000.0, 1000.0];
        assert!((logsumexp(&v).unwrap() - (1000.0 + 2f64.ln())).abs() < 1e-12);
    }

    #[test]
    fn kernel_errors() {
        assert!(matches!(logsumexp(&[]), Err(Error::InvalidShape(_))));
        assert!(matches!(logsumexp(&[1.0, f64::NAN]), Err(Error::NonFiniteInput(_))));
        assert!(matches!(softmax(&[]), Err(Error::InvalidShape(_))));
        assert!(matches!(softmax(&[f64::INFINITY]), Err(Error::NonFiniteInput(_))));
        assert!(matches!(kl_diag_gaussians(&[0.0], &[0.0, 0.0]), Err(Error::InvalidShape(_))));
    }

    #[test]
    fn softmax_examples() {
        assert_eq!(softmax(&[0.0; 4]).unwrap(), vec![0.25; 4]);
        let v = [0.3, -1.2, 2.0, 0.0];
        let shifted: Vec<f64> = v.iter().map(|x| x + 100.0).collect();
        for (a, b) in softmax(&v).unwrap().iter().zip(softmax(&shifted).unwrap()) {
            assert!((a - b).abs() <= 1e-12);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let v: Vec<f64> = (0..5).map(|_| rng.gen_range(-5.0..5.0)).collect();
            let lse = logsumexp(&v).unwrap();
            for (k, p) in softmax(&v).unwrap().iter().enumerate() {
                assert!((p - (v[k] - lse).exp()).abs() <= 1e-14);
            }
        }
    }

    #[test]
    fn kl_examples() {
        assert_eq!(kl_diag_gaussians(&[0.0; 3], &[0.0; 3]).unwrap(), 0.0);
        assert!((kl_diag_gaussians(&[2.0, 0.0], &[0.0, 0.0]).unwrap() - 2.0).abs() < 1e-15);
        let v = kl_diag_gaussians(&[0.0], &[2f64.ln()]).unwrap();
        assert!((v - 0.5 * (2.0 - 1.0 - 2f64.ln())).abs() < 1e-15);
        assert!((v - 0.1534264097).abs() < 1e-10);
    }

    proptest! {
        #[test]
        fn logsumexp_bounds(v in prop::collection::vec(-50.0f64..50.0, 1..20)) {
            let lse = logsumexp(&v).unwrap();
            let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            prop_assert!(lse >= m - 1e-12);
            prop_assert!(lse <= m + (v.len() as f64).ln() + 1e-12);
        }

        #[test]
        fn softmax_is_a_distribution(v in prop::collection::vec(-30.0f64..30.0, 1..16)) {
            let p = softmax(&v).unwrap();
            prop_assert!(p.iter().all(|x| *x > 0.0));
            prop_assert!((p.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        }

        #[test]
        fn kl_non_negative(
            pairs in prop::collection::vec((-3.0f64..3.0, -4.0f64..4.0), 1..8)
        ) {
            let (mu, lv): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
            let kl = kl_diag_gaussians(&mu, &lv).unwrap();
            prop_assert!(kl >= 0.0);
            let zero = mu.iter().chain(&lv).all(|x| *x == 0.0);
            prop_assert_eq!(kl == 0.0, zero);
        }
    }
}
