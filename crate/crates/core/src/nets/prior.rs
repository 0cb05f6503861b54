use rand::Rng;

use super::mlp::{Activation, BoundMlp, Mlp};
use crate::error::{Error, Result};
use crate::tensor::{logsumexp, softmax, Tape, Var};

/// Latent-space energy-based prior over a class symbol and a latent vector.
///
/// `f_alpha` maps `z` to `K` logits; the joint density over a one-hot `y`
/// and `z` is proportional to `exp(<y, f_alpha(z)>) N(z; 0, I)`. The
/// reference density is fixed and has no parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct EbmPrior {
    net: Mlp,
}

impl EbmPrior {
    /// Tanh network `d -> hidden... -> K`.
    pub fn new<R: Rng + ?Sized>(latent_dim: usize, classes: usize, hidden: &[usize], rng: &mut R) -> Result<Self> {
        Ok(EbmPrior { net: Mlp::new(&widths(latent_dim, hidden, classes), Activation::Tanh, rng)? })
    }

    /// All-zero parameters: constant energy, `p_alpha == p_0`.
    pub fn zeros(latent_dim: usize, classes: usize, hidden: &[usize]) -> Result<Self> {
        Ok(EbmPrior { net: Mlp::zeros(&widths(latent_dim, hidden, classes), Activation::Tanh)? })
    }

    pub fn from_net(net: Mlp) -> Self {
        EbmPrior { net }
    }

    pub fn net(&self) -> &Mlp {
        &self.net
    }

    pub fn net_mut(&mut self) -> &mut Mlp {
        &mut self.net
    }

    pub fn latent_dim(&self) -> usize {
        self.net.input_dim()
    }

    pub fn classes(&self) -> usize {
        self.net.output_dim()
    }

    fn check_batch(&self, z: &[f64]) -> Result<usize> {
        let d = self.latent_dim();
        if z.is_empty() || !z.len().is_multiple_of(d) {
            return Err(Error::InvalidShape(format!("latent batch of {} values for dimension {d}", z.len())));
        }
        if z.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteInput("latent vector".into()));
        }
        Ok(z.len() / d)
    }

    /// `f_alpha(z)`, the K logit scores for one latent vector.
    pub fn ebm_logits(&self, z: &[f64]) -> Result<Vec<f64>> {
        if z.len() != self.latent_dim() {
            return Err(Error::InvalidShape(format!(
                "latent vector of length {}, expected {}",
                z.len(),
                self.latent_dim()
            )));
        }
        self.logits_batch(z)
    }

    /// Logits for a row-major batch of latent vectors (`n x K` result).
    pub fn logits_batch(&self, z: &[f64]) -> Result<Vec<f64>> {
        let n = self.check_batch(z)?;
        self.net.forward(z, n)
    }

    /// `p_alpha(y | z)`: softmax of the logits.
    pub fn class_posterior(&self, z: &[f64]) -> Result<Vec<f64>> {
        softmax(&self.ebm_logits(z)?)
    }

    /// `F_alpha(z) = log sum_k exp(f_alpha(z)_k)`.
    pub fn marginal_energy(&self, z: &[f64]) -> Result<f64> {
        logsumexp(&self.ebm_logits(z)?)
    }

    pub fn marginal_energy_batch(&self, z: &[f64]) -> Result<Vec<f64>> {
        let logits = self.logits_batch(z)?;
        logits.chunks(self.classes()).map(logsumexp).collect()
    }

    pub fn bind(&self, tape: &mut Tape, track: bool) -> Result<BoundMlp> {
        self.net.bind(tape, track)
    }
}

/// `F_alpha` per row of `z` (`n x 1`), on the tape.
pub fn marginal_energy_on(tape: &mut Tape, prior: &BoundMlp, z: Var) -> Result<Var> {
    let logits = prior.forward(tape, z)?;
    tape.logsumexp_rows(logits)
}

fn widths(d: usize, hidden: &[usize], k: usize) -> Vec<usize> {
    let mut w = vec![d];
    w.extend_from_slice(hidden);
    w.push(k);
    w
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_prior(seed: u64, d: usize, k: usize) -> EbmPrior {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        EbmPrior::new(d, k, &[16, 16], &mut rng).unwrap()
    }

    fn rand_z(rng: &mut ChaCha8Rng, d: usize) -> Vec<f64> {
        (0..d).map(|_| rng.gen_range(-2.0..2.0)).collect()
    }

    /// `d f_k / d z` for every class, one tape per class.
    fn per_class_logit_grads(prior: &EbmPrior, z: &[f64]) -> Vec<Vec<f64>> {
        (0..prior.classes())
            .map(|k| {
                let mut t = Tape::new();
                let b = prior.bind(&mut t, false).unwrap();
                let zv = t.variable(1, z.len(), z.to_vec()).unwrap();
                let l = b.forward(&mut t, zv).unwrap();
                let lk = t.slice_cols(l, k, 1).unwrap();
                let s = t.sum(lk).unwrap();
                t.backward(s).unwrap();
                t.grad(zv).unwrap().unwrap().to_vec()
            })
            .collect()
    }

    fn energy_grad(prior: &EbmPrior, z: &[f64]) -> Vec<f64> {
        let mut t = Tape::new();
        let b = prior.bind(&mut t, false).unwrap();
        let zv = t.variable(1, z.len(), z.to_vec()).unwrap();
        let f = marginal_energy_on(&mut t, &b, zv).unwrap();
        let s = t.sum(f).unwrap();
        t.backward(s).unwrap();
        t.grad(zv).unwrap().unwrap().to_vec()
    }

    #[test]
    fn zero_final_layer_outputs_bias() {
        let mut p = random_prior(1, 3, 4);
        let last = p.net_mut().layers_mut().last_mut().unwrap();
        last.weight = Tensor::zeros(vec![4, 16]);
        assert_eq!(p.ebm_logits(&[0.3, -1.0, 2.0]).unwrap(), vec![0.0; 4]);
    }

    #[test]
    fn single_linear_layer_evaluation() {
        let net = Mlp::from_params(
            Activation::Tanh,
            vec![Tensor::matrix(2, 1, vec![1.0, -1.0]).unwrap(), Tensor::vector(vec![0.0, 0.0]).unwrap()],
        )
        .unwrap();
        let p = EbmPrior::from_net(net);
        assert_eq!(p.ebm_logits(&[0.5]).unwrap(), vec![0.5, -0.5]);
        assert!(matches!(p.ebm_logits(&[0.5, 1.0]), Err(Error::InvalidShape(_))));
        assert!(matches!(p.ebm_logits(&[f64::NAN]), Err(Error::NonFiniteInput(_))));
    }

    #[test]
    fn class_posterior_examples() {
        let net = Mlp::from_params(
            Activation::Tanh,
            vec![Tensor::matrix(2, 1, vec![0.0, 0.0]).unwrap(), Tensor::vector(vec![3f64.ln(), 0.0]).unwrap()],
        )
        .unwrap();
        let p = EbmPrior::from_net(net).class_posterior(&[1.7]).unwrap();
        assert!((p[0] - 0.75).abs() < 1e-15 && (p[1] - 0.25).abs() < 1e-15);

        let flat = EbmPrior::zeros(2, 5, &[8]).unwrap();
        assert_eq!(flat.class_posterior(&[0.4, -0.1]).unwrap(), vec![0.2; 5]);

        let prior = random_prior(9, 2, 5);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..50 {
            let z = rand_z(&mut rng, 2);
            let argmax = |v: &[f64]| v.iter().enumerate().max_by(|a, b| a.1.partial_cmp(b.1).unwrap()).unwrap().0;
            assert_eq!(argmax(&prior.class_posterior(&z).unwrap()), argmax(&prior.ebm_logits(&z).unwrap()));
        }
    }

    #[test]
    fn marginal_energy_examples() {
        let zero = EbmPrior::zeros(3, 10, &[4]).unwrap();
        assert!((zero.marginal_energy(&[1.0, 2.0, 3.0]).unwrap() - 10f64.ln()).abs() < 1e-9);

        let single = random_prior(4, 2, 1);
        let z = [0.2, -0.7];
        assert_eq!(single.marginal_energy(&z).unwrap(), single.ebm_logits(&z).unwrap()[0]);

        let prior = random_prior(5, 3, 6);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..100 {
            let z = rand_z(&mut rng, 3);
            let f = prior.ebm_logits(&z).unwrap();
            let m = f.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let gap = prior.marginal_energy(&z).unwrap() - m;
            assert!((0.0..=6f64.ln()).contains(&gap));
        }
    }

    #[test]
    fn marginal_energy_is_logsumexp_of_logits_bitwise() {
        let prior = random_prior(6, 4, 7);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for _ in 0..20 {
            let z = rand_z(&mut rng, 4);
            let direct = logsumexp(&prior.ebm_logits(&z).unwrap()).unwrap();
            assert_eq!(prior.marginal_energy(&z).unwrap().to_bits(), direct.to_bits());
            let mut t = Tape::new();
            let b = prior.bind(&mut t, false).unwrap();
            let zv = t.constant(1, 4, z.clone()).unwrap();
            let f = marginal_energy_on(&mut t, &b, zv).unwrap();
            assert_eq!(t.value(f).unwrap()[0].to_bits(), direct.to_bits());
        }
    }

    #[test]
    fn exp_energy_is_sum_of_exp_logits() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for _ in 0..50 {
            let logits: Vec<f64> = (0..6).map(|_| rng.gen_range(-20.0..20.0)).collect();
            let lhs = logsumexp(&logits).unwrap().exp();
            let rhs: f64 = logits.iter().map(|l| l.exp()).sum();
            assert!((lhs - rhs).abs() / rhs <= 1e-12);
        }
    }

    #[test]
    fn energy_gradient_is_softmax_expectation_of_logit_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for seed in 0..10 {
            let prior = random_prior(100 + seed, 3, 4);
            let z = rand_z(&mut rng, 3);
            let direct = energy_grad(&prior, &z);
            let p = prior.class_posterior(&z).unwrap();
            let per = per_class_logit_grads(&prior, &z);
            for j in 0..3 {
                let expect: f64 = (0..4).map(|k| p[k] * per[k][j]).sum();
                assert!((direct[j] - expect).abs() <= 1e-10);
            }
        }
    }

    #[test]
    fn logit_gradient_matches_finite_differences() {
        let prior = random_prior(21, 3, 4);
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let z = rand_z(&mut rng, 3);
        let per = per_class_logit_grads(&prior, &z);
        let h = 1e-5;
        for (k, grad) in per.iter().enumerate() {
            for j in 0..3 {
                let mut zp = z.clone();
                let mut zm = z.clone();
                zp[j] += h;
                zm[j] -= h;
                let fd = (prior.ebm_logits(&zp).unwrap()[k] - prior.ebm_logits(&zm).unwrap()[k]) / (2.0 * h);
                let err = (fd - grad[j]).abs() / fd.abs().max(grad[j].abs()).max(1e-8);
                assert!(err <= 1e-5, "class {k} coord {j}: {err}");
            }
        }
    }
}
