//! Classification and variational losses.

use super::graph::{log_sum_exp, Graph, Var};
use super::{NnError, Tensor};

/// Numerically stable softmax of one row of logits.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let lse = log_sum_exp(logits);
    logits.iter().map(|&z| (z - lse).exp()).collect()
}

/// `-log p[true class]` for a probability vector and a one-hot target.
pub fn categorical_crossentropy(probs: &[f64], one_hot: &[f64]) -> f64 {
    -probs
        .iter()
        .zip(one_hot)
        .filter(|(_, &t)| t > 0.0)
        .map(|(&p, &t)| t * p.ln())
        .sum::<f64>()
}

/// Closed-form `KL(N(mu, exp(logvar)) || N(0, I))` summed over dimensions.
pub fn kl_gaussian_value(mu: &[f64], logvar: &[f64]) -> f64 {
    mu.iter()
        .zip(logvar)
        .map(|(&m, &lv)| 0.5 * (m * m + lv.exp() - 1.0 - lv))
        .sum()
}

fn batch_of(g: &Graph, v: Var) -> usize {
    g.value(v).shape()[0]
}

/// KL to the standard-normal prior, summed over latent dimensions and
/// averaged over the batch. `mu` and `logvar` are `[B, d]`.
pub fn kl_gaussian(g: &mut Graph, mu: Var, logvar: Var) -> Result<Var, NnError> {
    let batch = batch_of(g, mu);
    let mu2 = g.mul(mu, mu)?;
    let var = g.exp(logvar)?;
    let s = g.add(mu2, var)?;
    let s = g.sub(s, logvar)?;
    let s = g.add_scalar(s, -1.0)?;
    let total = g.sum_all(s)?;
    g.scale(total, 0.5 / batch as f64)
}

/// A reparameterized draw from the approximate posterior. The noise is kept
/// so a step can be replayed exactly.
#[derive(Debug, Clone)]
pub struct GaussianLatent {
    pub mu: Var,
    pub logvar: Var,
    pub noise: Tensor,
    pub z: Var,
}

/// `z = mu + exp(logvar / 2) · noise`; the noise is a constant.
pub fn reparameterize(g: &mut Graph, mu: Var, logvar: Var, noise: Tensor) -> Result<GaussianLatent, NnError> {
    if g.value(mu).shape() != noise.shape() {
        return Err(NnError::Shape(format!(
            "noise {:?} for latent {:?}",
            noise.shape(),
            g.value(mu).shape()
        )));
    }
    let half = g.scale(logvar, 0.5)?;
    let std = g.exp(half)?;
    let eps = g.constant(noise.clone())?;
    let spread = g.mul(std, eps)?;
    let z = g.add(mu, spread)?;
    Ok(GaussianLatent { mu, logvar, noise, z })
}

/// Components of the negative evidence lower bound for one batch.
#[derive(Debug, Clone, Copy)]
pub struct ElboTerms {
    pub loss: Var,
    pub reconstruction: Var,
    pub kl: Var,
}

/// `-ELBO` with a unit-variance Gaussian likelihood (constants dropped):
/// `½ Σ (x - x̂)² + KL`, both per datum and averaged over the batch.
pub fn elbo_loss(g: &mut Graph, recon: Var, x: Var, mu: Var, logvar: Var) -> Result<ElboTerms, NnError> {
    let batch = batch_of(g, x);
    let diff = g.sub(recon, x)?;
    let sq = g.mul(diff, diff)?;
    let total = g.sum_all(sq)?;
    let reconstruction = g.scale(total, 0.5 / batch as f64)?;
    let kl = kl_gaussian(g, mu, logvar)?;
    let loss = g.add(reconstruction, kl)?;
    Ok(ElboTerms {
        loss,
        reconstruction,
        kl,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_logits_give_uniform_probs() {
        let p = softmax(&[0.3; 9]);
        for v in p {
            assert!((v - 1.0 / 9.0).abs() < 1e-15);
        }
    }

    #[test]
    fn softmax_is_shift_invariant() {
        let a = softmax(&[1.0, -2.0, 0.5]);
        let b = softmax(&[1001.0, 998.0, 1000.5]);
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-12);
        }
        assert!((a.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn crossentropy_closed_form() {
        let mut z = [0.0; 9];
        z[0] = 1.0;
        let mut t = [0.0; 9];
        t[0] = 1.0;
        let loss = categorical_crossentropy(&softmax(&z), &t);
        assert!((loss - ((std::f64::consts::E + 8.0).ln() - 1.0)).abs() < 1e-14);
        let mut confident = [0.0; 9];
        confident[3] = 60.0;
        let mut t3 = [0.0; 9];
        t3[3] = 1.0;
        assert!(categorical_crossentropy(&softmax(&confident), &t3) < 1e-20);
    }

    #[test]
    fn kl_examples() {
        assert_eq!(kl_gaussian_value(&[0.0], &[0.0]), 0.0);
        assert_eq!(kl_gaussian_value(&[1.0], &[0.0]), 0.5);
        let mut g = Graph::new();
        let mu = g.constant(Tensor::new(&[2, 1], vec![1.0, 1.0]).unwrap()).unwrap();
        let lv = g.constant(Tensor::zeros(&[2, 1])).unwrap();
        let kl = kl_gaussian(&mut g, mu, lv).unwrap();
        assert_eq!(g.value(kl).item(), 0.5);
    }

    #[test]
    fn reparameterize_examples() {
        let mut g = Graph::new();
        let mu = g.param(Tensor::new(&[1, 2], vec![0.5, -1.0]).unwrap()).unwrap();
        let lv = g.param(Tensor::zeros(&[1, 2])).unwrap();
        let zero = reparameterize(&mut g, mu, lv, Tensor::zeros(&[1, 2])).unwrap();
        assert_eq!(g.value(zero.z).data(), &[0.5, -1.0]);
        let eps = Tensor::new(&[1, 2], vec![0.25, 2.0]).unwrap();
        let lat = reparameterize(&mut g, mu, lv, eps).unwrap();
        assert_eq!(g.value(lat.z).data(), &[0.75, 1.0]);
        let s = g.sum_all(lat.z).unwrap();
        let grads = g.backward(s).unwrap();
        assert_eq!(grads.get(mu).unwrap().data(), &[1.0, 1.0]);
    }

    #[test]
    fn elbo_examples() {
        let n = 7;
        let mut g = Graph::new();
        let x = g.constant(Tensor::new(&[1, n], (0..n).map(|i| i as f64).collect()).unwrap()).unwrap();
        let xhat = g.add_scalar(x, 1.0).unwrap();
        let mu = g.constant(Tensor::zeros(&[1, 3])).unwrap();
        let lv = g.constant(Tensor::zeros(&[1, 3])).unwrap();
        let terms = elbo_loss(&mut g, xhat, x, mu, lv).unwrap();
        assert_eq!(g.value(terms.loss).item(), n as f64 / 2.0);
        let perfect = elbo_loss(&mut g, x, x, mu, lv).unwrap();
        assert_eq!(g.value(perfect.loss).item(), 0.0);
    }
}
