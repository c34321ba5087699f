//! Action distributions: softmax categoricals and diagonal Gaussians.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::rng::Rng;

pub const LN_2PI: f64 = 1.837_877_066_409_345_5;

pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + xs.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

pub fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let lse = log_sum_exp(logits);
    logits.iter().map(|x| x - lse).collect()
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|x| (x - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// Shannon entropy in nats; zero-probability entries contribute nothing.
pub fn entropy_of_probs(probs: &[f64]) -> f64 {
    -probs
        .iter()
        .filter(|&&p| p > 0.0)
        .map(|p| p * p.ln())
        .sum::<f64>()
}

pub fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

/// Categorical distribution parameterized by unnormalized logits.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Categorical {
    pub logits: Vec<f64>,
}

impl Categorical {
    pub fn new(logits: Vec<f64>) -> Self {
        Categorical { logits }
    }

    pub fn num_actions(&self) -> usize {
        self.logits.len()
    }

    pub fn probs(&self) -> Vec<f64> {
        softmax(&self.logits)
    }

    pub fn log_prob(&self, action: usize) -> Result<f64> {
        if action >= self.logits.len() {
            return Err(Error::contract(format!(
                "action {action} out of range for {} actions",
                self.logits.len()
            )));
        }
        Ok(self.logits[action] - log_sum_exp(&self.logits))
    }

    pub fn entropy(&self) -> f64 {
        let logp = log_softmax(&self.logits);
        -logp.iter().map(|lp| lp.exp() * lp).sum::<f64>()
    }

    /// Log-probability of `action` together with the entropy.
    pub fn logprob_entropy(&self, action: usize) -> Result<(f64, f64)> {
        Ok((self.log_prob(action)?, self.entropy()))
    }

    pub fn mode(&self) -> usize {
        argmax(&self.logits)
    }

    /// Inverse-CDF sampling from one uniform draw.
    pub fn sample(&self, rng: &mut Rng) -> usize {
        let probs = self.probs();
        let u = rng.uniform();
        let mut acc = 0.0;
        for (i, p) in probs.iter().enumerate() {
            acc += p;
            if u < acc {
                return i;
            }
        }
        probs.len() - 1
    }
}

/// Diagonal Gaussian with per-dimension mean and log standard deviation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiagGaussian {
    pub mean: Vec<f64>,
    pub log_std: Vec<f64>,
}

impl DiagGaussian {
    pub fn new(mean: Vec<f64>, log_std: Vec<f64>) -> Result<Self> {
        if mean.len() != log_std.len() {
            return Err(Error::dimension(format!(
                "mean has {} dims, log_std {}",
                mean.len(),
                log_std.len()
            )));
        }
        Ok(DiagGaussian { mean, log_std })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn std(&self) -> Vec<f64> {
        self.log_std.iter().map(|l| l.exp()).collect()
    }

    pub fn log_prob(&self, action: &[f64]) -> Result<f64> {
        if action.len() != self.mean.len() {
            return Err(Error::dimension(format!(
                "action has {} dims, distribution {}",
                action.len(),
                self.mean.len()
            )));
        }
        Ok(action
            .iter()
            .zip(&self.mean)
            .zip(&self.log_std)
            .map(|((a, m), ls)| {
                let z = (a - m) / ls.exp();
                -0.5 * z * z - ls - 0.5 * LN_2PI
            })
            .sum())
    }

    pub fn entropy(&self) -> f64 {
        self.log_std.iter().map(|ls| ls + 0.5 * (1.0 + LN_2PI)).sum()
    }

    pub fn sample(&self, rng: &mut Rng) -> Vec<f64> {
        self.mean
            .iter()
            .zip(&self.log_std)
            .map(|(m, ls)| m + ls.exp() * rng.normal())
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn uniform_logits() {
        let c = Categorical::new(vec![0.0, 0.0]);
        let (lp, h) = c.logprob_entropy(0).unwrap();
        assert!(close(lp, -std::f64::consts::LN_2, 1e-15));
        assert!(close(h, std::f64::consts::LN_2, 1e-15));
    }

    #[test]
    fn near_one_hot_is_stable() {
        let c = Categorical::new(vec![1000.0, 0.0]);
        let (lp, h) = c.logprob_entropy(0).unwrap();
        assert!(lp.is_finite() && close(lp, 0.0, 1e-12));
        assert!(h.is_finite() && close(h, 0.0, 1e-12));
    }

    #[test]
    fn entropy_of_one_two_three() {
        // Direct summation: p = e^i / (e + e^2 + e^3).
        let z: f64 = (1..=3).map(|i| (i as f64).exp()).sum();
        let oracle: f64 = -(1..=3)
            .map(|i| {
                let p = (i as f64).exp() / z;
                p * p.ln()
            })
            .sum::<f64>();
        let h = Categorical::new(vec![1.0, 2.0, 3.0]).entropy();
        assert!(close(h, oracle, 1e-14));
        assert!(close(h, 0.83240, 1e-5));
    }

    #[test]
    fn action_out_of_range() {
        let c = Categorical::new(vec![0.0, 1.0]);
        assert!(matches!(c.log_prob(2), Err(Error::Contract(_))));
    }

    #[test]
    fn gaussian_at_mean() {
        let g = DiagGaussian::new(vec![0.3, -1.0], vec![0.0, 0.0]).unwrap();
        assert!(close(g.log_prob(&[0.3, -1.0]).unwrap(), -LN_2PI, 1e-15));
        assert!(close(-LN_2PI, -1.83788, 1e-5));
    }

    #[test]
    fn gaussian_one_std() {
        let g = DiagGaussian::new(vec![2.0], vec![0.0]).unwrap();
        assert!(close(g.log_prob(&[3.0]).unwrap(), -0.5 - 0.5 * LN_2PI, 1e-15));
    }

    #[test]
    fn doubling_std_costs_n_log_two() {
        let g1 = DiagGaussian::new(vec![1.0, 2.0, 3.0], vec![0.1, 0.2, 0.3]).unwrap();
        let g2 = DiagGaussian::new(
            g1.mean.clone(),
            g1.log_std.iter().map(|l| l + std::f64::consts::LN_2).collect(),
        )
        .unwrap();
        let a = g1.mean.clone();
        let diff = g1.log_prob(&a).unwrap() - g2.log_prob(&a).unwrap();
        assert!(close(diff, 3.0 * std::f64::consts::LN_2, 1e-12));
    }

    #[test]
    fn gaussian_shape_mismatch() {
        let g = DiagGaussian::new(vec![0.0; 2], vec![0.0; 2]).unwrap();
        assert!(g.log_prob(&[0.0]).is_err());
    }
}
