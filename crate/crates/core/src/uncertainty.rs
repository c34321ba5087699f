//! Disagreement measures over the `k` sub-model outputs.
//!
//! All standard deviations are population standard deviations (divide by
//! `k`). Every measure is non-negative and exactly zero when the sub-models
//! agree.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::layers::bundle::{StateBundle, SubmodelBundle};
use crate::math::dist::{entropy_of_probs, softmax};

/// Floor applied to probabilities before taking logs.
pub const PROB_FLOOR: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Measure {
    ValueStd,
    PolicyStd,
    PolicyJs,
    MaxProb,
    Entropy,
}

impl Measure {
    pub const ALL: [Measure; 5] = [
        Measure::ValueStd,
        Measure::PolicyStd,
        Measure::PolicyJs,
        Measure::MaxProb,
        Measure::Entropy,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Measure::ValueStd => "value_std",
            Measure::PolicyStd => "policy_std",
            Measure::PolicyJs => "policy_js",
            Measure::MaxProb => "max_prob",
            Measure::Entropy => "entropy",
        }
    }

    pub fn categorical_only(&self) -> bool {
        matches!(self, Measure::MaxProb | Measure::Entropy)
    }

    /// Measures defined for the given kind of action space.
    pub fn applicable(discrete: bool) -> Vec<Measure> {
        Measure::ALL
            .into_iter()
            .filter(|m| discrete || !m.categorical_only())
            .collect()
    }
}

/// Per-state measures for a batch.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UncertaintyReport {
    pub value_u: Vec<f64>,
    pub policy_u_std: Vec<f64>,
    pub policy_u_js: Vec<f64>,
    /// Categorical only.
    pub max_prob_u: Option<Vec<f64>>,
    /// Categorical only.
    pub entropy_u: Option<Vec<f64>>,
}

impl UncertaintyReport {
    pub fn get(&self, m: Measure) -> Option<&[f64]> {
        match m {
            Measure::ValueStd => Some(&self.value_u),
            Measure::PolicyStd => Some(&self.policy_u_std),
            Measure::PolicyJs => Some(&self.policy_u_js),
            Measure::MaxProb => self.max_prob_u.as_deref(),
            Measure::Entropy => self.entropy_u.as_deref(),
        }
    }

    pub fn len(&self) -> usize {
        self.value_u.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value_u.is_empty()
    }
}

/// Options for the measures.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MeasureOptions {
    /// Compute the categorical std on softmax probabilities instead of logits.
    pub cat_std_on_probs: bool,
}

fn check_k(k: usize) -> Result<()> {
    if k < 2 {
        return Err(Error::config("agent.k", format!("uncertainty needs k >= 2 sub-models, got {k}")));
    }
    Ok(())
}

/// Population standard deviation. Deviations are taken around the first
/// element before averaging, so identical inputs give exactly zero.
pub fn pop_std(xs: &[f64]) -> f64 {
    let Some(&x0) = xs.first() else { return 0.0 };
    let n = xs.len() as f64;
    let shift = xs.iter().map(|x| x - x0).sum::<f64>() / n;
    (xs.iter().map(|x| (x - x0 - shift).powi(2)).sum::<f64>() / n).sqrt()
}

/// Standard deviation of the sub-model value estimates.
pub fn value_uncertainty(values: &[f64]) -> Result<f64> {
    check_k(values.len())?;
    Ok(pop_std(values))
}

/// Mean over dimensions of the per-dimension std across sub-models.
fn mean_column_std(rows: &[Vec<f64>]) -> Result<f64> {
    check_k(rows.len())?;
    let n = rows[0].len();
    if rows.iter().any(|r| r.len() != n) {
        return Err(Error::dimension("sub-model outputs differ in width"));
    }
    if n == 0 {
        return Err(Error::dimension("empty sub-model outputs"));
    }
    let mut col = vec![0.0; rows.len()];
    let mut total = 0.0;
    for j in 0..n {
        for (c, r) in col.iter_mut().zip(rows) {
            *c = r[j];
        }
        total += pop_std(&col);
    }
    Ok(total / n as f64)
}

/// Continuous policy uncertainty from the `k` mean vectors.
pub fn policy_std_continuous(means: &[Vec<f64>]) -> Result<f64> {
    mean_column_std(means)
}

/// Categorical policy uncertainty from the `k` logit vectors, or from their
/// softmax probabilities when `on_probs` is set.
pub fn policy_std_categorical(logits: &[Vec<f64>], on_probs: bool) -> Result<f64> {
    if on_probs {
        let probs: Vec<Vec<f64>> = logits.iter().map(|l| softmax(l)).collect();
        mean_column_std(&probs)
    } else {
        mean_column_std(logits)
    }
}

fn averaged(logits: &[Vec<f64>]) -> Result<Vec<f64>> {
    if logits.is_empty() {
        return Err(Error::contract("no sub-model distributions"));
    }
    Ok(crate::agent::averaged_probs(logits))
}

/// One minus the top probability of the averaged distribution.
pub fn max_prob_uncertainty(logits: &[Vec<f64>]) -> Result<f64> {
    let avg = averaged(logits)?;
    Ok(1.0 - avg.iter().copied().fold(f64::NEG_INFINITY, f64::max))
}

/// Entropy of the averaged distribution.
pub fn entropy_uncertainty(logits: &[Vec<f64>]) -> Result<f64> {
    Ok(entropy_of_probs(&averaged(logits)?))
}

/// `KL(p || q)` with both sides floored at [`PROB_FLOOR`].
pub fn kl_categorical(p: &[f64], q: &[f64]) -> f64 {
    p.iter()
        .zip(q)
        .map(|(&a, &b)| {
            let a = a.max(PROB_FLOOR);
            a * (a.ln() - b.max(PROB_FLOOR).ln())
        })
        .sum()
}

/// Symmetrized KL, `(KL(p||q) + KL(q||p)) / 2`.
pub fn js_pair(p: &[f64], q: &[f64]) -> f64 {
    0.5 * (kl_categorical(p, q) + kl_categorical(q, p))
}

/// Largest pairwise symmetrized KL between the sub-model distributions.
pub fn policy_js_categorical(probs: &[Vec<f64>]) -> Result<f64> {
    check_k(probs.len())?;
    let mut best = 0.0f64;
    for i in 0..probs.len() {
        for j in i + 1..probs.len() {
            best = best.max(js_pair(&probs[i], &probs[j]));
        }
    }
    Ok(best)
}

/// Largest pairwise divergence between Gaussians sharing `log_std`.
///
/// With one shared scale `σ = exp(log_std)` this is the closed form
/// `σ·‖μi − μj‖²`. When the dimensions have different scales it is the exact
/// symmetrized KL of the two diagonal Gaussians, `½ Σ (Δμ/σ)²`.
pub fn policy_js_continuous(means: &[Vec<f64>], log_std: &[f64]) -> Result<f64> {
    check_k(means.len())?;
    if means.iter().any(|m| m.len() != log_std.len()) {
        return Err(Error::dimension("mean and log_std widths differ"));
    }
    let shared = log_std.windows(2).all(|w| w[0] == w[1]);
    let mut best = 0.0f64;
    for i in 0..means.len() {
        for j in i + 1..means.len() {
            let d = if shared {
                let sigma = log_std.first().map_or(1.0, |l| l.exp());
                sigma * sq_dist(&means[i], &means[j])
            } else {
                0.5 * means[i]
                    .iter()
                    .zip(&means[j])
                    .zip(log_std)
                    .map(|((a, b), l)| ((a - b) / l.exp()).powi(2))
                    .sum::<f64>()
            };
            best = best.max(d);
        }
    }
    Ok(best)
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum()
}

/// Value of one measure for one state.
pub fn state_measure(state: &StateBundle, m: Measure, opts: MeasureOptions) -> Result<f64> {
    let discrete = state.action_space.is_discrete();
    match m {
        Measure::ValueStd => value_uncertainty(&state.values),
        Measure::PolicyStd if discrete => policy_std_categorical(&state.policy, opts.cat_std_on_probs),
        Measure::PolicyStd => policy_std_continuous(&state.policy),
        Measure::PolicyJs if discrete => {
            let probs: Vec<Vec<f64>> = (0..state.k()).map(|j| state.probs(j)).collect();
            policy_js_categorical(&probs)
        }
        Measure::PolicyJs => {
            let log_std = state
                .log_std
                .as_ref()
                .ok_or_else(|| Error::contract("continuous bundle without log_std"))?;
            policy_js_continuous(&state.policy, log_std)
        }
        Measure::MaxProb | Measure::Entropy if !discrete => Err(Error::contract(format!(
            "{} is only defined for categorical policies",
            m.name()
        ))),
        Measure::MaxProb => max_prob_uncertainty(&state.policy),
        Measure::Entropy => entropy_uncertainty(&state.policy),
    }
}

/// Every applicable measure for every state of a bundle.
pub fn report(bundle: &SubmodelBundle, opts: MeasureOptions) -> Result<UncertaintyReport> {
    check_k(bundle.k())?;
    let discrete = bundle.action_space.is_discrete();
    let b = bundle.batch_size();
    let mut rep = UncertaintyReport {
        value_u: Vec::with_capacity(b),
        policy_u_std: Vec::with_capacity(b),
        policy_u_js: Vec::with_capacity(b),
        max_prob_u: discrete.then(|| Vec::with_capacity(b)),
        entropy_u: discrete.then(|| Vec::with_capacity(b)),
    };
    for s in bundle.states() {
        rep.value_u.push(state_measure(&s, Measure::ValueStd, opts)?);
        rep.policy_u_std.push(state_measure(&s, Measure::PolicyStd, opts)?);
        rep.policy_u_js.push(state_measure(&s, Measure::PolicyJs, opts)?);
        if let Some(v) = rep.max_prob_u.as_mut() {
            v.push(state_measure(&s, Measure::MaxProb, opts)?);
        }
        if let Some(v) = rep.entropy_u.as_mut() {
            v.push(state_measure(&s, Measure::Entropy, opts)?);
        }
    }
    Ok(rep)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64) -> bool {
        (a - b).abs() < 1e-12
    }

    #[test]
    fn value_examples() {
        assert_eq!(value_uncertainty(&[3.0; 4]).unwrap(), 0.0);
        assert_eq!(value_uncertainty(&[0.0, 0.0, 2.0, 2.0]).unwrap(), 1.0);
        assert!(close(value_uncertainty(&[1.0, 2.0, 3.0, 4.0]).unwrap(), 1.25f64.sqrt()));
        assert!(matches!(value_uncertainty(&[1.0]), Err(Error::Config { .. })));
    }

    #[test]
    fn continuous_std_examples() {
        assert_eq!(policy_std_continuous(&vec![vec![0.5, 1.0]; 3]).unwrap(), 0.0);
        assert_eq!(policy_std_continuous(&[vec![0.0, 0.0], vec![2.0, 2.0]]).unwrap(), 1.0);
        assert!(policy_std_continuous(&[vec![0.0], vec![1.0, 2.0]]).is_err());
    }

    #[test]
    fn categorical_std_examples() {
        assert_eq!(policy_std_categorical(&vec![vec![0.1, 0.2]; 2], false).unwrap(), 0.0);
        assert_eq!(policy_std_categorical(&[vec![1.0, 0.0], vec![0.0, 1.0]], false).unwrap(), 0.5);
        let a = vec![vec![0.3, -1.0, 2.0], vec![1.0, 0.0, -0.5]];
        let shifted: Vec<Vec<f64>> = a.iter().map(|r| r.iter().map(|v| v + 7.5).collect()).collect();
        assert!(close(
            policy_std_categorical(&a, false).unwrap(),
            policy_std_categorical(&shifted, false).unwrap()
        ));
    }

    #[test]
    fn max_prob_and_entropy_examples() {
        let hot = vec![vec![1e3, 0.0, 0.0]; 3];
        assert!(max_prob_uncertainty(&hot).unwrap().abs() < 1e-12);
        assert!(entropy_uncertainty(&hot).unwrap().abs() < 1e-12);
        let split = vec![vec![1e3, 0.0], vec![0.0, 1e3]];
        assert!(close(max_prob_uncertainty(&split).unwrap(), 0.5));
        assert!(close(max_prob_uncertainty(&vec![vec![0.0; 4]; 2]).unwrap(), 0.75));
        assert!(close(entropy_uncertainty(&vec![vec![0.0; 2]; 2]).unwrap(), 2f64.ln()));
        let l9 = (9.0f64).ln();
        assert!(close(entropy_uncertainty(&[vec![l9, 0.0], vec![0.0, l9]]).unwrap(), 2f64.ln()));
    }

    #[test]
    fn js_examples() {
        let p = vec![0.2, 0.5, 0.3];
        let q = vec![0.6, 0.1, 0.3];
        assert_eq!(policy_js_categorical(&[p.clone(), p.clone()]).unwrap(), 0.0);
        assert_eq!(js_pair(&p, &q), js_pair(&q, &p));
        assert!(js_pair(&[1.0, 0.0], &[0.0, 1.0]).is_finite());
        assert_eq!(policy_js_continuous(&vec![vec![1.0, 2.0]; 3], &[0.0, 0.0]).unwrap(), 0.0);
        assert_eq!(policy_js_continuous(&[vec![0.0, 0.0], vec![1.0, 0.0]], &[0.0, 0.0]).unwrap(), 1.0);
        // Unequal scales: exact symmetrized KL.
        let d = policy_js_continuous(&[vec![0.0, 0.0], vec![1.0, 1.0]], &[0.0, 2f64.ln()]).unwrap();
        assert!(close(d, 0.5 * (1.0 + 0.25)));
    }

    #[test]
    fn continuous_reports_skip_categorical_measures() {
        let bundle = SubmodelBundle {
            method: "test",
            action_space: crate::space::ActionSpace::Continuous(1),
            policy: vec![crate::math::tensor::Tensor::column(&[0.0, 1.0]), crate::math::tensor::Tensor::column(&[2.0, 1.0])],
            values: vec![vec![0.0, 5.0], vec![2.0, 5.0]],
            log_std: Some(vec![0.0]),
        };
        let rep = report(&bundle, MeasureOptions::default()).unwrap();
        assert_eq!(rep.value_u, vec![1.0, 0.0]);
        assert_eq!(rep.policy_u_std, vec![1.0, 0.0]);
        assert_eq!(rep.policy_u_js, vec![4.0, 0.0]);
        assert!(rep.max_prob_u.is_none() && rep.entropy_u.is_none());
        assert!(state_measure(&bundle.state(0), Measure::Entropy, MeasureOptions::default()).is_err());
    }
}
