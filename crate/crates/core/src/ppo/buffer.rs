use crate::error::{Error, Result};
use crate::space::Action;

#[derive(Clone, Debug, PartialEq)]
pub struct Transition {
    /// Observation as fed to the networks (normalized if enabled).
    pub obs: Vec<f64>,
    pub action: Action,
    pub reward: f64,
    pub done: bool,
    /// Value estimate of the acting sub-model.
    pub value: f64,
    /// Log-probability under the acting sub-model.
    pub logprob: f64,
    pub submodel: usize,
    pub env_index: usize,
    /// Log-probability under every sub-model; kept for ensembles, whose
    /// members all train on every transition.
    pub logprobs_all: Option<Vec<f64>>,
}

/// Transitions laid out `[env][step]` with their GAE results.
#[derive(Clone, Debug, Default)]
pub struct RolloutBuffer {
    pub steps: Vec<Vec<Transition>>,
    pub advantages: Vec<Vec<f64>>,
    pub returns: Vec<Vec<f64>>,
}

impl RolloutBuffer {
    pub fn new(num_envs: usize) -> Self {
        RolloutBuffer {
            steps: vec![Vec::new(); num_envs],
            advantages: Vec::new(),
            returns: Vec::new(),
        }
    }

    pub fn num_envs(&self) -> usize {
        self.steps.len()
    }

    pub fn len(&self) -> usize {
        self.steps.iter().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn push(&mut self, t: Transition) {
        let env = t.env_index;
        self.steps[env].push(t);
    }

    pub fn has_advantages(&self) -> bool {
        self.advantages.len() == self.num_envs()
    }

    /// `(env, step)` pairs in env-major order; flat index `i` of minibatch
    /// sampling refers to entry `i` of this list.
    pub fn index(&self) -> Vec<(usize, usize)> {
        self.steps
            .iter()
            .enumerate()
            .flat_map(|(e, s)| (0..s.len()).map(move |t| (e, t)))
            .collect()
    }

    /// Fills advantages and returns; `bootstrap[e]` is the value of the
    /// observation following env `e`'s last stored step.
    pub fn compute_gae(&mut self, gamma: f64, lambda: f64, bootstrap: &[f64]) -> Result<()> {
        if bootstrap.len() != self.num_envs() {
            return Err(Error::contract(format!(
                "{} bootstrap values for {} environments",
                bootstrap.len(),
                self.num_envs()
            )));
        }
        self.advantages.clear();
        self.returns.clear();
        for (steps, &last) in self.steps.iter().zip(bootstrap) {
            let rewards: Vec<f64> = steps.iter().map(|t| t.reward).collect();
            let values: Vec<f64> = steps.iter().map(|t| t.value).collect();
            let dones: Vec<bool> = steps.iter().map(|t| t.done).collect();
            let (adv, ret) = gae(&rewards, &values, &dones, last, gamma, lambda)?;
            self.advantages.push(adv);
            self.returns.push(ret);
        }
        Ok(())
    }
}

/// Generalized advantage estimation over one environment's trajectory.
///
/// `done[t]` marks that step `t` ended an episode, so neither the bootstrap
/// nor later residuals flow back across it. `last_value` bootstraps the
/// step after the final one.
pub fn gae(
    rewards: &[f64],
    values: &[f64],
    dones: &[bool],
    last_value: f64,
    gamma: f64,
    lambda: f64,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let n = rewards.len();
    if values.len() != n || dones.len() != n {
        return Err(Error::dimension(format!(
            "gae: {n} rewards, {} values, {} dones",
            values.len(),
            dones.len()
        )));
    }
    let mut adv = vec![0.0; n];
    let mut next_adv = 0.0;
    for t in (0..n).rev() {
        let next_value = if t + 1 < n { values[t + 1] } else { last_value };
        let live = if dones[t] { 0.0 } else { 1.0 };
        let delta = rewards[t] + gamma * next_value * live - values[t];
        next_adv = delta + gamma * lambda * live * next_adv;
        adv[t] = next_adv;
    }
    let ret = adv.iter().zip(values).map(|(a, v)| a + v).collect();
    Ok((adv, ret))
}

/// Shifts and scales `xs` to zero mean and unit population std.
pub fn normalize_advantages(xs: &mut [f64]) {
    if xs.len() < 2 {
        return;
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let std = (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt();
    for x in xs.iter_mut() {
        *x = (*x - mean) / (std + 1e-8);
    }
}
