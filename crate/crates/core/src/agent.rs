//! The actor-critic agent and its inference schemes.
//!
//! Policy and value are separate networks of the same architecture, each
//! built with the configured sub-model mechanism. Continuous policies share
//! one state-independent `log_std` across all sub-models.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::layers::bundle::{forward_all_submodels, StateBundle, SubmodelBundle};
use crate::layers::net::{Method, StochasticMlp, MODULATED_LAYERS};
use crate::math::dist::{argmax, softmax, Categorical, DiagGaussian};
use crate::math::rng::{stream, Rng};
use crate::math::tensor::Tensor;
use crate::ppo::normalize::RunningStats;
use crate::space::{Action, ActionSpace};

pub const POLICY_OUTPUT_GAIN: f64 = 0.01;
pub const VALUE_OUTPUT_GAIN: f64 = 1.0;

pub fn default_hidden() -> Vec<usize> {
    vec![64, 64, 64]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentConfig {
    pub obs_dim: usize,
    pub action_space: ActionSpace,
    #[serde(default = "default_hidden")]
    pub hidden: Vec<usize>,
    pub method: Method,
    #[serde(default)]
    pub seed: u64,
    /// Keep `log_std` at its initial value instead of learning it.
    #[serde(default)]
    pub freeze_log_std: bool,
    #[serde(default)]
    pub log_std_init: f64,
}

impl AgentConfig {
    pub fn validate(&self) -> Result<()> {
        self.method.validate()?;
        if self.obs_dim == 0 {
            return Err(Error::config("agent.obs_dim", "must be positive"));
        }
        if self.action_space.dim() == 0 {
            return Err(Error::config("agent.action_space", "needs at least one action dimension"));
        }
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            return Err(Error::config("agent.hidden", "needs at least one non-empty hidden layer"));
        }
        if let Method::Masksembles { k, .. } = self.method {
            for &l in MODULATED_LAYERS.iter().filter(|&&l| l < self.hidden.len()) {
                if self.hidden[l] < k {
                    return Err(Error::config(
                        "agent.hidden",
                        format!("masked layer width {} is smaller than k = {k}", self.hidden[l]),
                    ));
                }
            }
        }
        if !self.log_std_init.is_finite() {
            return Err(Error::config("agent.log_std_init", "must be finite"));
        }
        Ok(())
    }

    fn sizes(&self) -> Vec<usize> {
        let mut sizes = vec![self.obs_dim];
        sizes.extend(&self.hidden);
        sizes
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Agent {
    pub config: AgentConfig,
    pub policy: StochasticMlp,
    pub value: StochasticMlp,
    /// `[1, N]` for continuous action spaces.
    pub log_std: Option<Tensor>,
    /// Observation statistics; `None` when normalization is off.
    pub obs_norm: Option<RunningStats>,
}

/// One batched training-time decision per row.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainingStep {
    pub actions: Vec<Action>,
    pub logprobs: Vec<f64>,
    pub values: Vec<f64>,
}

/// Which sub-model produced an action.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Chooser {
    Submodel(usize),
    Aggregate,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ActionDecision {
    pub action: Action,
    pub bundle: SubmodelBundle,
    pub chosen: Chooser,
    /// Log-probability under the distribution the action was drawn from.
    pub logprob: f64,
}

impl Agent {
    pub fn new(config: AgentConfig) -> Result<Self> {
        config.validate()?;
        let mut sizes = config.sizes();
        sizes.push(config.action_space.dim());
        let policy = StochasticMlp::new(
            config.method.clone(),
            &sizes,
            POLICY_OUTPUT_GAIN,
            config.seed,
            stream::INIT,
            config.seed,
        )?;
        *sizes.last_mut().expect("non-empty") = 1;
        let value = StochasticMlp::new(
            config.method.clone(),
            &sizes,
            VALUE_OUTPUT_GAIN,
            config.seed,
            stream::VALUE_INIT,
            config.seed.wrapping_add(MODULATED_LAYERS.len() as u64),
        )?;
        let log_std = match config.action_space {
            ActionSpace::Continuous(n) => Some(Tensor::full(&[1, n], config.log_std_init)),
            ActionSpace::Discrete(_) => None,
        };
        Ok(Agent {
            config,
            policy,
            value,
            log_std,
            obs_norm: None,
        })
    }

    pub fn k(&self) -> usize {
        self.config.method.k()
    }

    pub fn action_space(&self) -> ActionSpace {
        self.config.action_space
    }

    pub fn method(&self) -> &Method {
        &self.config.method
    }

    pub fn log_std_vec(&self) -> Option<Vec<f64>> {
        self.log_std.as_ref().map(|t| t.data().to_vec())
    }

    /// Applies the frozen observation normalization to a `[B, obs_dim]` batch.
    pub fn prepare(&self, obs: &Tensor) -> Tensor {
        match &self.obs_norm {
            None => obs.clone(),
            Some(stats) => {
                let rows: Vec<Vec<f64>> = (0..obs.rows())
                    .map(|i| stats.normalize(obs.row_slice(i)))
                    .collect();
                Tensor::from_rows(&rows).unwrap_or_else(|_| obs.clone())
            }
        }
    }

    /// All sub-model outputs for raw observations.
    pub fn bundle(&self, obs: &Tensor, rng: &mut Rng) -> Result<SubmodelBundle> {
        let x = self.prepare(obs);
        let log_std = self.log_std_vec();
        forward_all_submodels(
            &self.policy,
            &self.value,
            log_std.as_deref(),
            self.action_space(),
            &x,
            rng,
        )
    }

    /// Samples one action per row of prepared observations `x`, row `i`
    /// acting with sub-model `submodels[i]`.
    pub fn sample_training(&self, x: &Tensor, submodels: &[usize], rng: &mut Rng) -> Result<TrainingStep> {
        let out = self.policy.forward_rows(x, submodels, rng)?;
        let values = self.value.forward_rows(x, submodels, rng)?.into_data();
        let mut actions = Vec::with_capacity(x.rows());
        let mut logprobs = Vec::with_capacity(x.rows());
        for i in 0..x.rows() {
            let params = out.row_slice(i).to_vec();
            let (action, lp) = sample_from(self.action_space(), params, self.log_std_vec(), rng)?;
            actions.push(action);
            logprobs.push(lp);
        }
        Ok(TrainingStep {
            actions,
            logprobs,
            values,
        })
    }

    /// Log-probability of `action` under every sub-model, for each row of
    /// prepared observations `x`. Result is `k` vectors of length `B`.
    pub fn logprobs_all(&self, x: &Tensor, actions: &[Action], rng: &mut Rng) -> Result<Vec<Vec<f64>>> {
        let outs = self.policy.forward_all(x, rng)?;
        let log_std = self.log_std_vec();
        outs.iter()
            .map(|out| {
                (0..x.rows())
                    .map(|i| logprob_of(self.action_space(), out.row_slice(i).to_vec(), log_std.clone(), &actions[i]))
                    .collect()
            })
            .collect()
    }

    /// Training-time action for a single raw observation in environment
    /// `env_index` of `num_envs`.
    pub fn act_training(
        &self,
        obs: &[f64],
        env_index: usize,
        num_envs: usize,
        rng: &mut Rng,
    ) -> Result<ActionDecision> {
        let submodel = crate::layers::net::submodel_for_env(self.k(), env_index, num_envs)?;
        let raw = Tensor::row(obs);
        let bundle = self.bundle(&raw, rng)?;
        let params = bundle.policy[submodel].row_slice(0).to_vec();
        let (action, logprob) = sample_from(self.action_space(), params, self.log_std_vec(), rng)?;
        Ok(ActionDecision {
            action,
            bundle,
            chosen: Chooser::Submodel(submodel),
            logprob,
        })
    }

    /// Evaluation-time action for one raw observation.
    pub fn act(&self, obs: &[f64], scheme: InferenceScheme, net_rng: &mut Rng, rng: &mut Rng) -> Result<Action> {
        let bundle = self.bundle(&Tensor::row(obs), net_rng)?;
        act_with_scheme(&bundle.state(0), scheme, rng)
    }
}

fn sample_from(
    space: ActionSpace,
    params: Vec<f64>,
    log_std: Option<Vec<f64>>,
    rng: &mut Rng,
) -> Result<(Action, f64)> {
    match space {
        ActionSpace::Discrete(_) => {
            let dist = Categorical::new(params);
            let a = dist.sample(rng);
            Ok((Action::Discrete(a), dist.log_prob(a)?))
        }
        ActionSpace::Continuous(_) => {
            let log_std = log_std.ok_or_else(|| Error::contract("continuous policy without log_std"))?;
            let dist = DiagGaussian::new(params, log_std)?;
            let a = dist.sample(rng);
            let lp = dist.log_prob(&a)?;
            Ok((Action::Continuous(a), lp))
        }
    }
}

fn logprob_of(space: ActionSpace, params: Vec<f64>, log_std: Option<Vec<f64>>, action: &Action) -> Result<f64> {
    match (space, action) {
        (ActionSpace::Discrete(_), Action::Discrete(a)) => Categorical::new(params).log_prob(*a),
        (ActionSpace::Continuous(_), Action::Continuous(a)) => {
            let log_std = log_std.ok_or_else(|| Error::contract("continuous policy without log_std"))?;
            DiagGaussian::new(params, log_std)?.log_prob(a)
        }
        _ => Err(Error::contract("action kind does not match the action space")),
    }
}

/// How the `k` sub-model outputs become one action at evaluation time.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InferenceScheme {
    /// Majority vote over sub-model argmaxes (discrete).
    Vote,
    /// Gaussian from averaged means (continuous).
    Aggregate { deterministic: bool },
    /// One sub-model; `index: None` picks uniformly at random per call.
    Single { index: Option<usize>, deterministic: bool },
    /// Average the categorical distributions, then sample (discrete).
    AvgThenSample,
}

impl InferenceScheme {
    pub fn default_for(space: ActionSpace) -> Self {
        match space {
            ActionSpace::Discrete(_) => InferenceScheme::Vote,
            ActionSpace::Continuous(_) => InferenceScheme::Aggregate { deterministic: true },
        }
    }

    /// Scheme that samples from the aggregated policy; used to collect
    /// benchmark states so they spread like the policy's own visitation.
    pub fn sampling_for(space: ActionSpace) -> Self {
        match space {
            ActionSpace::Discrete(_) => InferenceScheme::AvgThenSample,
            ActionSpace::Continuous(_) => InferenceScheme::Aggregate { deterministic: false },
        }
    }

    /// Short label used in result tables.
    pub fn label(&self) -> String {
        match *self {
            InferenceScheme::Vote => "vote".into(),
            InferenceScheme::Aggregate { deterministic: true } => "aggregate_det".into(),
            InferenceScheme::Aggregate { deterministic: false } => "aggregate".into(),
            InferenceScheme::Single { index: None, .. } => "single_random".into(),
            InferenceScheme::Single { index: Some(i), .. } => format!("single_{i}"),
            InferenceScheme::AvgThenSample => "avg_then_sample".into(),
        }
    }

    pub fn check(&self, space: ActionSpace) -> Result<()> {
        let ok = match self {
            InferenceScheme::Vote | InferenceScheme::AvgThenSample => space.is_discrete(),
            InferenceScheme::Aggregate { .. } => !space.is_discrete(),
            InferenceScheme::Single { .. } => true,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::config(
                "eval.scheme",
                format!("{} is not available for {space:?}", self.label()),
            ))
        }
    }
}

pub fn act_with_scheme(bundle: &StateBundle, scheme: InferenceScheme, rng: &mut Rng) -> Result<Action> {
    match scheme {
        InferenceScheme::Vote => act_vote(bundle, rng).map(Action::Discrete),
        InferenceScheme::Aggregate { deterministic } => {
            act_gaussian_aggregate(bundle, deterministic, rng).map(Action::Continuous)
        }
        InferenceScheme::Single { index, deterministic } => act_single(bundle, index, deterministic, rng),
        InferenceScheme::AvgThenSample => avg_then_sample(bundle, rng).map(Action::Discrete),
    }
}

/// Mode of the sub-model argmaxes; ties are broken uniformly at random.
pub fn act_vote(bundle: &StateBundle, rng: &mut Rng) -> Result<usize> {
    let n = match bundle.action_space {
        ActionSpace::Discrete(n) => n,
        ActionSpace::Continuous(_) => return Err(Error::contract("voting needs a discrete action space")),
    };
    let mut counts = vec![0usize; n];
    for logits in &bundle.policy {
        counts[argmax(logits)] += 1;
    }
    let best = counts.iter().copied().max().unwrap_or(0);
    let tied: Vec<usize> = (0..n).filter(|&a| counts[a] == best).collect();
    if tied.len() == 1 {
        Ok(tied[0])
    } else {
        Ok(tied[rng.below(tied.len())])
    }
}

/// Mean and per-dimension std of the aggregate Gaussian.
///
/// The std combines the shared sigma with the spread of the sub-model means
/// in quadrature, i.e. the variance of the uniform mixture about its mean.
pub fn aggregate_gaussian(bundle: &StateBundle) -> Result<(Vec<f64>, Vec<f64>)> {
    let log_std = bundle
        .log_std
        .as_ref()
        .ok_or_else(|| Error::contract("aggregation needs a continuous action space"))?;
    let k = bundle.k() as f64;
    let n = log_std.len();
    let mut mean = vec![0.0; n];
    for mu in &bundle.policy {
        for (m, v) in mean.iter_mut().zip(mu) {
            *m += v / k;
        }
    }
    let std = (0..n)
        .map(|j| {
            let spread = bundle.policy.iter().map(|mu| (mu[j] - mean[j]).powi(2)).sum::<f64>() / k;
            ((2.0 * log_std[j]).exp() + spread).sqrt()
        })
        .collect();
    Ok((mean, std))
}

pub fn act_gaussian_aggregate(bundle: &StateBundle, deterministic: bool, rng: &mut Rng) -> Result<Vec<f64>> {
    let (mean, std) = aggregate_gaussian(bundle)?;
    if deterministic {
        return Ok(mean);
    }
    Ok(mean
        .iter()
        .zip(&std)
        .map(|(m, s)| m + s * rng.normal())
        .collect())
}

pub fn act_single(
    bundle: &StateBundle,
    index: Option<usize>,
    deterministic: bool,
    rng: &mut Rng,
) -> Result<Action> {
    let k = bundle.k();
    let j = match index {
        Some(j) if j >= k => {
            return Err(Error::contract(format!("sub-model {j} out of range for k = {k}")))
        }
        Some(j) => j,
        None => rng.below(k),
    };
    match bundle.action_space {
        ActionSpace::Discrete(_) => {
            let dist = bundle.categorical(j);
            Ok(Action::Discrete(if deterministic { dist.mode() } else { dist.sample(rng) }))
        }
        ActionSpace::Continuous(_) => {
            let dist = bundle.gaussian(j)?;
            Ok(Action::Continuous(if deterministic {
                dist.mean.clone()
            } else {
                dist.sample(rng)
            }))
        }
    }
}

/// Samples from the average of the `k` categorical distributions.
pub fn avg_then_sample(bundle: &StateBundle, rng: &mut Rng) -> Result<usize> {
    if !bundle.action_space.is_discrete() {
        return Err(Error::contract("distribution averaging needs a discrete action space"));
    }
    let probs = averaged_probs(&bundle.policy);
    let u = rng.uniform();
    let mut acc = 0.0;
    for (a, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return Ok(a);
        }
    }
    Ok(probs.len() - 1)
}

/// Elementwise mean of the softmax of each logit vector.
pub fn averaged_probs(logits: &[Vec<f64>]) -> Vec<f64> {
    let k = logits.len() as f64;
    let mut avg = vec![0.0; logits.first().map_or(0, Vec::len)];
    for l in logits {
        for (a, p) in avg.iter_mut().zip(softmax(l)) {
            *a += p / k;
        }
    }
    avg
}
