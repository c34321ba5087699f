//! Rollout collection and the PPO optimization loop.
//!
//! In shared mode the environments are split into `k` contiguous blocks,
//! block `j` acting with sub-model `j`, and every transition lands in one
//! shared buffer. In independent mode `k` single networks are trained one
//! after another with seeds `seed + i`, each on `1/k` of the budget with `k`
//! times the epochs, and then stacked into an ensemble.

use serde::{Deserialize, Serialize};

use crate::agent::Agent;
use crate::envs::{EnvParams, VecEnv};
use crate::error::{Error, Result};
use crate::layers::net::{submodel_for_env, Method, StochasticMlp};
use crate::math::optim::{clip_global_norm, Adam};
use crate::math::rng::{stream, Rng};
use crate::math::tensor::Tensor;
use crate::ppo::buffer::{normalize_advantages, RolloutBuffer, Transition};
use crate::ppo::loss::{agent_param_shapes, agent_params_mut, ppo_loss, LossCoefficients, Minibatch};
use crate::ppo::normalize::RunningStats;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainMode {
    Shared,
    Independent,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PpoConfig {
    pub gamma: f64,
    pub gae_lambda: f64,
    pub clip_range: f64,
    pub ent_coef: f64,
    pub vf_coef: f64,
    pub learning_rate: f64,
    pub lr_linear_decay: bool,
    pub n_epochs: usize,
    /// Minibatch size.
    pub batch_size: usize,
    /// Steps per environment per rollout.
    pub n_steps: usize,
    pub num_envs: usize,
    pub max_grad_norm: f64,
    pub total_timesteps: u64,
    pub normalize_obs: bool,
    pub normalize_advantage: bool,
    pub mode: TrainMode,
}

impl Default for PpoConfig {
    fn default() -> Self {
        PpoConfig {
            gamma: 0.99,
            gae_lambda: 0.95,
            clip_range: 0.2,
            ent_coef: 0.0,
            vf_coef: 0.5,
            learning_rate: 3e-4,
            lr_linear_decay: false,
            n_epochs: 10,
            batch_size: 64,
            n_steps: 256,
            num_envs: 8,
            max_grad_norm: 0.5,
            total_timesteps: 100_000,
            normalize_obs: false,
            normalize_advantage: true,
            mode: TrainMode::Shared,
        }
    }
}

impl PpoConfig {
    pub fn validate(&self, method: &Method) -> Result<()> {
        let k = method.k() as u64;
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(Error::config("ppo.gamma", format!("must be in (0, 1], got {}", self.gamma)));
        }
        if !(0.0..=1.0).contains(&self.gae_lambda) {
            return Err(Error::config("ppo.gae_lambda", format!("must be in [0, 1], got {}", self.gae_lambda)));
        }
        if !(self.clip_range > 0.0) {
            return Err(Error::config("ppo.clip_range", "must be positive"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::config("ppo.learning_rate", "must be positive"));
        }
        if !(self.max_grad_norm > 0.0) {
            return Err(Error::config("ppo.max_grad_norm", "must be positive"));
        }
        for (name, v) in [
            ("ppo.n_epochs", self.n_epochs),
            ("ppo.batch_size", self.batch_size),
            ("ppo.n_steps", self.n_steps),
            ("ppo.num_envs", self.num_envs),
        ] {
            if v == 0 {
                return Err(Error::config(name, "must be positive"));
            }
        }
        if self.ent_coef < 0.0 || self.vf_coef < 0.0 {
            return Err(Error::config("ppo.ent_coef", "coefficients must be non-negative"));
        }
        let envs = self.num_envs as u64;
        match self.mode {
            TrainMode::Shared => {
                submodel_for_env(method.k(), 0, self.num_envs)?;
                if !self.total_timesteps.is_multiple_of(envs) {
                    return Err(Error::config(
                        "ppo.total_timesteps",
                        format!("{} is not a multiple of num_envs = {envs}", self.total_timesteps),
                    ));
                }
            }
            TrainMode::Independent => {
                if !matches!(method, Method::Ensembles { .. }) {
                    return Err(Error::config("ppo.mode", "independent training needs method = ensembles"));
                }
                if self.normalize_obs {
                    return Err(Error::config(
                        "ppo.normalize_obs",
                        "independent members would end up with different statistics",
                    ));
                }
                if !self.total_timesteps.is_multiple_of(k * envs) {
                    return Err(Error::config(
                        "ppo.total_timesteps",
                        format!("{} is not a multiple of k * num_envs = {}", self.total_timesteps, k * envs),
                    ));
                }
            }
        }
        Ok(())
    }

    fn coefficients(&self) -> LossCoefficients {
        LossCoefficients {
            clip_range: self.clip_range,
            vf_coef: self.vf_coef,
            ent_coef: self.ent_coef,
        }
    }
}

/// One row of the training curve.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurveRow {
    pub iteration: usize,
    pub timesteps: u64,
    /// Mean return of episodes finished during this iteration; empty when
    /// none finished.
    pub mean_episode_reward: Option<f64>,
    pub mean_episode_len: Option<f64>,
    pub loss: f64,
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub mode: TrainMode,
    pub iterations: usize,
    pub timesteps: u64,
    /// Environment steps collected by each sub-model.
    pub submodel_steps: Vec<u64>,
    /// Optimization epochs per rollout used for each sub-model.
    pub submodel_epochs: Vec<usize>,
}

/// Everything that evolves during training.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainState {
    pub agent: Agent,
    pub adam: Adam,
    pub rollout_rng: Rng,
    pub loss_rng: Rng,
    pub minibatch_rng: Rng,
}

impl TrainState {
    pub fn new(agent: Agent, seed: u64) -> Self {
        let adam = Adam::new(&agent_param_shapes(&agent));
        TrainState {
            agent,
            adam,
            rollout_rng: Rng::new(seed, stream::ACTION),
            loss_rng: Rng::new(seed, stream::LOSS_MASK),
            minibatch_rng: Rng::new(seed, stream::MINIBATCH),
        }
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub state: TrainState,
    pub report: TrainReport,
    pub curve: Vec<CurveRow>,
}

/// Trains `agent` on environment `env_id`. `on_row` sees every curve row as
/// soon as it exists, so a caller can flush it before a later failure.
pub fn train(
    env_id: &str,
    env_params: &EnvParams,
    agent: Agent,
    cfg: &PpoConfig,
    seed: u64,
    on_row: &mut dyn FnMut(&CurveRow) -> Result<()>,
) -> Result<TrainOutcome> {
    cfg.validate(agent.method())?;
    match cfg.mode {
        TrainMode::Shared => {
            let mut state = TrainState::new(agent, seed);
            let mut curve = Vec::new();
            let mut counter = Counter::default();
            let steps = run_shared(env_id, env_params, &mut state, cfg, cfg.n_epochs, seed, &mut counter, &mut |row| {
                curve.push(row.clone());
                on_row(row)
            })?;
            let report = TrainReport {
                mode: TrainMode::Shared,
                iterations: counter.iteration,
                timesteps: counter.timesteps,
                submodel_epochs: vec![cfg.n_epochs; state.agent.k()],
                submodel_steps: steps,
            };
            Ok(TrainOutcome { state, report, curve })
        }
        TrainMode::Independent => train_independent(env_id, env_params, agent, cfg, seed, on_row),
    }
}

#[derive(Default)]
struct Counter {
    iteration: usize,
    timesteps: u64,
}

fn train_independent(
    env_id: &str,
    env_params: &EnvParams,
    agent: Agent,
    cfg: &PpoConfig,
    seed: u64,
    on_row: &mut dyn FnMut(&CurveRow) -> Result<()>,
) -> Result<TrainOutcome> {
    let k = agent.k();
    let member_cfg = PpoConfig {
        total_timesteps: cfg.total_timesteps / k as u64,
        mode: TrainMode::Shared,
        ..cfg.clone()
    };
    let epochs = cfg.n_epochs * k;
    let mut curve = Vec::new();
    let mut counter = Counter::default();
    let mut members = Vec::with_capacity(k);
    let mut steps = Vec::with_capacity(k);
    for i in 0..k {
        let mut config = agent.config.clone();
        config.method = Method::None;
        config.seed = agent.config.seed.wrapping_add(i as u64);
        let mut state = TrainState::new(Agent::new(config)?, seed.wrapping_add(i as u64));
        let used = run_shared(
            env_id,
            env_params,
            &mut state,
            &member_cfg,
            epochs,
            seed.wrapping_add(i as u64),
            &mut counter,
            &mut |row| {
                curve.push(row.clone());
                on_row(row)
            },
        )?;
        steps.push(used[0]);
        members.push(state.agent);
    }
    let combined = stack_ensemble(&agent, members)?;
    let state = TrainState::new(combined, seed);
    let report = TrainReport {
        mode: TrainMode::Independent,
        iterations: counter.iteration,
        timesteps: counter.timesteps,
        submodel_steps: steps,
        submodel_epochs: vec![epochs; k],
    };
    Ok(TrainOutcome { state, report, curve })
}

/// Stacks single-network agents into one ensemble agent. The shared
/// `log_std` is the mean of the members' values.
pub fn stack_ensemble(template: &Agent, members: Vec<Agent>) -> Result<Agent> {
    let k = members.len();
    if template.k() != k {
        return Err(Error::contract(format!("{k} members for an ensemble of {}", template.k())));
    }
    let log_std = template.log_std.as_ref().map(|ls| {
        let mut mean = Tensor::zeros(ls.shape());
        for m in &members {
            mean.add_assign(m.log_std.as_ref().expect("same action space"));
        }
        mean.scale_in_place(1.0 / k as f64);
        mean
    });
    let mut policy = Vec::with_capacity(k);
    let mut value = Vec::with_capacity(k);
    for m in members {
        policy.extend(m.policy.members);
        value.extend(m.value.members);
    }
    Ok(Agent {
        config: template.config.clone(),
        policy: StochasticMlp {
            method: template.config.method.clone(),
            members: policy,
            masks: Vec::new(),
        },
        value: StochasticMlp {
            method: template.config.method.clone(),
            members: value,
            masks: Vec::new(),
        },
        log_std,
        obs_norm: None,
    })
}

/// Shared-buffer training loop. Returns environment steps per sub-model.
#[allow(clippy::too_many_arguments)]
fn run_shared(
    env_id: &str,
    env_params: &EnvParams,
    state: &mut TrainState,
    cfg: &PpoConfig,
    epochs: usize,
    seed: u64,
    counter: &mut Counter,
    on_row: &mut dyn FnMut(&CurveRow) -> Result<()>,
) -> Result<Vec<u64>> {
    let k = state.agent.k();
    let n_envs = cfg.num_envs;
    let submodels: Vec<usize> = (0..n_envs)
        .map(|e| submodel_for_env(k, e, n_envs))
        .collect::<Result<_>>()?;
    let mut steps_per_submodel = vec![0u64; k];
    if cfg.total_timesteps == 0 {
        return Ok(steps_per_submodel);
    }
    if cfg.normalize_obs && state.agent.obs_norm.is_none() {
        state.agent.obs_norm = Some(RunningStats::new(state.agent.config.obs_dim));
    }
    let mut venv = VecEnv::new(env_id, env_params, n_envs, seed)?;
    let per_env_total = cfg.total_timesteps / n_envs as u64;
    let mut done_per_env = 0u64;
    let mut local_steps = 0u64;
    while done_per_env < per_env_total {
        let t_steps = (cfg.n_steps as u64).min(per_env_total - done_per_env) as usize;
        let lr = if cfg.lr_linear_decay {
            cfg.learning_rate * (1.0 - local_steps as f64 / cfg.total_timesteps as f64)
        } else {
            cfg.learning_rate
        };
        let (buffer, episodes) = collect(&mut venv, state, &submodels, t_steps, cfg)?;
        for &j in &submodels {
            steps_per_submodel[j] += t_steps as u64;
        }
        done_per_env += t_steps as u64;
        local_steps += (t_steps * n_envs) as u64;
        counter.timesteps += (t_steps * n_envs) as u64;
        let stats = optimize(state, &buffer, cfg, epochs, lr)?;
        let (mean_r, mean_l) = if episodes.is_empty() {
            (None, None)
        } else {
            let n = episodes.len() as f64;
            (
                Some(episodes.iter().map(|e| e.0).sum::<f64>() / n),
                Some(episodes.iter().map(|e| e.1 as f64).sum::<f64>() / n),
            )
        };
        counter.iteration += 1;
        on_row(&CurveRow {
            iteration: counter.iteration,
            timesteps: counter.timesteps,
            mean_episode_reward: mean_r,
            mean_episode_len: mean_l,
            loss: stats[0],
            policy_loss: stats[1],
            value_loss: stats[2],
            entropy: stats[3],
        })?;
    }
    Ok(steps_per_submodel)
}

/// Prepares raw observations, updating the running statistics first when
/// normalization is on.
fn observe(agent: &mut Agent, raw: &[Vec<f64>], update: bool) -> Tensor {
    if let Some(stats) = agent.obs_norm.as_mut() {
        if update {
            for o in raw {
                stats.update(o);
            }
        }
        let rows: Vec<Vec<f64>> = raw.iter().map(|o| stats.normalize(o)).collect();
        Tensor::from_rows(&rows).expect("equal widths")
    } else {
        Tensor::from_rows(raw).expect("equal widths")
    }
}

/// Collects `t_steps` steps from every environment. Also returns the
/// `(return, length)` of each finished episode.
fn collect(
    venv: &mut VecEnv,
    state: &mut TrainState,
    submodels: &[usize],
    t_steps: usize,
    cfg: &PpoConfig,
) -> Result<(RolloutBuffer, Vec<(f64, usize)>)> {
    let ensemble = matches!(state.agent.method(), Method::Ensembles { .. });
    let mut buffer = RolloutBuffer::new(venv.len());
    let mut episodes = Vec::new();
    for _ in 0..t_steps {
        let raw = venv.obs().to_vec();
        let x = observe(&mut state.agent, &raw, cfg.normalize_obs);
        let step = state.agent.sample_training(&x, submodels, &mut state.rollout_rng)?;
        let all = if ensemble {
            Some(state.agent.logprobs_all(&x, &step.actions, &mut state.rollout_rng)?)
        } else {
            None
        };
        let out = venv.step(&step.actions)?;
        for e in 0..venv.len() {
            if !out.rewards[e].is_finite() {
                return Err(Error::Divergence(format!("non-finite reward in environment {e}")));
            }
            buffer.push(Transition {
                obs: x.row_slice(e).to_vec(),
                action: step.actions[e].clone(),
                reward: out.rewards[e],
                done: out.dones[e],
                value: step.values[e],
                logprob: step.logprobs[e],
                submodel: submodels[e],
                env_index: e,
                logprobs_all: all.as_ref().map(|a| a.iter().map(|m| m[e]).collect()),
            });
        }
        episodes.extend(out.finished.iter().map(|r| (r.ret, r.len)));
    }
    let x = observe(&mut state.agent, venv.obs(), false);
    let bootstrap = state
        .agent
        .value
        .forward_rows(&x, submodels, &mut state.rollout_rng)?
        .into_data();
    buffer.compute_gae(cfg.gamma, cfg.gae_lambda, &bootstrap)?;
    Ok((buffer, episodes))
}

/// Runs the optimization epochs; returns the mean loss, policy loss, value
/// loss and entropy over all minibatches.
fn optimize(state: &mut TrainState, buffer: &RolloutBuffer, cfg: &PpoConfig, epochs: usize, lr: f64) -> Result<[f64; 4]> {
    if !buffer.has_advantages() {
        return Err(Error::contract("advantages must be computed before optimizing"));
    }
    let index = buffer.index();
    let n = index.len();
    let mut sums = [0.0; 4];
    let mut count = 0.0;
    let freeze = state.agent.config.freeze_log_std;
    for _ in 0..epochs {
        for chunk in epoch_minibatches(n, cfg.batch_size, &mut state.minibatch_rng) {
            let mb = minibatch(buffer, &index, &chunk, cfg.normalize_advantage)?;
            let out = ppo_loss(&state.agent, &mb, cfg.coefficients(), &mut state.loss_rng)?;
            let mut grads = out.grads;
            if freeze {
                if let Some(last) = state.agent.log_std.as_ref().and(grads.last_mut()) {
                    *last = Tensor::zeros(last.shape());
                }
            }
            clip_global_norm(&mut grads, cfg.max_grad_norm);
            let mut params = agent_params_mut(&mut state.agent);
            state.adam.update(&mut params, &grads, lr)?;
            if params.iter().any(|p| !p.is_finite()) {
                return Err(Error::Divergence("parameters became non-finite".into()));
            }
            for (s, v) in sums.iter_mut().zip([out.loss, out.policy_loss, out.value_loss, out.entropy]) {
                *s += v;
            }
            count += 1.0;
        }
    }
    Ok(sums.map(|s| s / count))
}

/// A random partition of `0..n` into minibatches of `batch_size`; the last
/// one may be smaller.
pub fn epoch_minibatches(n: usize, batch_size: usize, rng: &mut Rng) -> Vec<Vec<usize>> {
    let mut perm: Vec<usize> = (0..n).collect();
    rng.shuffle(&mut perm);
    perm.chunks(batch_size.max(1)).map(<[usize]>::to_vec).collect()
}

fn minibatch(buffer: &RolloutBuffer, index: &[(usize, usize)], chunk: &[usize], normalize: bool) -> Result<Minibatch> {
    let rows: Vec<&Transition> = chunk.iter().map(|&i| &buffer.steps[index[i].0][index[i].1]).collect();
    let obs: Vec<&[f64]> = rows.iter().map(|t| t.obs.as_slice()).collect();
    let mut advantages: Vec<f64> = chunk
        .iter()
        .map(|&i| buffer.advantages[index[i].0][index[i].1])
        .collect();
    if normalize {
        normalize_advantages(&mut advantages);
    }
    let all: Option<Vec<Vec<f64>>> = rows.iter().map(|t| t.logprobs_all.clone()).collect();
    Ok(Minibatch {
        obs: Tensor::from_rows(&obs)?,
        actions: rows.iter().map(|t| t.action.clone()).collect(),
        old_logprobs: rows.iter().map(|t| t.logprob).collect(),
        old_logprobs_all: all,
        advantages,
        returns: chunk.iter().map(|&i| buffer.returns[index[i].0][index[i].1]).collect(),
        submodels: rows.iter().map(|t| t.submodel).collect(),
    })
}
