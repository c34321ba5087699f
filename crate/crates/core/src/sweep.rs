//! Two-objective random search over training hyperparameters.
//!
//! Every sampled configuration is trained, evaluated for reward, and scored
//! for OOD detection against noise-attacked copies of its own ID states.
//! The Pareto front over (reward, AUC) is then extracted.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::agent::{Agent, AgentConfig, InferenceScheme};
use crate::envs::EnvParams;
use crate::error::{Error, Result};
use crate::layers::net::Method;
use crate::math::rng::{stream, Rng};
use crate::ood::{apply_attack, auc_mann_whitney, collect_id_states, measure_states, AttackSpec, ObsStats};
use crate::ppo::evaluate::mean;
use crate::ppo::{evaluate, train, PpoConfig};
use crate::uncertainty::{Measure, MeasureOptions};

/// Reward recorded for runs that diverged.
pub const DIVERGED_REWARD: f64 = f64::NEG_INFINITY;

/// Ranges for random search. Pairs are inclusive `(lo, hi)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepSpace {
    /// Sampled log-uniformly.
    pub learning_rate: (f64, f64),
    pub hidden_width: Vec<usize>,
    /// Sub-model counts; only values compatible with the PPO config are used.
    pub k: Vec<usize>,
    /// Masksembles scale, capped at the sampled `k`.
    pub scale: (f64, f64),
    pub dropout_p: (f64, f64),
    pub clip_range: (f64, f64),
    pub ent_coef: (f64, f64),
    pub gae_lambda: (f64, f64),
    pub n_epochs: Vec<usize>,
}

impl Default for SweepSpace {
    fn default() -> Self {
        SweepSpace {
            learning_rate: (1e-4, 3e-3),
            hidden_width: vec![32, 64],
            k: vec![2, 4],
            scale: (1.0, 3.0),
            dropout_p: (0.05, 0.3),
            clip_range: (0.1, 0.3),
            ent_coef: (0.0, 0.01),
            gae_lambda: (0.8, 0.99),
            n_epochs: vec![5, 10, 20],
        }
    }
}

fn check_range(field: &str, (lo, hi): (f64, f64), min: f64, max: f64) -> Result<()> {
    if !(lo.is_finite() && hi.is_finite() && min <= lo && lo <= hi && hi <= max) {
        return Err(Error::config(field, format!("range ({lo}, {hi}) must lie within [{min}, {max}] with lo <= hi")));
    }
    Ok(())
}

fn check_choices(field: &str, xs: &[usize]) -> Result<()> {
    if xs.is_empty() || xs.contains(&0) {
        return Err(Error::config(field, "needs at least one positive choice"));
    }
    Ok(())
}

impl SweepSpace {
    pub fn validate(&self) -> Result<()> {
        check_range("sweep.space.learning_rate", self.learning_rate, f64::MIN_POSITIVE, 1.0)?;
        check_choices("sweep.space.hidden_width", &self.hidden_width)?;
        check_choices("sweep.space.k", &self.k)?;
        if self.k.contains(&1) {
            return Err(Error::config("sweep.space.k", "sub-model counts must be at least 2"));
        }
        check_range("sweep.space.scale", self.scale, 1.0, f64::MAX)?;
        check_range("sweep.space.dropout_p", self.dropout_p, 0.0, 0.99)?;
        check_range("sweep.space.clip_range", self.clip_range, f64::MIN_POSITIVE, 1.0)?;
        check_range("sweep.space.ent_coef", self.ent_coef, 0.0, 1.0)?;
        check_range("sweep.space.gae_lambda", self.gae_lambda, 0.0, 1.0)?;
        check_choices("sweep.space.n_epochs", &self.n_epochs)
    }
}

/// One sampled configuration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepParams {
    pub method: Method,
    pub learning_rate: f64,
    pub hidden_width: usize,
    pub clip_range: f64,
    pub ent_coef: f64,
    pub gae_lambda: f64,
    pub n_epochs: usize,
}

fn with_k(method: &Method, k: usize, scale: f64, p: f64) -> Method {
    match method {
        Method::None => Method::None,
        Method::Masksembles { .. } => Method::Masksembles { k, scale: scale.min(k as f64) },
        Method::Dropout { .. } => Method::Dropout { k, p },
        Method::Dropconnect { .. } => Method::Dropconnect { k, p },
        Method::Ensembles { .. } => Method::Ensembles { k },
    }
}

fn pick<T: Copy>(xs: &[T], rng: &mut Rng) -> T {
    xs[rng.below(xs.len())]
}

/// Samples configuration `index`; depends only on `(seed, index)`.
pub fn sample_params(space: &SweepSpace, base: &Method, ppo: &PpoConfig, seed: u64, index: usize) -> Result<SweepParams> {
    let valid_k: Vec<usize> = space
        .k
        .iter()
        .copied()
        .filter(|&k| ppo.validate(&with_k(base, k, 1.0, 0.0)).is_ok())
        .collect();
    if valid_k.is_empty() {
        return Err(Error::config(
            "sweep.space.k",
            format!("no sub-model count in {:?} is compatible with the PPO configuration", space.k),
        ));
    }
    let mut rng = Rng::new(seed.wrapping_add(index as u64), stream::SWEEP);
    let (lr_lo, lr_hi) = space.learning_rate;
    let learning_rate = (lr_lo.ln() + rng.uniform() * (lr_hi.ln() - lr_lo.ln())).exp();
    let hidden_width = pick(&space.hidden_width, &mut rng);
    let k = pick(&valid_k, &mut rng);
    let scale = rng.uniform_range(space.scale.0, space.scale.1);
    let p = rng.uniform_range(space.dropout_p.0, space.dropout_p.1);
    Ok(SweepParams {
        method: with_k(base, k, scale, p),
        learning_rate,
        hidden_width,
        clip_range: rng.uniform_range(space.clip_range.0, space.clip_range.1),
        ent_coef: rng.uniform_range(space.ent_coef.0, space.ent_coef.1),
        gae_lambda: rng.uniform_range(space.gae_lambda.0, space.gae_lambda.1),
        n_epochs: pick(&space.n_epochs, &mut rng),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepSettings {
    pub n_configs: usize,
    /// Environment steps per configuration.
    pub budget: u64,
    pub eval_episodes: usize,
    /// Uniform-noise attack level, in units of per-dimension ID std.
    pub noise_level: f64,
    pub n_id_steps: usize,
    /// Uncertainty measure used as the second objective.
    pub objective: Measure,
    pub measures: MeasureOptions,
    pub space: SweepSpace,
}

impl Default for SweepSettings {
    fn default() -> Self {
        SweepSettings {
            n_configs: 20,
            budget: 50_000,
            eval_episodes: 10,
            noise_level: 2.0,
            n_id_steps: 2000,
            objective: Measure::ValueStd,
            measures: MeasureOptions::default(),
            space: SweepSpace::default(),
        }
    }
}

impl SweepSettings {
    pub fn validate(&self, method: &Method, discrete: bool) -> Result<()> {
        if matches!(method, Method::None) {
            return Err(Error::config("method", "a sweep needs a method with at least two sub-models"));
        }
        if self.n_configs == 0 || self.eval_episodes == 0 || self.n_id_steps == 0 {
            return Err(Error::config("sweep", "n_configs, eval_episodes and n_id_steps must be positive"));
        }
        if self.objective.categorical_only() && !discrete {
            return Err(Error::config(
                "sweep.objective",
                format!("{} needs a discrete action space", self.objective.name()),
            ));
        }
        AttackSpec::UniformNoise { level: self.noise_level }.validate(1)?;
        self.space.validate()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub config_id: usize,
    pub params: SweepParams,
    /// Mean evaluation reward, or [`DIVERGED_REWARD`].
    pub reward: f64,
    /// NaN for diverged runs.
    pub auc: f64,
    pub diverged: bool,
    pub dominated: bool,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ParetoPoint {
    pub config_id: usize,
    pub reward: f64,
    pub auc: f64,
    pub dominated: bool,
}

/// Whether `q` dominates `p`: at least as good in both objectives and
/// strictly better in one.
pub fn dominates(q: &ParetoPoint, p: &ParetoPoint) -> bool {
    q.reward >= p.reward && q.auc >= p.auc && (q.reward > p.reward || q.auc > p.auc)
}

/// Non-dominated points, both objectives maximized, sorted by reward then
/// AUC, both descending. Identical points are all kept. Points with a
/// non-finite objective are never on the front.
pub fn pareto_front(points: &[ParetoPoint]) -> Vec<ParetoPoint> {
    let mut order: Vec<&ParetoPoint> = points
        .iter()
        .filter(|p| p.reward.is_finite() && p.auc.is_finite())
        .collect();
    order.sort_by(|a, b| {
        b.reward
            .total_cmp(&a.reward)
            .then(b.auc.total_cmp(&a.auc))
            .then(a.config_id.cmp(&b.config_id))
    });
    let mut front = Vec::new();
    // Best AUC among points with strictly higher reward.
    let mut best_above = f64::NEG_INFINITY;
    let mut i = 0;
    while i < order.len() {
        let r = order[i].reward;
        let group_end = order[i..].iter().position(|p| p.reward != r).map_or(order.len(), |n| i + n);
        let group_best = order[i].auc;
        for p in &order[i..group_end] {
            if p.auc == group_best && p.auc > best_above {
                front.push(ParetoPoint { dominated: false, ..**p });
            }
        }
        best_above = best_above.max(group_best);
        i = group_end;
    }
    front
}

/// Sets the `dominated` flag of every point.
pub fn mark_dominated(points: &mut [ParetoPoint]) {
    let front: Vec<usize> = pareto_front(points).iter().map(|p| p.config_id).collect();
    for p in points.iter_mut() {
        p.dominated = !front.contains(&p.config_id);
    }
}

fn run_one(
    env_id: &str,
    base: &AgentConfig,
    ppo: &PpoConfig,
    settings: &SweepSettings,
    params: &SweepParams,
    seed: u64,
) -> Result<(f64, f64)> {
    let agent_cfg = AgentConfig {
        hidden: vec![params.hidden_width; base.hidden.len()],
        method: params.method.clone(),
        seed,
        ..base.clone()
    };
    let cfg = PpoConfig {
        learning_rate: params.learning_rate,
        clip_range: params.clip_range,
        ent_coef: params.ent_coef,
        gae_lambda: params.gae_lambda,
        n_epochs: params.n_epochs,
        total_timesteps: settings.budget,
        ..ppo.clone()
    };
    let agent = Agent::new(agent_cfg)?;
    let out = train(env_id, &EnvParams::default(), agent, &cfg, seed, &mut |_| Ok(()))?;
    let agent = out.state.agent;
    let space = agent.action_space();
    let rewards = evaluate(
        &agent,
        env_id,
        &EnvParams::default(),
        settings.eval_episodes,
        InferenceScheme::default_for(space),
        seed,
    )?;
    let id = collect_id_states(&agent, env_id, settings.n_id_steps, InferenceScheme::sampling_for(space), seed)?;
    let stats = ObsStats::of(&id)?;
    let attack = AttackSpec::UniformNoise { level: settings.noise_level };
    let ood = apply_attack(&id, &attack, &stats, &mut Rng::new(seed, stream::ATTACK))?;
    let mut rng = Rng::new(seed, stream::NOISE);
    let id_u = measure_states(&agent, &id, settings.measures, &mut rng)?;
    let ood_u = measure_states(&agent, &ood, settings.measures, &mut rng)?;
    let m = settings.objective;
    let auc = auc_mann_whitney(
        id_u.get(m).ok_or_else(|| Error::contract("objective not applicable"))?,
        ood_u.get(m).ok_or_else(|| Error::contract("objective not applicable"))?,
    )?;
    Ok((mean(&rewards), auc))
}

/// Worker count: `OODPPO_THREADS` if set, otherwise the machine default.
pub fn worker_threads() -> Result<usize> {
    match std::env::var("OODPPO_THREADS") {
        Ok(v) => v
            .parse::<usize>()
            .ok()
            .filter(|&n| n > 0)
            .ok_or_else(|| Error::config("OODPPO_THREADS", format!("expected a positive integer, got {v:?}"))),
        Err(_) => Ok(std::thread::available_parallelism().map_or(1, |n| n.get())),
    }
}

/// Trains and scores `settings.n_configs` sampled configurations.
/// Configuration `i` uses seed `seed + i`, so the result does not depend on
/// the number of workers.
pub fn run_sweep(
    env_id: &str,
    base: &AgentConfig,
    ppo: &PpoConfig,
    settings: &SweepSettings,
    seed: u64,
) -> Result<Vec<SweepRow>> {
    settings.validate(&base.method, base.action_space.is_discrete())?;
    let params: Vec<SweepParams> = (0..settings.n_configs)
        .map(|i| sample_params(&settings.space, &base.method, ppo, seed, i))
        .collect::<Result<_>>()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(worker_threads()?)
        .build()
        .map_err(|e| Error::contract(format!("worker pool: {e}")))?;
    let results: Vec<Result<(f64, f64)>> = pool.install(|| {
        params
            .par_iter()
            .enumerate()
            .map(|(i, p)| run_one(env_id, base, ppo, settings, p, seed.wrapping_add(i as u64)))
            .collect()
    });
    let mut rows = Vec::with_capacity(results.len());
    for (i, (p, r)) in params.into_iter().zip(results).enumerate() {
        let (reward, auc, diverged) = match r {
            Ok((reward, auc)) => (reward, auc, false),
            Err(Error::Divergence(_)) => (DIVERGED_REWARD, f64::NAN, true),
            Err(e) => return Err(e),
        };
        rows.push(SweepRow {
            config_id: i,
            params: p,
            reward,
            auc,
            diverged,
            dominated: true,
        });
    }
    let mut points = points_of(&rows);
    mark_dominated(&mut points);
    for (row, p) in rows.iter_mut().zip(&points) {
        row.dominated = p.dominated;
    }
    Ok(rows)
}

pub fn points_of(rows: &[SweepRow]) -> Vec<ParetoPoint> {
    rows.iter()
        .map(|r| ParetoPoint {
            config_id: r.config_id,
            reward: r.reward,
            auc: r.auc,
            dominated: r.dominated,
        })
        .collect()
}
