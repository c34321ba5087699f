//! Out-of-distribution detection benchmark.
//!
//! In-distribution states come from the trained policy acting in the
//! unperturbed environment. Out-of-distribution states come from the same
//! policy acting under sampled physics perturbations, or from attacked copies
//! of the in-distribution observations. Each uncertainty measure is scored
//! as a detector by ROC-AUC.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::agent::{Agent, InferenceScheme};
use crate::envs::{make_env, perturb, EnvParams, PerturbationSpace};
use crate::error::{Error, Result};
use crate::math::rng::{stream, Rng};
use crate::math::tensor::Tensor;
use crate::space::ActionSpace;
use crate::uncertainty::{report, Measure, MeasureOptions, UncertaintyReport};

/// Rolls the agent in one environment and records the observation seen
/// before every action. Returns `(observation, step index within episode)`.
fn rollout_states(
    agent: &Agent,
    env_id: &str,
    params: &EnvParams,
    n_steps: usize,
    scheme: InferenceScheme,
    seed: u64,
    env_stream: u64,
) -> Result<Vec<(Vec<f64>, usize)>> {
    let mut env = make_env(env_id, params.clone(), seed, env_stream)?;
    let mut net_rng = Rng::new(seed, stream::NOISE);
    let mut rng = Rng::new(seed, stream::TIE);
    let mut out = Vec::with_capacity(n_steps);
    if n_steps == 0 {
        return Ok(out);
    }
    let mut obs = env.reset();
    let mut t = 0;
    for _ in 0..n_steps {
        out.push((obs.clone(), t));
        let action = agent.act(&obs, scheme, &mut net_rng, &mut rng)?;
        let s = env.step(&action)?;
        if s.done {
            obs = env.reset();
            t = 0;
        } else {
            obs = s.obs;
            t += 1;
        }
    }
    Ok(out)
}

/// `n_steps` in-distribution observations from evaluation rollouts in the
/// unperturbed environment.
pub fn collect_id_states(
    agent: &Agent,
    env_id: &str,
    n_steps: usize,
    scheme: InferenceScheme,
    seed: u64,
) -> Result<Vec<Vec<f64>>> {
    Ok(rollout_states(agent, env_id, &EnvParams::default(), n_steps, scheme, seed, stream::EVAL)?
        .into_iter()
        .map(|(o, _)| o)
        .collect())
}

#[derive(Clone, Debug, PartialEq)]
pub struct OodStates {
    pub states: Vec<Vec<f64>>,
    /// Index into `configs` for every state.
    pub config_ids: Vec<usize>,
    pub configs: Vec<EnvParams>,
}

/// For each of `n_configs` sampled perturbations, acts `steps_per_config`
/// steps and keeps the states at episode step `burn_in` or later.
#[allow(clippy::too_many_arguments)]
pub fn collect_ood_states(
    agent: &Agent,
    env_id: &str,
    space: &PerturbationSpace,
    n_configs: usize,
    steps_per_config: usize,
    burn_in: usize,
    scheme: InferenceScheme,
    seed: u64,
) -> Result<OodStates> {
    space.validate()?;
    let mut rng = Rng::new(seed, stream::PERTURB);
    let mut out = OodStates {
        states: Vec::new(),
        config_ids: Vec::new(),
        configs: Vec::with_capacity(n_configs),
    };
    for c in 0..n_configs {
        let params = perturb(&EnvParams::default(), space, &mut rng);
        let states = rollout_states(
            agent,
            env_id,
            &params,
            steps_per_config,
            scheme,
            seed,
            stream::ENV_BASE + c as u64,
        )?;
        for (obs, t) in states {
            if t >= burn_in {
                out.states.push(obs);
                out.config_ids.push(c);
            }
        }
        out.configs.push(params);
    }
    Ok(out)
}

/// Observation attacks on vector observations.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum AttackSpec {
    None,
    /// All-zero observation.
    ZeroObs,
    /// Elementwise maximum of the reference states.
    MaxObs,
    /// Adds `U(-level·std, level·std)` per dimension.
    UniformNoise { level: f64 },
    /// Zeroes a fixed set of dimensions.
    StaticMask { dims: Vec<usize> },
}

impl AttackSpec {
    pub fn validate(&self, obs_dim: usize) -> Result<()> {
        match self {
            AttackSpec::UniformNoise { level } if !(*level >= 0.0 && level.is_finite()) => {
                Err(Error::config("bench.attack.level", format!("must be non-negative, got {level}")))
            }
            AttackSpec::StaticMask { dims } if dims.iter().any(|&d| d >= obs_dim) => Err(Error::config(
                "bench.attack.dims",
                format!("dimension out of range for {obs_dim} observations"),
            )),
            _ => Ok(()),
        }
    }

    pub fn label(&self) -> String {
        match self {
            AttackSpec::None => "none".into(),
            AttackSpec::ZeroObs => "zero_obs".into(),
            AttackSpec::MaxObs => "max_obs".into(),
            AttackSpec::UniformNoise { level } => format!("uniform_noise_{level}"),
            AttackSpec::StaticMask { .. } => "static_mask".into(),
        }
    }
}

/// Per-dimension statistics of a reference state set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObsStats {
    pub mean: Vec<f64>,
    /// Population standard deviation.
    pub std: Vec<f64>,
    pub max: Vec<f64>,
}

impl ObsStats {
    pub fn of(states: &[Vec<f64>]) -> Result<Self> {
        let first = states
            .first()
            .ok_or_else(|| Error::contract("statistics of an empty state set"))?;
        let d = first.len();
        let n = states.len() as f64;
        let mut mean = vec![0.0; d];
        let mut max = vec![f64::NEG_INFINITY; d];
        for s in states {
            for j in 0..d {
                mean[j] += s[j] / n;
                max[j] = max[j].max(s[j]);
            }
        }
        let mut var = vec![0.0; d];
        for s in states {
            for j in 0..d {
                var[j] += (s[j] - mean[j]).powi(2) / n;
            }
        }
        Ok(ObsStats {
            mean,
            std: var.into_iter().map(f64::sqrt).collect(),
            max,
        })
    }
}

pub fn apply_attack(states: &[Vec<f64>], spec: &AttackSpec, stats: &ObsStats, rng: &mut Rng) -> Result<Vec<Vec<f64>>> {
    if let Some(s) = states.first() {
        spec.validate(s.len())?;
    }
    Ok(states
        .iter()
        .map(|s| match spec {
            AttackSpec::None => s.clone(),
            AttackSpec::ZeroObs => vec![0.0; s.len()],
            AttackSpec::MaxObs => stats.max.clone(),
            AttackSpec::UniformNoise { level } => s
                .iter()
                .zip(&stats.std)
                .map(|(x, sd)| {
                    let c = level * sd;
                    if c == 0.0 {
                        *x
                    } else {
                        x + rng.uniform_range(-c, c)
                    }
                })
                .collect(),
            AttackSpec::StaticMask { dims } => {
                let mut out = s.clone();
                for &d in dims {
                    out[d] = 0.0;
                }
                out
            }
        })
        .collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RocResult {
    pub measure: String,
    /// Threshold of every curve point; the first is `+inf`.
    pub thresholds: Vec<f64>,
    pub fpr: Vec<f64>,
    pub tpr: Vec<f64>,
    pub auc: f64,
    /// Set when `auc < 0.5`, i.e. the measure ranks ID states above OOD.
    pub flipped: bool,
}

fn check_classes(id: &[f64], ood: &[f64]) -> Result<()> {
    if id.is_empty() || ood.is_empty() {
        return Err(Error::contract(format!(
            "ROC needs both classes; got {} ID and {} OOD scores",
            id.len(),
            ood.len()
        )));
    }
    if id.iter().chain(ood).any(|s| s.is_nan()) {
        return Err(Error::contract("NaN score"));
    }
    Ok(())
}

/// Probability that a random OOD score exceeds a random ID score, ties
/// counting one half.
pub fn auc_mann_whitney(id: &[f64], ood: &[f64]) -> Result<f64> {
    check_classes(id, ood)?;
    let mut sorted = id.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut wins = 0.0;
    for &s in ood {
        let below = sorted.partition_point(|&x| x < s);
        let not_above = sorted.partition_point(|&x| x <= s);
        wins += below as f64 + 0.5 * (not_above - below) as f64;
    }
    Ok(wins / (id.len() as f64 * ood.len() as f64))
}

/// ROC points from sweeping every distinct score as a threshold; a state is
/// flagged OOD when its score is at least the threshold.
pub fn roc_curve(id: &[f64], ood: &[f64]) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>)> {
    check_classes(id, ood)?;
    let mut all: Vec<(f64, bool)> = id
        .iter()
        .map(|&s| (s, false))
        .chain(ood.iter().map(|&s| (s, true)))
        .collect();
    all.sort_by(|a, b| b.0.total_cmp(&a.0));
    let (n_id, n_ood) = (id.len() as f64, ood.len() as f64);
    let mut thresholds = vec![f64::INFINITY];
    let mut fpr = vec![0.0];
    let mut tpr = vec![0.0];
    let (mut fp, mut tp) = (0usize, 0usize);
    let mut i = 0;
    while i < all.len() {
        let t = all[i].0;
        while i < all.len() && all[i].0 == t {
            if all[i].1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        thresholds.push(t);
        fpr.push(fp as f64 / n_id);
        tpr.push(tp as f64 / n_ood);
    }
    Ok((thresholds, fpr, tpr))
}

/// Trapezoidal area under a curve.
pub fn trapezoid(x: &[f64], y: &[f64]) -> f64 {
    x.windows(2)
        .zip(y.windows(2))
        .map(|(xs, ys)| (xs[1] - xs[0]) * (ys[0] + ys[1]) / 2.0)
        .sum()
}

pub fn roc(measure: &str, id: &[f64], ood: &[f64]) -> Result<RocResult> {
    let (thresholds, fpr, tpr) = roc_curve(id, ood)?;
    let auc = auc_mann_whitney(id, ood)?;
    Ok(RocResult {
        measure: measure.to_string(),
        thresholds,
        fpr,
        tpr,
        auc,
        flipped: auc < 0.5,
    })
}

/// Uncertainty measures of raw observations, evaluated in chunks.
pub fn measure_states(agent: &Agent, states: &[Vec<f64>], opts: MeasureOptions, rng: &mut Rng) -> Result<UncertaintyReport> {
    const CHUNK: usize = 1024;
    let discrete = agent.action_space().is_discrete();
    let mut out = UncertaintyReport {
        value_u: Vec::new(),
        policy_u_std: Vec::new(),
        policy_u_js: Vec::new(),
        max_prob_u: discrete.then(Vec::new),
        entropy_u: discrete.then(Vec::new),
    };
    for chunk in states.chunks(CHUNK) {
        let bundle = agent.bundle(&Tensor::from_rows(chunk)?, rng)?;
        let rep = report(&bundle, opts)?;
        out.value_u.extend(rep.value_u);
        out.policy_u_std.extend(rep.policy_u_std);
        out.policy_u_js.extend(rep.policy_u_js);
        if let (Some(a), Some(b)) = (out.max_prob_u.as_mut(), rep.max_prob_u) {
            a.extend(b);
        }
        if let (Some(a), Some(b)) = (out.entropy_u.as_mut(), rep.entropy_u) {
            a.extend(b);
        }
    }
    Ok(out)
}

/// ROC results for every applicable measure.
pub fn score_measures(
    agent: &Agent,
    id_states: &[Vec<f64>],
    ood_states: &[Vec<f64>],
    opts: MeasureOptions,
    seed: u64,
) -> Result<Vec<RocResult>> {
    let mut rng = Rng::new(seed, stream::NOISE);
    let id = measure_states(agent, id_states, opts, &mut rng)?;
    let ood = measure_states(agent, ood_states, opts, &mut rng)?;
    score_reports(agent.action_space().is_discrete(), &id, &ood)
}

/// Per-step measures over ID states followed by OOD states.
#[derive(Clone, Debug, PartialEq)]
pub struct Timeline {
    /// Index of the first OOD state.
    pub boundary: usize,
    pub measures: Vec<Measure>,
    /// One row per state, one column per measure.
    pub rows: Vec<Vec<f64>>,
}

pub fn uncertainty_timeline(
    agent: &Agent,
    id_states: &[Vec<f64>],
    ood_states: &[Vec<f64>],
    opts: MeasureOptions,
    seed: u64,
) -> Result<Timeline> {
    let mut rng = Rng::new(seed, stream::NOISE);
    let id = measure_states(agent, id_states, opts, &mut rng)?;
    let ood = measure_states(agent, ood_states, opts, &mut rng)?;
    Ok(timeline_of(agent.action_space().is_discrete(), &id, &ood))
}

pub fn timeline_of(discrete: bool, id: &UncertaintyReport, ood: &UncertaintyReport) -> Timeline {
    let measures = Measure::applicable(discrete);
    let column = |r: &UncertaintyReport, m: Measure| r.get(m).map(<[f64]>::to_vec).unwrap_or_default();
    let cols: Vec<Vec<f64>> = measures
        .iter()
        .map(|&m| {
            let mut c = column(id, m);
            c.extend(column(ood, m));
            c
        })
        .collect();
    let n = id.value_u.len() + ood.value_u.len();
    Timeline {
        boundary: id.value_u.len(),
        measures,
        rows: (0..n).map(|i| cols.iter().map(|c| c[i]).collect()).collect(),
    }
}

/// Where out-of-distribution states come from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum OodSource {
    /// Rollouts under sampled physics perturbations.
    Perturbation,
    /// Attacked copies of the ID states.
    Attack { attack: AttackSpec },
    /// A second unperturbed collection with another seed; a null control.
    Null,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BenchConfig {
    pub n_id_steps: usize,
    pub n_ood_configs: usize,
    pub steps_per_config: usize,
    pub burn_in: usize,
    pub perturbation: PerturbationSpace,
    pub source: OodSource,
    pub measures: MeasureOptions,
    /// Policy used while collecting states; `None` samples from the
    /// aggregated policy.
    pub collection_scheme: Option<InferenceScheme>,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            n_id_steps: 2000,
            n_ood_configs: 50,
            steps_per_config: 100,
            burn_in: 10,
            perturbation: PerturbationSpace {
                at_least_one: true,
                ..PerturbationSpace::default()
            },
            source: OodSource::Perturbation,
            measures: MeasureOptions::default(),
            collection_scheme: None,
        }
    }
}

impl BenchConfig {
    pub fn validate(&self, obs_dim: usize, space: ActionSpace) -> Result<()> {
        if let Some(scheme) = self.collection_scheme {
            scheme.check(space)?;
        }
        if self.n_id_steps == 0 {
            return Err(Error::config("bench.n_id_steps", "must be positive"));
        }
        match &self.source {
            OodSource::Perturbation => {
                self.perturbation.validate()?;
                if self.n_ood_configs == 0 || self.steps_per_config <= self.burn_in {
                    return Err(Error::config(
                        "bench.steps_per_config",
                        "perturbation source needs configs and steps beyond burn_in",
                    ));
                }
            }
            OodSource::Attack { attack } => attack.validate(obs_dim)?,
            OodSource::Null => {}
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct BenchResult {
    pub id_states: Vec<Vec<f64>>,
    pub ood_states: Vec<Vec<f64>>,
    /// Provenance of every OOD state.
    pub provenance: Vec<String>,
    /// Sampled physics, indexed by the number in `config_<i>` tags.
    pub perturbations: Vec<EnvParams>,
    pub id_scores: UncertaintyReport,
    pub ood_scores: UncertaintyReport,
    pub rocs: Vec<RocResult>,
    pub timeline: Timeline,
}

impl BenchResult {
    pub fn auc(&self, m: Measure) -> Option<f64> {
        self.rocs.iter().find(|r| r.measure == m.name()).map(|r| r.auc)
    }

    /// AUC of measure `m` restricted to each OOD provenance tag.
    pub fn auc_by_provenance(&self, m: Measure) -> Result<BTreeMap<String, f64>> {
        let id = self.id_scores.get(m).ok_or_else(|| Error::contract("measure not applicable"))?;
        let ood = self.ood_scores.get(m).ok_or_else(|| Error::contract("measure not applicable"))?;
        let mut groups: BTreeMap<String, Vec<f64>> = BTreeMap::new();
        for (tag, &s) in self.provenance.iter().zip(ood) {
            groups.entry(tag.clone()).or_default().push(s);
        }
        groups
            .into_iter()
            .map(|(tag, scores)| Ok((tag, auc_mann_whitney(id, &scores)?)))
            .collect()
    }
}

/// ROC results for every measure present in both reports.
pub fn score_reports(discrete: bool, id: &UncertaintyReport, ood: &UncertaintyReport) -> Result<Vec<RocResult>> {
    Measure::applicable(discrete)
        .into_iter()
        .map(|m| match (id.get(m), ood.get(m)) {
            (Some(a), Some(b)) => roc(m.name(), a, b),
            _ => Err(Error::contract(format!("{} missing from report", m.name()))),
        })
        .collect()
}

/// Runs the full protocol for one trained agent.
pub fn run_benchmark(agent: &Agent, env_id: &str, cfg: &BenchConfig, seed: u64) -> Result<BenchResult> {
    cfg.validate(agent.config.obs_dim, agent.action_space())?;
    let scheme = cfg
        .collection_scheme
        .unwrap_or_else(|| InferenceScheme::sampling_for(agent.action_space()));
    let id_states = collect_id_states(agent, env_id, cfg.n_id_steps, scheme, seed)?;
    let mut perturbations = Vec::new();
    let (ood_states, provenance) = match &cfg.source {
        OodSource::Perturbation => {
            let ood = collect_ood_states(
                agent,
                env_id,
                &cfg.perturbation,
                cfg.n_ood_configs,
                cfg.steps_per_config,
                cfg.burn_in,
                scheme,
                seed,
            )?;
            if ood.states.is_empty() {
                return Err(Error::config(
                    "bench.burn_in",
                    format!("{env_id} episodes never outlast a burn-in of {} steps", cfg.burn_in),
                ));
            }
            perturbations = ood.configs;
            let tags = ood.config_ids.iter().map(|c| format!("config_{c}")).collect();
            (ood.states, tags)
        }
        OodSource::Attack { attack } => {
            let stats = ObsStats::of(&id_states)?;
            let mut rng = Rng::new(seed, stream::ATTACK);
            let states = apply_attack(&id_states, attack, &stats, &mut rng)?;
            let tags = vec![attack.label(); states.len()];
            (states, tags)
        }
        OodSource::Null => {
            let states = collect_id_states(agent, env_id, cfg.n_id_steps, scheme, seed.wrapping_add(1))?;
            let tags = vec!["null".to_string(); states.len()];
            (states, tags)
        }
    };
    let discrete = agent.action_space().is_discrete();
    let mut rng = Rng::new(seed, stream::NOISE);
    let id_scores = measure_states(agent, &id_states, cfg.measures, &mut rng)?;
    let ood_scores = measure_states(agent, &ood_states, cfg.measures, &mut rng)?;
    let rocs = score_reports(discrete, &id_scores, &ood_scores)?;
    let timeline = timeline_of(discrete, &id_scores, &ood_scores);
    Ok(BenchResult {
        id_states,
        ood_states,
        provenance,
        perturbations,
        id_scores,
        ood_scores,
        rocs,
        timeline,
    })
}
