//! Run configuration: one JSON document describing an experiment.
//!
//! Every section has defaults, unknown keys are rejected, and
//! [`RunConfig::validate`] checks each module's preconditions before any
//! work starts.

use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::agent::{default_hidden, AgentConfig, InferenceScheme};
use crate::envs::{env_spec, EnvParams};
use crate::error::{Error, Result};
use crate::layers::net::Method;
use crate::ood::BenchConfig;
use crate::ppo::PpoConfig;
use crate::space::ActionSpace;
use crate::sweep::SweepSettings;

/// Network options not implied by the environment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AgentSpec {
    pub hidden: Vec<usize>,
    pub freeze_log_std: bool,
    pub log_std_init: f64,
}

impl Default for AgentSpec {
    fn default() -> Self {
        AgentSpec {
            hidden: default_hidden(),
            freeze_log_std: false,
            log_std_init: 0.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub episodes: usize,
    /// Evaluation seeds are `seed, seed + 1, ...`.
    pub seeds: usize,
    /// Empty means the method's default scheme plus a random single
    /// sub-model.
    pub schemes: Vec<InferenceScheme>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            episodes: 10,
            seeds: 3,
            schemes: Vec::new(),
        }
    }
}

impl EvalConfig {
    pub fn resolved_schemes(&self, space: ActionSpace) -> Vec<InferenceScheme> {
        if !self.schemes.is_empty() {
            return self.schemes.clone();
        }
        vec![
            InferenceScheme::default_for(space),
            InferenceScheme::Single {
                index: None,
                deterministic: !space.is_discrete(),
            },
        ]
    }
}

/// What a configuration is about to be used for.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Command {
    Train,
    Eval,
    OodBench,
    Sweep,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub env: String,
    pub method: Method,
    #[serde(default)]
    pub agent: AgentSpec,
    /// Physics used for training.
    #[serde(default)]
    pub env_params: EnvParams,
    #[serde(default)]
    pub ppo: PpoConfig,
    #[serde(default)]
    pub eval: EvalConfig,
    #[serde(default)]
    pub bench: BenchConfig,
    #[serde(default)]
    pub sweep: SweepSettings,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub out_dir: Option<String>,
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_str(text).map_err(|e| Error::config("config", e.to_string()))?;
        // Unit enum variants accept stray keys even under deny_unknown_fields,
        // so compare against the canonical serialization as well.
        let input: Value = serde_json::from_str(text)?;
        let canonical = serde_json::to_value(&cfg)?;
        check_known_keys(&input, &canonical, "")?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json(&text).map_err(|e| match e {
            Error::Config { message, .. } => Error::config(path.display().to_string(), message),
            other => other,
        })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn agent_config(&self) -> Result<AgentConfig> {
        let (obs_dim, action_space) = env_spec(&self.env)?;
        Ok(AgentConfig {
            obs_dim,
            action_space,
            hidden: self.agent.hidden.clone(),
            method: self.method.clone(),
            seed: self.seed,
            freeze_log_std: self.agent.freeze_log_std,
            log_std_init: self.agent.log_std_init,
        })
    }

    /// Checks everything `cmd` depends on.
    pub fn validate(&self, cmd: Command) -> Result<()> {
        let agent = self.agent_config()?;
        agent.validate()?;
        self.env_params.validate()?;
        self.ppo.validate(&self.method)?;
        match cmd {
            Command::Train => {}
            Command::Eval => {
                if self.eval.episodes == 0 || self.eval.seeds == 0 {
                    return Err(Error::config("eval", "episodes and seeds must be positive"));
                }
                for scheme in &self.eval.schemes {
                    scheme.check(agent.action_space)?;
                }
            }
            Command::OodBench => {
                if self.method.k() < 2 {
                    return Err(Error::config("method", "uncertainty measures need at least two sub-models"));
                }
                self.bench.validate(agent.obs_dim, agent.action_space)?;
            }
            Command::Sweep => self.sweep.validate(&self.method, agent.action_space.is_discrete())?,
        }
        Ok(())
    }
}

fn check_known_keys(input: &Value, canonical: &Value, path: &str) -> Result<()> {
    match (input, canonical) {
        (Value::Object(a), Value::Object(b)) => {
            for (key, value) in a {
                let here = if path.is_empty() { key.clone() } else { format!("{path}.{key}") };
                let known = b.get(key).ok_or_else(|| Error::config(here.clone(), "unknown key"))?;
                check_known_keys(value, known, &here)?;
            }
        }
        (Value::Array(a), Value::Array(b)) => {
            for (i, (x, y)) in a.iter().zip(b).enumerate() {
                check_known_keys(x, y, &format!("{path}[{i}]"))?;
            }
        }
        _ => {}
    }
    Ok(())
}
