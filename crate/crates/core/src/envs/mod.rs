//! Desk-scale episodic environments with perturbable physics.
//!
//! Every environment owns a seeded random stream for its initial states, so
//! a vector of environments is reproducible from one seed.

mod bandit;
mod gridchase;
mod perturb;
mod pointmass;
mod vec_env;

pub use bandit::TwoArmBandit;
pub use gridchase::{GridChase, LAYOUTS};
pub use perturb::{perturb, PerturbationSpace};
pub use pointmass::{PdController, PointMass};
pub use vec_env::{EpisodeRecord, VecEnv, VecStep};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::rng::Rng;
use crate::space::{Action, ActionSpace};

pub const ENV_IDS: [&str; 3] = ["pointmass", "gridchase", "bandit2"];

/// Physical parameters of an environment instance. The default is the
/// unperturbed training environment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EnvParams {
    pub gravity: f64,
    pub wind: f64,
    pub friction: f64,
    pub body_scale: f64,
    /// Wall layout index for grid environments.
    pub layout: usize,
}

impl Default for EnvParams {
    fn default() -> Self {
        EnvParams {
            gravity: 1.0,
            wind: 0.0,
            friction: 1.0,
            body_scale: 1.0,
            layout: 0,
        }
    }
}

impl EnvParams {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("gravity", self.gravity),
            ("friction", self.friction),
            ("body_scale", self.body_scale),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::config(format!("env.{name}"), format!("must be positive, got {v}")));
            }
        }
        if !(self.wind >= 0.0 && self.wind.is_finite()) {
            return Err(Error::config("env.wind", format!("must be non-negative, got {}", self.wind)));
        }
        if self.layout >= LAYOUTS.len() {
            return Err(Error::config("env.layout", format!("unknown layout {}", self.layout)));
        }
        Ok(())
    }

    pub fn is_default(&self) -> bool {
        *self == EnvParams::default()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Step {
    pub obs: Vec<f64>,
    pub reward: f64,
    pub done: bool,
}

pub trait Env: Send {
    fn id(&self) -> &'static str;
    fn obs_dim(&self) -> usize;
    fn action_space(&self) -> ActionSpace;
    fn params(&self) -> &EnvParams;
    /// Starts a new episode and returns its first observation.
    fn reset(&mut self) -> Vec<f64>;
    fn step(&mut self, action: &Action) -> Result<Step>;
}

/// Builds environment `id`; its start-state stream is `(seed, stream)`.
pub fn make_env(id: &str, params: EnvParams, seed: u64, stream: u64) -> Result<Box<dyn Env>> {
    params.validate()?;
    let rng = Rng::new(seed, stream);
    match id {
        "pointmass" => Ok(Box::new(PointMass::new(params, rng))),
        "gridchase" => Ok(Box::new(GridChase::new(params, rng))),
        "bandit2" => Ok(Box::new(TwoArmBandit::new(params, rng))),
        other => Err(Error::config(
            "env",
            format!("unknown environment {other:?}; expected one of {ENV_IDS:?}"),
        )),
    }
}

/// Observation width and action space of environment `id`.
pub fn env_spec(id: &str) -> Result<(usize, ActionSpace)> {
    let env = make_env(id, EnvParams::default(), 0, 0)?;
    Ok((env.obs_dim(), env.action_space()))
}

pub(crate) fn check_discrete(action: &Action, n: usize) -> Result<usize> {
    match action {
        Action::Discrete(a) if *a < n => Ok(*a),
        Action::Discrete(a) => Err(Error::contract(format!("action {a} out of range for {n} actions"))),
        Action::Continuous(_) => Err(Error::contract("continuous action for a discrete environment")),
    }
}
