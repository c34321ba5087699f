use crate::envs::{check_discrete, Env, EnvParams, Step};
use crate::error::Result;
use crate::math::rng::Rng;
use crate::space::{Action, ActionSpace};

/// One-step bandit: arm 0 pays 0, arm 1 pays 1.
#[derive(Clone, Debug)]
pub struct TwoArmBandit {
    params: EnvParams,
    _rng: Rng,
}

impl TwoArmBandit {
    pub fn new(params: EnvParams, rng: Rng) -> Self {
        TwoArmBandit { params, _rng: rng }
    }
}

impl Env for TwoArmBandit {
    fn id(&self) -> &'static str {
        "bandit2"
    }

    fn obs_dim(&self) -> usize {
        1
    }

    fn action_space(&self) -> ActionSpace {
        ActionSpace::Discrete(2)
    }

    fn params(&self) -> &EnvParams {
        &self.params
    }

    fn reset(&mut self) -> Vec<f64> {
        vec![1.0]
    }

    fn step(&mut self, action: &Action) -> Result<Step> {
        let a = check_discrete(action, 2)?;
        Ok(Step {
            obs: vec![1.0],
            reward: a as f64,
            done: true,
        })
    }
}
