use crate::envs::{make_env, Env, EnvParams};
use crate::error::{Error, Result};
use crate::math::rng::stream;
use crate::math::tensor::Tensor;
use crate::space::Action;

/// A finished episode.
#[derive(Clone, Debug, PartialEq)]
pub struct EpisodeRecord {
    pub env_index: usize,
    pub ret: f64,
    pub len: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct VecStep {
    /// Next observations; reset observations where an episode just ended.
    pub obs: Vec<Vec<f64>>,
    pub rewards: Vec<f64>,
    pub dones: Vec<bool>,
    pub finished: Vec<EpisodeRecord>,
}

/// Environments stepped in lockstep with automatic reset.
pub struct VecEnv {
    envs: Vec<Box<dyn Env>>,
    obs: Vec<Vec<f64>>,
    returns: Vec<f64>,
    lengths: Vec<usize>,
}

impl VecEnv {
    /// Environment `i` draws its start states from stream `ENV_BASE + i`.
    pub fn new(id: &str, params: &EnvParams, num_envs: usize, seed: u64) -> Result<Self> {
        let envs = (0..num_envs)
            .map(|i| make_env(id, params.clone(), seed, stream::ENV_BASE + i as u64))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self::from_envs(envs))
    }

    pub fn from_envs(mut envs: Vec<Box<dyn Env>>) -> Self {
        let obs = envs.iter_mut().map(|e| e.reset()).collect();
        let n = envs.len();
        VecEnv {
            envs,
            obs,
            returns: vec![0.0; n],
            lengths: vec![0; n],
        }
    }

    pub fn len(&self) -> usize {
        self.envs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.envs.is_empty()
    }

    pub fn obs(&self) -> &[Vec<f64>] {
        &self.obs
    }

    pub fn obs_tensor(&self) -> Tensor {
        Tensor::from_rows(&self.obs).expect("equal widths")
    }

    pub fn env(&self, i: usize) -> &dyn Env {
        self.envs[i].as_ref()
    }

    pub fn reset_all(&mut self) -> &[Vec<f64>] {
        for (i, env) in self.envs.iter_mut().enumerate() {
            self.obs[i] = env.reset();
            self.returns[i] = 0.0;
            self.lengths[i] = 0;
        }
        &self.obs
    }

    pub fn step(&mut self, actions: &[Action]) -> Result<VecStep> {
        if actions.len() != self.envs.len() {
            return Err(Error::dimension(format!(
                "{} actions for {} environments",
                actions.len(),
                self.envs.len()
            )));
        }
        let n = self.envs.len();
        let mut out = VecStep {
            obs: Vec::with_capacity(n),
            rewards: Vec::with_capacity(n),
            dones: Vec::with_capacity(n),
            finished: Vec::new(),
        };
        for (i, (env, action)) in self.envs.iter_mut().zip(actions).enumerate() {
            let s = env.step(action)?;
            self.returns[i] += s.reward;
            self.lengths[i] += 1;
            let next = if s.done {
                out.finished.push(EpisodeRecord {
                    env_index: i,
                    ret: self.returns[i],
                    len: self.lengths[i],
                });
                self.returns[i] = 0.0;
                self.lengths[i] = 0;
                env.reset()
            } else {
                s.obs
            };
            self.obs[i] = next.clone();
            out.obs.push(next);
            out.rewards.push(s.reward);
            out.dones.push(s.done);
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn batched_equals_scalar_loop() {
        let mut venv = VecEnv::new("pointmass", &EnvParams::default(), 4, 3).unwrap();
        let mut singles: Vec<_> = (0..4)
            .map(|i| make_env("pointmass", EnvParams::default(), 3, stream::ENV_BASE + i).unwrap())
            .collect();
        let first: Vec<_> = singles.iter_mut().map(|e| e.reset()).collect();
        assert_eq!(venv.obs(), &first[..]);
        for t in 0..250 {
            let actions: Vec<Action> = (0..4)
                .map(|i| Action::Continuous(vec![(t as f64 * 0.1 + i as f64).sin(), 0.3]))
                .collect();
            let batch = venv.step(&actions).unwrap();
            for (i, env) in singles.iter_mut().enumerate() {
                let s = env.step(&actions[i]).unwrap();
                let next = if s.done { env.reset() } else { s.obs };
                assert_eq!(batch.obs[i], next);
                assert_eq!(batch.rewards[i], s.reward);
                assert_eq!(batch.dones[i], s.done);
            }
        }
    }

    #[test]
    fn all_done_gives_fresh_starts_and_returns() {
        let mut venv = VecEnv::new("bandit2", &EnvParams::default(), 8, 0).unwrap();
        let s = venv.step(&vec![Action::Discrete(1); 8]).unwrap();
        assert!(s.dones.iter().all(|&d| d));
        assert_eq!(s.finished.len(), 8);
        assert!(s.finished.iter().all(|r| r.ret == 1.0 && r.len == 1));
        assert_eq!(s.obs, vec![vec![1.0]; 8]);
    }

    #[test]
    fn returns_accumulate_across_resets() {
        let mut venv = VecEnv::new("gridchase", &EnvParams::default(), 1, 0).unwrap();
        let mut finished = Vec::new();
        let mut total = 0.0;
        for _ in 0..120 {
            let s = venv.step(&[Action::Discrete(0)]).unwrap();
            total += s.rewards[0];
            finished.extend(s.finished);
        }
        assert_eq!(finished.len(), 2);
        for f in &finished {
            assert_eq!(f.len, 50);
            assert!((f.ret + 0.5).abs() < 1e-12);
        }
        assert!((total + 1.2).abs() < 1e-9);
    }

    #[test]
    fn width_mismatch() {
        let mut venv = VecEnv::new("bandit2", &EnvParams::default(), 2, 0).unwrap();
        assert!(venv.step(&[Action::Discrete(0)]).is_err());
    }
}
