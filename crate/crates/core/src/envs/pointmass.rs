//! A planar point mass that must reach and hold the origin.
//!
//! State is `(pos, vel)` in the plane. Each step applies the clipped action
//! force scaled by `body_scale`, gravity beyond the training value along
//! `-y`, and wind along `+x`. Friction is integrated implicitly,
//! `vel' = (vel + force·dt) / (1 + friction·dt)`, which stays stable and
//! monotonically damping even at friction 50 where an explicit step would
//! blow up. At default parameters gravity is exactly compensated, so the
//! origin at rest is a fixed point under zero action. The reward is the
//! distance to the origin integrated over the step, `-‖pos‖·dt`.

use crate::envs::{Env, EnvParams, Step};
use crate::error::{Error, Result};
use crate::math::rng::Rng;
use crate::space::{Action, ActionSpace};

pub const DT: f64 = 0.05;
pub const HORIZON: usize = 100;
/// Gravity acceleration per unit of gravity factor above 1.
pub const G0: f64 = 0.5;
/// Wind acceleration per unit of wind.
pub const W0: f64 = 1.0;
pub const START: [f64; 2] = [1.0, 1.0];
pub const START_NOISE: f64 = 0.1;

#[derive(Clone, Debug)]
pub struct PointMass {
    params: EnvParams,
    rng: Rng,
    pub pos: [f64; 2],
    pub vel: [f64; 2],
    pub t: usize,
}

impl PointMass {
    pub fn new(params: EnvParams, rng: Rng) -> Self {
        PointMass {
            params,
            rng,
            pos: [0.0; 2],
            vel: [0.0; 2],
            t: 0,
        }
    }

    /// Places the mass at an explicit state.
    pub fn set_state(&mut self, pos: [f64; 2], vel: [f64; 2]) {
        self.pos = pos;
        self.vel = vel;
        self.t = 0;
    }

    pub fn observation(&self) -> Vec<f64> {
        vec![self.pos[0], self.pos[1], self.vel[0], self.vel[1]]
    }
}

impl Env for PointMass {
    fn id(&self) -> &'static str {
        "pointmass"
    }

    fn obs_dim(&self) -> usize {
        4
    }

    fn action_space(&self) -> ActionSpace {
        ActionSpace::Continuous(2)
    }

    fn params(&self) -> &EnvParams {
        &self.params
    }

    fn reset(&mut self) -> Vec<f64> {
        for d in 0..2 {
            self.pos[d] = START[d] + self.rng.uniform_range(-START_NOISE, START_NOISE);
        }
        for d in 0..2 {
            self.vel[d] = self.rng.uniform_range(-START_NOISE, START_NOISE);
        }
        self.t = 0;
        self.observation()
    }

    fn step(&mut self, action: &Action) -> Result<Step> {
        let a = match action {
            Action::Continuous(a) if a.len() == 2 => a,
            _ => return Err(Error::contract("pointmass expects a 2-dimensional continuous action")),
        };
        if a.iter().any(|v| v.is_nan()) {
            return Err(Error::contract("NaN action"));
        }
        let p = &self.params;
        let gravity = (p.gravity - 1.0) * G0;
        let external = [p.wind * W0, -gravity];
        for d in 0..2 {
            let force = a[d].clamp(-1.0, 1.0) * p.body_scale + external[d];
            self.vel[d] = (self.vel[d] + force * DT) / (1.0 + p.friction * DT);
            self.pos[d] += self.vel[d] * DT;
        }
        self.t += 1;
        let reward = -(self.pos[0].powi(2) + self.pos[1].powi(2)).sqrt() * DT;
        Ok(Step {
            obs: self.observation(),
            reward,
            done: self.t >= HORIZON,
        })
    }
}

/// Scripted proportional-derivative controller toward the origin; the
/// reference return for pointmass training.
#[derive(Clone, Copy, Debug)]
pub struct PdController {
    pub kp: f64,
    pub kd: f64,
}

impl Default for PdController {
    fn default() -> Self {
        PdController { kp: 2.0, kd: 1.5 }
    }
}

impl PdController {
    pub fn act(&self, obs: &[f64]) -> Vec<f64> {
        (0..2)
            .map(|d| (-self.kp * obs[d] - self.kd * obs[d + 2]).clamp(-1.0, 1.0))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn env(params: EnvParams) -> PointMass {
        PointMass::new(params, Rng::new(1, 0))
    }

    #[test]
    fn origin_is_a_fixed_point() {
        let mut e = env(EnvParams::default());
        e.set_state([0.0, 0.0], [0.0, 0.0]);
        for _ in 0..10 {
            let s = e.step(&Action::Continuous(vec![0.0, 0.0])).unwrap();
            assert_eq!(s.reward, 0.0);
            assert_eq!(s.obs, vec![0.0; 4]);
        }
    }

    #[test]
    fn high_friction_never_speeds_up() {
        let params = EnvParams {
            friction: 50.0,
            ..EnvParams::default()
        };
        let mut e = env(params);
        e.set_state([0.3, -0.2], [4.0, -3.0]);
        let mut speed = 5.0;
        for _ in 0..100 {
            let s = e.step(&Action::Continuous(vec![0.0, 0.0])).unwrap();
            let v = (s.obs[2].powi(2) + s.obs[3].powi(2)).sqrt();
            assert!(v <= speed);
            speed = v;
        }
    }

    #[test]
    fn horizon_ends_episode() {
        let mut e = env(EnvParams::default());
        e.reset();
        for t in 1..=HORIZON {
            let s = e.step(&Action::Continuous(vec![0.1, 0.1])).unwrap();
            assert_eq!(s.done, t == HORIZON);
        }
    }

    #[test]
    fn nan_action_rejected() {
        let mut e = env(EnvParams::default());
        e.reset();
        assert!(e.step(&Action::Continuous(vec![f64::NAN, 0.0])).is_err());
    }

    #[test]
    fn pd_beats_zero_action() {
        let run = |pd: bool| {
            let mut e = env(EnvParams::default());
            let mut obs = e.reset();
            let mut ret = 0.0;
            loop {
                let a = if pd { PdController::default().act(&obs) } else { vec![0.0, 0.0] };
                let s = e.step(&Action::Continuous(a)).unwrap();
                ret += s.reward;
                obs = s.obs;
                if s.done {
                    return ret;
                }
            }
        };
        assert!(run(true) > 0.3 * run(false));
    }
}
