use crate::agent::{Agent, InferenceScheme};
use crate::envs::{make_env, EnvParams};
use crate::error::Result;
use crate::math::rng::{stream, Rng};

/// Returns of `episodes` evaluation episodes. Observation statistics stay
/// frozen.
pub fn evaluate(
    agent: &Agent,
    env_id: &str,
    params: &EnvParams,
    episodes: usize,
    scheme: InferenceScheme,
    seed: u64,
) -> Result<Vec<f64>> {
    scheme.check(agent.action_space())?;
    let mut env = make_env(env_id, params.clone(), seed, stream::EVAL)?;
    let mut net_rng = Rng::new(seed, stream::NOISE);
    let mut rng = Rng::new(seed, stream::TIE);
    let mut returns = Vec::with_capacity(episodes);
    for _ in 0..episodes {
        let mut obs = env.reset();
        let mut ret = 0.0;
        loop {
            let action = agent.act(&obs, scheme, &mut net_rng, &mut rng)?;
            let s = env.step(&action)?;
            ret += s.reward;
            obs = s.obs;
            if s.done {
                break;
            }
        }
        returns.push(ret);
    }
    Ok(returns)
}

pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return 0.0;
    }
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Population standard deviation.
pub fn std(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return 0.0;
    }
    let m = mean(xs);
    (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / xs.len() as f64).sqrt()
}
