//! The PPO clipped-surrogate loss on the gradient tape.
//!
//! Each transition is evaluated under the sub-model that collected it, so
//! Masksembles rows use their stored mask and MC Dropout/Dropconnect rows
//! draw a fresh mask here. Ensemble members do not share parameters, so each
//! member is evaluated on every transition against its own stored old
//! log-probability; the loss is the sum of the per-member losses.

use crate::agent::Agent;
use crate::error::{Error, Result};
use crate::layers::net::{group_rows, Method};
use crate::math::dist::LN_2PI;
use crate::math::mlp::MlpVars;
use crate::math::rng::Rng;
use crate::math::tape::{Tape, Var};
use crate::math::tensor::Tensor;
use crate::space::{Action, ActionSpace};

#[derive(Clone, Debug)]
pub struct Minibatch {
    pub obs: Tensor,
    pub actions: Vec<Action>,
    pub old_logprobs: Vec<f64>,
    /// Per row, the old log-probability under each sub-model.
    pub old_logprobs_all: Option<Vec<Vec<f64>>>,
    pub advantages: Vec<f64>,
    pub returns: Vec<f64>,
    pub submodels: Vec<usize>,
}

impl Minibatch {
    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossCoefficients {
    pub clip_range: f64,
    pub vf_coef: f64,
    pub ent_coef: f64,
}

#[derive(Clone, Debug)]
pub struct LossOutput {
    pub loss: f64,
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub clip_fraction: f64,
    pub approx_kl: f64,
    /// Policy parameters, then value parameters, then `log_std` if present,
    /// matching [`agent_params_mut`].
    pub grads: Vec<Tensor>,
}

/// Trainable tensors of `agent` in gradient order.
pub fn agent_params_mut(agent: &mut Agent) -> Vec<&mut Tensor> {
    let mut params = agent.policy.params_mut();
    params.extend(agent.value.params_mut());
    if let Some(ls) = agent.log_std.as_mut() {
        params.push(ls);
    }
    params
}

pub fn agent_param_shapes(agent: &Agent) -> Vec<Vec<usize>> {
    let mut shapes: Vec<Vec<usize>> = agent.policy.params().iter().map(|t| t.shape().to_vec()).collect();
    shapes.extend(agent.value.params().iter().map(|t| t.shape().to_vec()));
    if let Some(ls) = &agent.log_std {
        shapes.push(ls.shape().to_vec());
    }
    shapes
}

struct Group {
    submodel: usize,
    rows: Vec<usize>,
    old_logprobs: Vec<f64>,
}

#[derive(Default)]
struct Diagnostics {
    clipped: f64,
    kl: f64,
    count: f64,
}

struct Ctx<'a> {
    agent: &'a Agent,
    policy_vars: Vec<MlpVars>,
    value_vars: Vec<MlpVars>,
    log_std: Option<Var>,
    coef: LossCoefficients,
    /// Each group's sums are divided by this.
    denom: f64,
}

pub fn ppo_loss(agent: &Agent, mb: &Minibatch, coef: LossCoefficients, rng: &mut Rng) -> Result<LossOutput> {
    if mb.is_empty() {
        return Err(Error::contract("empty minibatch"));
    }
    let b = mb.len();
    let k = agent.k();
    let groups: Vec<Group> = if matches!(agent.method(), Method::Ensembles { .. }) {
        let all = mb
            .old_logprobs_all
            .as_ref()
            .ok_or_else(|| Error::contract("ensemble minibatch without per-member log-probabilities"))?;
        (0..k)
            .map(|j| Group {
                submodel: j,
                rows: (0..b).collect(),
                old_logprobs: all.iter().map(|lps| lps[j]).collect(),
            })
            .collect()
    } else {
        group_rows(&mb.submodels, k)?
            .into_iter()
            .map(|(j, rows)| Group {
                submodel: j,
                old_logprobs: rows.iter().map(|&i| mb.old_logprobs[i]).collect(),
                rows,
            })
            .collect()
    };
    let passes = if matches!(agent.method(), Method::Ensembles { .. }) { k } else { 1 };

    let mut tape = Tape::new();
    let ctx = Ctx {
        agent,
        policy_vars: agent.policy.register(&mut tape),
        value_vars: agent.value.register(&mut tape),
        log_std: agent.log_std.as_ref().map(|t| tape.param(t.clone())),
        coef,
        denom: b as f64,
    };

    let mut diag = Diagnostics::default();
    let mut totals: Option<(Var, Var, Var)> = None;
    for g in &groups {
        let (pl, vl, ent) = group_terms(&mut tape, &ctx, mb, g, &mut diag, rng)?;
        totals = Some(match totals {
            None => (pl, vl, ent),
            Some((p, v, e)) => (tape.add(p, pl)?, tape.add(v, vl)?, tape.add(e, ent)?),
        });
    }
    let (pl, vl, ent) = totals.expect("at least one group");
    let v_term = tape.scale(vl, coef.vf_coef);
    let e_term = tape.scale(ent, -coef.ent_coef);
    let partial = tape.add(pl, v_term)?;
    let loss = tape.add(partial, e_term)?;

    let loss_value = tape.value(loss).item();
    if !loss_value.is_finite() {
        return Err(Error::Divergence(format!(
            "PPO loss is {loss_value} (policy {}, value {})",
            tape.value(pl).item(),
            tape.value(vl).item()
        )));
    }
    let grads = tape.backward(loss)?;
    let mut out = Vec::new();
    for vars in ctx.policy_vars.iter().chain(&ctx.value_vars) {
        for &(w, bias) in &vars.layers {
            out.push(grads.wrt(w));
            out.push(grads.wrt(bias));
        }
    }
    if let Some(ls) = ctx.log_std {
        out.push(grads.wrt(ls));
    }
    let per_pass = passes as f64;
    Ok(LossOutput {
        loss: loss_value,
        policy_loss: tape.value(pl).item() / per_pass,
        value_loss: tape.value(vl).item() / per_pass,
        entropy: tape.value(ent).item() / per_pass,
        clip_fraction: diag.clipped / diag.count,
        approx_kl: diag.kl / diag.count,
        grads: out,
    })
}

/// Summed policy surrogate, squared value error and entropy of one group,
/// each divided by the minibatch size.
fn group_terms(
    tape: &mut Tape,
    ctx: &Ctx,
    mb: &Minibatch,
    g: &Group,
    diag: &mut Diagnostics,
    rng: &mut Rng,
) -> Result<(Var, Var, Var)> {
    let agent = ctx.agent;
    let rows = g.rows.len();
    let x = tape.constant(mb.obs.select_rows(&g.rows));

    let p_mod = agent.policy.modulation(g.submodel, rows, rng);
    let out = agent
        .policy
        .forward_tape(tape, &ctx.policy_vars, x, g.submodel, &p_mod)?;
    let (logprob, entropy_sum) = match agent.action_space() {
        ActionSpace::Discrete(_) => {
            let idx: Vec<usize> = g
                .rows
                .iter()
                .map(|&i| {
                    mb.actions[i]
                        .as_discrete()
                        .ok_or_else(|| Error::contract("continuous action in a discrete batch"))
                })
                .collect::<Result<_>>()?;
            let ls = tape.log_softmax(out);
            let lp = tape.gather(ls, &idx)?;
            let p = tape.exp(ls);
            let plogp = tape.mul(p, ls)?;
            let ent = tape.sum(plogp);
            (lp, tape.scale(ent, -1.0))
        }
        ActionSpace::Continuous(n) => {
            let log_std = ctx
                .log_std
                .ok_or_else(|| Error::contract("continuous policy without log_std"))?;
            let acts: Vec<&[f64]> = g
                .rows
                .iter()
                .map(|&i| {
                    mb.actions[i]
                        .as_continuous()
                        .ok_or_else(|| Error::contract("discrete action in a continuous batch"))
                })
                .collect::<Result<_>>()?;
            let a = tape.constant(Tensor::from_rows(&acts)?);
            let diff = tape.sub(a, out)?;
            let neg = tape.scale(log_std, -1.0);
            let inv_std = tape.exp(neg);
            let z = tape.mul_row(diff, inv_std)?;
            let sq = tape.square(z);
            let quad = tape.sum_cols(sq);
            let quad = tape.scale(quad, -0.5);
            let ls_sum = tape.sum_cols(log_std);
            let norm = tape.scale(ls_sum, -1.0);
            let norm = tape.shift(norm, -0.5 * n as f64 * LN_2PI);
            let lp = tape.add_row(quad, norm)?;
            // Entropy is state independent: sum(log_std) + N/2 (1 + ln 2π).
            let ent = tape.shift(ls_sum, 0.5 * n as f64 * (1.0 + LN_2PI));
            (lp, tape.scale(ent, rows as f64))
        }
    };

    let old = tape.constant(Tensor::column(&g.old_logprobs));
    let log_ratio = tape.sub(logprob, old)?;
    let ratio = tape.exp(log_ratio);
    let adv_vals: Vec<f64> = g.rows.iter().map(|&i| mb.advantages[i]).collect();
    let adv = tape.constant(Tensor::column(&adv_vals));
    let surr1 = tape.mul(ratio, adv)?;
    let eps = ctx.coef.clip_range;
    let clipped = tape.clamp(ratio, 1.0 - eps, 1.0 + eps);
    let surr2 = tape.mul(clipped, adv)?;
    let surr = tape.min(surr1, surr2)?;
    let surr_sum = tape.sum(surr);
    let policy = tape.scale(surr_sum, -1.0 / ctx.denom);

    for (&r, &lr) in tape.value(ratio).data().iter().zip(tape.value(log_ratio).data()) {
        if (r - 1.0).abs() > eps {
            diag.clipped += 1.0;
        }
        diag.kl += (r - 1.0) - lr;
        diag.count += 1.0;
    }

    let v_mod = agent.value.modulation(g.submodel, rows, rng);
    let v = agent
        .value
        .forward_tape(tape, &ctx.value_vars, x, g.submodel, &v_mod)?;
    let ret_vals: Vec<f64> = g.rows.iter().map(|&i| mb.returns[i]).collect();
    let ret = tape.constant(Tensor::column(&ret_vals));
    let err = tape.sub(v, ret)?;
    let sq = tape.square(err);
    let sq_sum = tape.sum(sq);
    let value = tape.scale(sq_sum, 1.0 / ctx.denom);

    let entropy = tape.scale(entropy_sum, 1.0 / ctx.denom);
    Ok((policy, value, entropy))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agent::AgentConfig;
    use crate::math::rng::Rng;

    fn agent(method: Method, space: ActionSpace) -> Agent {
        Agent::new(AgentConfig {
            obs_dim: 3,
            action_space: space,
            hidden: vec![8, 8, 8],
            method,
            seed: 2,
            freeze_log_std: false,
            log_std_init: -0.3,
        })
        .unwrap()
    }

    /// A minibatch whose old log-probabilities come from the agent itself.
    fn on_policy_batch(agent: &Agent, adv: Vec<f64>) -> Minibatch {
        let b = adv.len();
        let rows: Vec<Vec<f64>> = (0..b)
            .map(|i| vec![(i as f64).sin(), (i as f64 * 0.3).cos(), 0.1 * i as f64])
            .collect();
        let obs = Tensor::from_rows(&rows).unwrap();
        let submodels: Vec<usize> = (0..b).map(|i| i % agent.k()).collect();
        let mut rng = Rng::new(0, 0);
        let step = agent.sample_training(&obs, &submodels, &mut rng).unwrap();
        let all = agent.logprobs_all(&obs, &step.actions, &mut rng).unwrap();
        Minibatch {
            obs,
            actions: step.actions,
            old_logprobs: step.logprobs,
            old_logprobs_all: Some((0..b).map(|i| all.iter().map(|m| m[i]).collect()).collect()),
            returns: step.values.clone(),
            advantages: adv,
            submodels,
        }
    }

    fn no_aux() -> LossCoefficients {
        LossCoefficients {
            clip_range: 0.2,
            vf_coef: 0.0,
            ent_coef: 0.0,
        }
    }

    #[test]
    fn ratio_one_gives_negative_mean_advantage() {
        for space in [ActionSpace::Discrete(3), ActionSpace::Continuous(2)] {
            for method in [Method::None, Method::Masksembles { k: 2, scale: 2.0 }, Method::Ensembles { k: 2 }] {
                let a = agent(method, space);
                let adv = vec![0.5, -1.0, 2.0, 0.25, -0.3, 1.1];
                let mb = on_policy_batch(&a, adv.clone());
                let out = ppo_loss(&a, &mb, no_aux(), &mut Rng::new(1, 0)).unwrap();
                let mean = adv.iter().sum::<f64>() / adv.len() as f64;
                assert!((out.policy_loss + mean).abs() < 1e-12, "{}", out.policy_loss);
                assert!(out.approx_kl.abs() < 1e-12);
                assert_eq!(out.clip_fraction, 0.0);
            }
        }
    }

    #[test]
    fn zero_coefficients_isolate_the_surrogate() {
        let a = agent(Method::None, ActionSpace::Continuous(2));
        let mut mb = on_policy_batch(&a, vec![1.0, -1.0, 0.5]);
        mb.returns = vec![10.0; 3];
        let out = ppo_loss(&a, &mb, no_aux(), &mut Rng::new(1, 0)).unwrap();
        assert!((out.loss - out.policy_loss).abs() < 1e-12);
        assert!(out.value_loss > 1.0);
    }

    #[test]
    fn clipped_contribution() {
        // Old log-probability lowered by ln 2 gives ratio 2 on every row.
        let a = agent(Method::None, ActionSpace::Discrete(3));
        let mut mb = on_policy_batch(&a, vec![1.0; 4]);
        for lp in &mut mb.old_logprobs {
            *lp -= 2f64.ln();
        }
        let out = ppo_loss(&a, &mb, no_aux(), &mut Rng::new(1, 0)).unwrap();
        assert!((out.policy_loss + 1.2).abs() < 1e-12, "{}", out.policy_loss);
        assert_eq!(out.clip_fraction, 1.0);
    }

    #[test]
    fn value_and_entropy_terms() {
        let a = agent(Method::None, ActionSpace::Continuous(2));
        let mb = on_policy_batch(&a, vec![0.0; 3]);
        let coef = LossCoefficients {
            clip_range: 0.2,
            vf_coef: 0.5,
            ent_coef: 0.01,
        };
        let out = ppo_loss(&a, &mb, coef, &mut Rng::new(1, 0)).unwrap();
        // Returns equal the value predictions, so the value loss is zero.
        assert!(out.value_loss.abs() < 1e-24);
        let expected_ent = 2.0 * -0.3 + 0.5 * 2.0 * (1.0 + LN_2PI);
        assert!((out.entropy - expected_ent).abs() < 1e-12);
        assert!((out.loss + 0.01 * expected_ent).abs() < 1e-12);
    }

    #[test]
    fn gradients_match_finite_differences() {
        for space in [ActionSpace::Discrete(3), ActionSpace::Continuous(2)] {
            let a = agent(Method::Masksembles { k: 2, scale: 1.5 }, space);
            let mut mb = on_policy_batch(&a, vec![0.7, -1.2, 0.4, 1.5, -0.2]);
            for (i, lp) in mb.old_logprobs.iter_mut().enumerate() {
                *lp += 0.05 * (i as f64 - 2.0);
            }
            for r in &mut mb.returns {
                *r += 0.3;
            }
            let coef = LossCoefficients {
                clip_range: 0.2,
                vf_coef: 0.5,
                ent_coef: 0.01,
            };
            let out = ppo_loss(&a, &mb, coef, &mut Rng::new(1, 0)).unwrap();
            let h = 1e-6;
            let n_params = out.grads.len();
            for p in [0, 1, n_params / 2, n_params - 1] {
                for e in [0, 3] {
                    let mut plus = a.clone();
                    let mut minus = a.clone();
                    let len = agent_params_mut(&mut plus)[p].len();
                    let e = e % len;
                    agent_params_mut(&mut plus)[p].data_mut()[e] += h;
                    agent_params_mut(&mut minus)[p].data_mut()[e] -= h;
                    let lp = ppo_loss(&plus, &mb, coef, &mut Rng::new(1, 0)).unwrap().loss;
                    let lm = ppo_loss(&minus, &mb, coef, &mut Rng::new(1, 0)).unwrap().loss;
                    let fd = (lp - lm) / (2.0 * h);
                    let an = out.grads[p].data()[e];
                    assert!((fd - an).abs() <= 1e-6 + 1e-4 * an.abs(), "param {p}[{e}]: {an} vs {fd}");
                }
            }
        }
    }
}
