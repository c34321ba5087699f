//! Acceptance suite. Runs as a plain binary (no libtest harness) so each
//! criterion prints exactly one PASS/FAIL line; the process fails if any
//! criterion fails.

use std::path::Path;
use std::process::Command;
use std::time::Instant;

use oodppo::agent::{Agent, AgentConfig, InferenceScheme};
use oodppo::envs::{make_env, EnvParams, PdController, PerturbationSpace};
use oodppo::layers::masks::generate_masks;
use oodppo::layers::net::{Method, StochasticMlp};
use oodppo::math::dist::{softmax, DiagGaussian};
use oodppo::math::mlp::{Mlp, Modulation};
use oodppo::math::rng::{stream, Rng};
use oodppo::math::tensor::Tensor;
use oodppo::ood::{auc_mann_whitney, roc_curve, run_benchmark, trapezoid, BenchConfig, OodSource};
use oodppo::ppo::evaluate::mean;
use oodppo::ppo::loss::agent_params_mut;
use oodppo::ppo::{evaluate, gae, ppo_loss, train, LossCoefficients, Minibatch, PpoConfig, TrainMode};
use oodppo::space::{Action, ActionSpace};
use oodppo::sweep::{pareto_front, ParetoPoint};
use oodppo::uncertainty::{
    entropy_uncertainty, max_prob_uncertainty, policy_js_categorical, policy_js_continuous, policy_std_categorical,
    policy_std_continuous, value_uncertainty, Measure,
};

type Outcome = Result<String, String>;

fn check(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn median(xs: &[f64]) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

// ---------------------------------------------------------------- 1

fn random_method(rng: &mut Rng, i: usize) -> Method {
    let k = 2 + rng.below(3);
    match i % 5 {
        0 => Method::None,
        1 => Method::Masksembles {
            k,
            scale: rng.uniform_range(1.0, k as f64),
        },
        2 => Method::Dropout {
            k,
            p: rng.uniform_range(0.05, 0.5),
        },
        3 => Method::Dropconnect {
            k,
            p: rng.uniform_range(0.05, 0.5),
        },
        _ => Method::Ensembles { k },
    }
}

/// A random agent and minibatch whose old log-probabilities are offset from
/// the current policy so the clipped branch is exercised.
fn random_loss_instance(i: usize) -> (Agent, Minibatch, LossCoefficients) {
    let mut rng = Rng::new(1000 + i as u64, 0);
    let method = random_method(&mut rng, i);
    let space = if rng.bernoulli(0.5) {
        ActionSpace::Discrete(2 + rng.below(3))
    } else {
        ActionSpace::Continuous(1 + rng.below(3))
    };
    let obs_dim = 2 + rng.below(4);
    let hidden = (0..1 + rng.below(2)).map(|_| 4 + rng.below(5)).collect();
    let agent = Agent::new(AgentConfig {
        obs_dim,
        action_space: space,
        hidden,
        method,
        seed: i as u64,
        freeze_log_std: false,
        log_std_init: rng.uniform_range(-1.0, 0.5),
    })
    .expect("valid agent");
    let b = 3 + rng.below(6);
    let rows: Vec<Vec<f64>> = (0..b).map(|_| (0..obs_dim).map(|_| rng.normal()).collect()).collect();
    let obs = Tensor::from_rows(&rows).unwrap();
    let submodels: Vec<usize> = (0..b).map(|_| rng.below(agent.k())).collect();
    let step = agent.sample_training(&obs, &submodels, &mut rng).unwrap();
    let all = agent.logprobs_all(&obs, &step.actions, &mut rng).unwrap();
    let mut jitter = |lp: f64| lp + rng.uniform_range(-0.4, 0.4);
    let old_logprobs: Vec<f64> = step.logprobs.iter().map(|&lp| jitter(lp)).collect();
    let old_all: Vec<Vec<f64>> = (0..b).map(|r| all.iter().map(|m| jitter(m[r])).collect()).collect();
    let mb = Minibatch {
        obs,
        actions: step.actions,
        old_logprobs,
        old_logprobs_all: Some(old_all),
        advantages: (0..b).map(|_| rng.normal()).collect(),
        returns: step.values.iter().map(|v| v + rng.normal()).collect(),
        submodels,
    };
    let coef = LossCoefficients {
        clip_range: rng.uniform_range(0.1, 0.3),
        vf_coef: rng.uniform_range(0.1, 1.0),
        ent_coef: rng.uniform_range(0.0, 0.05),
    };
    (agent, mb, coef)
}

/// Plain-MLP instance: a random tanh network under a squared-error loss.
fn mlp_instance_error(i: usize) -> f64 {
    use oodppo::math::tape::Tape;
    let mut rng = Rng::new(5000 + i as u64, 0);
    let sizes: Vec<usize> = (0..3 + rng.below(2)).map(|_| 2 + rng.below(5)).collect();
    let net = Mlp::new(&sizes, 1.0, &mut rng);
    let x = Tensor::from_rows(&(0..4).map(|_| (0..sizes[0]).map(|_| rng.normal()).collect::<Vec<_>>()).collect::<Vec<_>>())
        .unwrap();
    let target = Tensor::from_rows(
        &(0..4)
            .map(|_| (0..*sizes.last().unwrap()).map(|_| rng.normal()).collect::<Vec<_>>())
            .collect::<Vec<_>>(),
    )
    .unwrap();
    let loss_of = |net: &Mlp| -> (f64, Vec<Tensor>) {
        let mut tape = Tape::new();
        let vars = net.register(&mut tape);
        let xv = tape.constant(x.clone());
        let y = net.forward_tape(&mut tape, &vars, xv, &Modulation::none()).unwrap();
        let t = tape.constant(target.clone());
        let d = tape.sub(y, t).unwrap();
        let sq = tape.square(d);
        let l = tape.mean(sq);
        let value = tape.value(l).item();
        let g = tape.backward(l).unwrap();
        let grads = vars
            .layers
            .iter()
            .flat_map(|&(w, b)| [g.wrt(w), g.wrt(b)])
            .collect();
        (value, grads)
    };
    let (_, grads) = loss_of(&net);
    let mut worst = 0.0f64;
    let h = 1e-5;
    for p in 0..grads.len() {
        for e in 0..grads[p].len() {
            let bump = |d: f64| {
                let mut n = net.clone();
                let layer = &mut n.layers[p / 2];
                let t = if p % 2 == 0 { &mut layer.weight } else { &mut layer.bias };
                t.data_mut()[e] += d;
                loss_of(&n).0
            };
            let fd = (bump(h) - bump(-h)) / (2.0 * h);
            worst = worst.max(rel_err(grads[p].data()[e], fd));
        }
    }
    worst
}

/// Relative error with a floor on the denominator so gradients that are
/// zero up to rounding do not blow up the ratio.
fn rel_err(analytic: f64, fd: f64) -> f64 {
    (analytic - fd).abs() / analytic.abs().max(fd.abs()).max(1e-4)
}

fn loss_instance_error(i: usize) -> f64 {
    let (agent, mb, coef) = random_loss_instance(i);
    let out = ppo_loss(&agent, &mb, coef, &mut Rng::new(7, 0)).unwrap();
    let h = 1e-5;
    let mut worst = 0.0f64;
    for p in 0..out.grads.len() {
        for e in 0..out.grads[p].len() {
            let bump = |d: f64| {
                let mut a = agent.clone();
                agent_params_mut(&mut a)[p].data_mut()[e] += d;
                ppo_loss(&a, &mb, coef, &mut Rng::new(7, 0)).unwrap().loss
            };
            let fd = (bump(h) - bump(-h)) / (2.0 * h);
            worst = worst.max(rel_err(out.grads[p].data()[e], fd));
        }
    }
    worst
}

fn criterion_1() -> Outcome {
    let t = Instant::now();
    let mut worst = 0.0f64;
    for i in 0..100 {
        let e = if i % 4 == 3 { mlp_instance_error(i) } else { loss_instance_error(i) };
        worst = worst.max(e);
    }
    let secs = t.elapsed().as_secs_f64();
    check(worst < 1e-4, format!("max relative error {worst:.2e}"))?;
    check(secs < 30.0, format!("took {secs:.1}s"))?;
    Ok(format!("100 instances, max relative error {worst:.2e}, {secs:.1}s"))
}

// ---------------------------------------------------------------- 2

fn oracle_pop_std(xs: &[f64]) -> f64 {
    let mut sum = 0.0;
    for &x in xs {
        sum += x;
    }
    let m = sum / xs.len() as f64;
    let mut ss = 0.0;
    for &x in xs {
        ss += (x - m) * (x - m);
    }
    (ss / xs.len() as f64).sqrt()
}

fn oracle_mean_col_std(rows: &[Vec<f64>]) -> f64 {
    let n = rows[0].len();
    let mut total = 0.0;
    for j in 0..n {
        let col: Vec<f64> = rows.iter().map(|r| r[j]).collect();
        total += oracle_pop_std(&col);
    }
    total / n as f64
}

fn oracle_softmax(l: &[f64]) -> Vec<f64> {
    let mut mx = f64::NEG_INFINITY;
    for &v in l {
        if v > mx {
            mx = v;
        }
    }
    let mut e = Vec::new();
    let mut z = 0.0;
    for &v in l {
        let x = (v - mx).exp();
        z += x;
        e.push(x);
    }
    e.iter().map(|x| x / z).collect()
}

fn oracle_avg(logits: &[Vec<f64>]) -> Vec<f64> {
    let n = logits[0].len();
    let mut avg = vec![0.0; n];
    for l in logits {
        let p = oracle_softmax(l);
        for a in 0..n {
            avg[a] += p[a] / logits.len() as f64;
        }
    }
    avg
}

fn oracle_js(probs: &[Vec<f64>]) -> f64 {
    let kl = |p: &[f64], q: &[f64]| {
        let mut s = 0.0;
        for a in 0..p.len() {
            let pa = p[a].max(1e-12);
            let qa = q[a].max(1e-12);
            s += pa * (pa / qa).ln();
        }
        s
    };
    let mut best = 0.0;
    for i in 0..probs.len() {
        for j in 0..probs.len() {
            if i != j {
                let d = 0.5 * (kl(&probs[i], &probs[j]) + kl(&probs[j], &probs[i]));
                if d > best {
                    best = d;
                }
            }
        }
    }
    best
}

fn close_rel(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-12 * (1.0 + a.abs().max(b.abs()))
}

fn criterion_2() -> Outcome {
    let mut rng = Rng::new(2, 0);
    for trial in 0..1000 {
        let k = 2 + rng.below(6);
        let n = 1 + rng.below(6);
        let rows: Vec<Vec<f64>> = (0..k).map(|_| (0..n).map(|_| 3.0 * rng.normal()).collect()).collect();
        let values: Vec<f64> = (0..k).map(|_| 5.0 * rng.normal()).collect();
        let probs: Vec<Vec<f64>> = rows.iter().map(|l| oracle_softmax(l)).collect();
        let avg = oracle_avg(&rows);
        let mut top = 0.0f64;
        let mut ent = 0.0;
        for &p in &avg {
            top = top.max(p);
            if p > 0.0 {
                ent -= p * p.ln();
            }
        }
        let pairs = [
            ("value std", value_uncertainty(&values).unwrap(), oracle_pop_std(&values)),
            ("continuous policy std", policy_std_continuous(&rows).unwrap(), oracle_mean_col_std(&rows)),
            ("categorical policy std", policy_std_categorical(&rows, false).unwrap(), oracle_mean_col_std(&rows)),
            ("max prob", max_prob_uncertainty(&rows).unwrap(), 1.0 - top),
            ("entropy", entropy_uncertainty(&rows).unwrap(), ent),
            ("categorical js", policy_js_categorical(&probs).unwrap(), oracle_js(&probs)),
        ];
        for (name, got, want) in pairs {
            check(close_rel(got, want), format!("trial {trial}: {name} {got} vs oracle {want}"))?;
        }
    }
    let fixed = [
        ("{3,3,3,3}", value_uncertainty(&[3.0; 4]).unwrap(), 0.0),
        ("{0,0,2,2}", value_uncertainty(&[0.0, 0.0, 2.0, 2.0]).unwrap(), 1.0),
        ("{1,2,3,4}", value_uncertainty(&[1.0, 2.0, 3.0, 4.0]).unwrap(), 1.25f64.sqrt()),
        (
            "means (0,0),(2,2)",
            policy_std_continuous(&[vec![0.0, 0.0], vec![2.0, 2.0]]).unwrap(),
            1.0,
        ),
        (
            "logits (1,0),(0,1)",
            policy_std_categorical(&[vec![1.0, 0.0], vec![0.0, 1.0]], false).unwrap(),
            0.5,
        ),
        ("uniform N=4 max prob", max_prob_uncertainty(&[vec![0.0; 4], vec![0.0; 4]]).unwrap(), 0.75),
        ("uniform N=2 entropy", entropy_uncertainty(&[vec![0.0; 2], vec![0.0; 2]]).unwrap(), 2f64.ln()),
        (
            "sigma 1, (0,0) vs (1,0)",
            policy_js_continuous(&[vec![0.0, 0.0], vec![1.0, 0.0]], &[0.0, 0.0]).unwrap(),
            1.0,
        ),
    ];
    for (name, got, want) in fixed {
        check(got == want, format!("{name}: {got} != {want}"))?;
    }
    // Averaging then entropy: [0.9,0.1] and [0.1,0.9] average to uniform.
    let l = |p: f64| vec![p.ln(), (1.0 - p).ln()];
    let h = entropy_uncertainty(&[l(0.9), l(0.1)]).unwrap();
    check((h - 2f64.ln()).abs() < 1e-12, format!("entropy of averaged pair {h}"))?;
    let half = max_prob_uncertainty(&[vec![0.0, -1e6], vec![-1e6, 0.0]]).unwrap();
    check(half == 0.5, format!("opposed one-hots max prob {half}"))?;
    let sm = softmax(&[0.3, -0.2]);
    check(
        policy_js_categorical(&[sm.clone(), sm]).unwrap() == 0.0,
        "identical distributions give nonzero divergence",
    )?;
    Ok("6 measures x 1000 random inputs match scalar oracles; fixed examples exact".into())
}

// ---------------------------------------------------------------- 3

fn ranks(xs: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..xs.len()).collect();
    idx.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
    let mut r = vec![0.0; xs.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && xs[idx[j + 1]] == xs[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0;
        for &p in &idx[i..=j] {
            r[p] = avg;
        }
        i = j + 1;
    }
    r
}

fn spearman(a: &[f64], b: &[f64]) -> f64 {
    let (ra, rb) = (ranks(a), ranks(b));
    let (ma, mb) = (mean(&ra), mean(&rb));
    let mut num = 0.0;
    let (mut da, mut db) = (0.0, 0.0);
    for i in 0..a.len() {
        num += (ra[i] - ma) * (rb[i] - mb);
        da += (ra[i] - ma).powi(2);
        db += (rb[i] - mb).powi(2);
    }
    num / (da * db).sqrt()
}

fn criterion_3() -> Outcome {
    const DIM: usize = 2;
    const SAMPLES: usize = 100_000;
    let log_std = 0.5f64.ln();
    let mut rng = Rng::new(3, 0);
    // The same standard-normal draws serve every pair and both directions.
    let eps: Vec<[f64; DIM]> = (0..SAMPLES).map(|_| [rng.normal(), rng.normal()]).collect();
    let mut closed = Vec::new();
    let mut mc = Vec::new();
    for _ in 0..50 {
        let mi: Vec<f64> = (0..DIM).map(|_| rng.uniform_range(-1.0, 1.0)).collect();
        let mj: Vec<f64> = (0..DIM).map(|_| rng.uniform_range(-1.0, 1.0)).collect();
        closed.push(policy_js_continuous(&[mi.clone(), mj.clone()], &[log_std; DIM]).unwrap());
        let p = DiagGaussian::new(mi.clone(), vec![log_std; DIM]).unwrap();
        let q = DiagGaussian::new(mj.clone(), vec![log_std; DIM]).unwrap();
        let sigma = log_std.exp();
        let mut acc = 0.0;
        for e in &eps {
            let x: Vec<f64> = (0..DIM).map(|d| mi[d] + sigma * e[d]).collect();
            let y: Vec<f64> = (0..DIM).map(|d| mj[d] + sigma * e[d]).collect();
            acc += p.log_prob(&x).unwrap() - q.log_prob(&x).unwrap();
            acc += q.log_prob(&y).unwrap() - p.log_prob(&y).unwrap();
        }
        mc.push(0.5 * acc / SAMPLES as f64);
    }
    let rho = spearman(&closed, &mc);
    check(rho == 1.0, format!("Spearman {rho}"))?;
    Ok(format!("Spearman rho {rho} over 50 pairs, {SAMPLES} samples each"))
}

// ---------------------------------------------------------------- 4

fn criterion_4() -> Outcome {
    let mut rng = Rng::new(4, 0);
    for trial in 0..200 {
        let n = 1 + rng.below(64);
        let rewards: Vec<f64> = (0..n).map(|_| rng.normal()).collect();
        let values: Vec<f64> = (0..n).map(|_| rng.normal()).collect();
        let dones: Vec<bool> = (0..n).map(|_| rng.bernoulli(0.1)).collect();
        let last = rng.normal();
        let gamma = rng.uniform_range(0.8, 1.0);
        let lambda = rng.uniform();
        let (adv, _) = gae(&rewards, &values, &dones, last, gamma, lambda).unwrap();
        for t in 0..n {
            let mut want = 0.0;
            for l in 0..n - t {
                let s = t + l;
                if (t..s).any(|u| dones[u]) {
                    break;
                }
                let next = if s + 1 < n { values[s + 1] } else { last };
                let delta = rewards[s] + if dones[s] { 0.0 } else { gamma * next } - values[s];
                want += (gamma * lambda).powi(l as i32) * delta;
            }
            check(
                (adv[t] - want).abs() < 1e-10,
                format!("trial {trial} t {t}: {} vs {want}", adv[t]),
            )?;
        }
        let zeros = vec![0.0; n];
        let (adv, ret) = gae(&rewards, &zeros, &vec![false; n], 0.0, 1.0, 1.0).unwrap();
        for t in 0..n {
            let mut togo = 0.0;
            for r in &rewards[t..] {
                togo += r;
            }
            check(
                (adv[t] - togo).abs() < 1e-10 && adv[t] == ret[t],
                format!("trial {trial}: reward-to-go mismatch at {t}"),
            )?;
        }
    }
    Ok("200 trajectories match the explicit sum; lambda = gamma = 1 gives reward-to-go".into())
}

// ---------------------------------------------------------------- 5

fn criterion_5() -> Outcome {
    let mut rng = Rng::new(5, 0);
    for trial in 0..500 {
        let n_id = 1 + rng.below(60);
        let n_ood = 1 + rng.below(60);
        // Coarse values so ties are common.
        let mut draw = |shift: f64| ((rng.normal() + shift) * 4.0).round() / 4.0;
        let id: Vec<f64> = (0..n_id).map(|_| draw(0.0)).collect();
        let ood: Vec<f64> = (0..n_ood).map(|_| draw(0.5)).collect();
        let mw = auc_mann_whitney(&id, &ood).unwrap();
        let (_, fpr, tpr) = roc_curve(&id, &ood).unwrap();
        let sweep = trapezoid(&fpr, &tpr);
        check((mw - sweep).abs() < 1e-12, format!("trial {trial}: {mw} vs {sweep}"))?;
        let flipped = auc_mann_whitney(&ood, &id).unwrap();
        check((flipped - (1.0 - mw)).abs() < 1e-12, format!("trial {trial}: label flip {flipped}"))?;
    }
    let sep = auc_mann_whitney(&[0.1, 0.2, 0.3], &[0.5, 0.9]).unwrap();
    check(sep == 1.0, format!("separated sets give {sep}"))?;
    Ok("500 score sets: sweep AUC == Mann-Whitney, separated = 1, flip = 1 - AUC".into())
}

// ---------------------------------------------------------------- 6

fn criterion_6() -> Outcome {
    let mut cases = 0;
    for k in [2usize, 4, 8] {
        for c in [8usize, 16, 64] {
            for s in 1..=k {
                let scale = s as f64;
                let set = generate_masks(k, c, scale, 17).map_err(|e| e.to_string())?;
                let want = (c as f64 / scale).round() as usize;
                for i in 0..k {
                    check(set.ones(i) == want, format!("k={k} C={c} s={s}: mask {i} has {} ones, want {want}", set.ones(i)))?;
                }
                let mut ov = Vec::new();
                for i in 0..k {
                    for j in i + 1..k {
                        ov.push(set.overlap(i, j));
                    }
                }
                let spread = ov.iter().max().unwrap() - ov.iter().min().unwrap();
                check(spread <= 1, format!("k={k} C={c} s={s}: overlap spread {spread}"))?;
                if s == k && c % k == 0 {
                    check(ov.iter().all(|&o| o == 0), format!("k={k} C={c}: s=k masks overlap"))?;
                }
                check(
                    set == generate_masks(k, c, scale, 17).unwrap(),
                    format!("k={k} C={c} s={s}: regeneration differs"),
                )?;
                if s == 1 {
                    let sizes = [5, c, c, 3];
                    let net = StochasticMlp::new(Method::Masksembles { k, scale: 1.0 }, &sizes, 1.0, 9, stream::INIT, 9)
                        .map_err(|e| e.to_string())?;
                    let plain = Mlp::new(&sizes, 1.0, &mut Rng::new(9, stream::INIT));
                    let x = probe_batch(5);
                    let base = plain.forward(&x, &Modulation::none()).unwrap();
                    for j in 0..k {
                        let y = net.forward_submodel(&x, j, &mut Rng::new(0, 0)).unwrap();
                        check(max_abs_diff(&y, &base) <= 1e-12, format!("k={k} C={c}: s=1 sub-model {j} differs"))?;
                    }
                }
                cases += 1;
            }
        }
    }
    Ok(format!("{cases} (k, C, s) cases"))
}

fn probe_batch(dim: usize) -> Tensor {
    let mut rng = Rng::new(77, 0);
    let rows: Vec<Vec<f64>> = (0..6).map(|_| (0..dim).map(|_| rng.normal()).collect()).collect();
    Tensor::from_rows(&rows).unwrap()
}

fn max_abs_diff(a: &Tensor, b: &Tensor) -> f64 {
    a.data().iter().zip(b.data()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

// ---------------------------------------------------------------- 7

fn criterion_7() -> Outcome {
    let sizes = [4, 16, 16, 16, 3];
    let plain = Mlp::new(&sizes, 0.5, &mut Rng::new(21, stream::INIT));
    let x = probe_batch(4);
    let base = plain.forward(&x, &Modulation::none()).unwrap();
    let methods = [
        Method::None,
        Method::Dropout { k: 4, p: 0.0 },
        Method::Dropconnect { k: 4, p: 0.0 },
        Method::Masksembles { k: 4, scale: 1.0 },
    ];
    let mut worst = 0.0f64;
    for method in methods {
        let net = StochasticMlp::new(method.clone(), &sizes, 0.5, 21, stream::INIT, 21).map_err(|e| e.to_string())?;
        for j in 0..net.k() {
            let y = net.forward_submodel(&x, j, &mut Rng::new(j as u64, 0)).unwrap();
            let d = max_abs_diff(&y, &base);
            worst = worst.max(d);
            check(d <= 1e-12, format!("{} sub-model {j} differs by {d:e}", method.name()))?;
        }
    }
    Ok(format!("none, dropout p=0, dropconnect p=0, masksembles s=1: max diff {worst:e}"))
}

// ---------------------------------------------------------------- 8 and 9

struct PointmassRun {
    method: &'static str,
    seed: u64,
    agent: Agent,
    eval_return: f64,
}

const POINTMASS_SEEDS: [u64; 3] = [0, 1, 2];
const EVAL_SEED: u64 = 100;

fn pointmass_ppo() -> PpoConfig {
    PpoConfig {
        num_envs: 16,
        n_steps: 128,
        total_timesteps: 100_000,
        ..PpoConfig::default()
    }
}

fn train_pointmass(method: Method, seed: u64) -> Result<Agent, String> {
    let agent = Agent::new(AgentConfig {
        obs_dim: 4,
        action_space: ActionSpace::Continuous(2),
        hidden: vec![64, 64, 64],
        method,
        seed,
        freeze_log_std: false,
        log_std_init: 0.0,
    })
    .map_err(|e| e.to_string())?;
    let out = train("pointmass", &EnvParams::default(), agent, &pointmass_ppo(), seed, &mut |_| Ok(()))
        .map_err(|e| e.to_string())?;
    Ok(out.state.agent)
}

fn scripted_return(pd: bool) -> f64 {
    let mut env = make_env("pointmass", EnvParams::default(), EVAL_SEED, stream::EVAL).unwrap();
    let mut total = 0.0;
    for _ in 0..10 {
        let mut obs = env.reset();
        loop {
            let a = if pd { PdController::default().act(&obs) } else { vec![0.0, 0.0] };
            let s = env.step(&Action::Continuous(a)).unwrap();
            total += s.reward;
            obs = s.obs;
            if s.done {
                break;
            }
        }
    }
    total / 10.0
}

fn pointmass_runs() -> Result<Vec<PointmassRun>, String> {
    let mut runs = Vec::new();
    for (name, method) in [("none", Method::None), ("masksembles", Method::Masksembles { k: 4, scale: 2.0 })] {
        for seed in POINTMASS_SEEDS {
            let agent = train_pointmass(method.clone(), seed)?;
            let scheme = InferenceScheme::default_for(agent.action_space());
            let r = evaluate(&agent, "pointmass", &EnvParams::default(), 10, scheme, EVAL_SEED).map_err(|e| e.to_string())?;
            runs.push(PointmassRun {
                method: name,
                seed,
                agent,
                eval_return: mean(&r),
            });
        }
    }
    Ok(runs)
}

fn criterion_8(runs: &Result<Vec<PointmassRun>, String>, train_secs: f64) -> Outcome {
    // Bandit: the training curve's final per-iteration mean reward.
    let t = Instant::now();
    let mut finals = Vec::new();
    for seed in 0..5u64 {
        let agent = Agent::new(AgentConfig {
            obs_dim: 1,
            action_space: ActionSpace::Discrete(2),
            hidden: vec![64, 64, 64],
            method: Method::None,
            seed,
            freeze_log_std: false,
            log_std_init: 0.0,
        })
        .unwrap();
        let cfg = PpoConfig {
            total_timesteps: 20_000,
            ..PpoConfig::default()
        };
        let out = train("bandit2", &EnvParams::default(), agent, &cfg, seed, &mut |_| Ok(())).map_err(|e| e.to_string())?;
        let last = out.curve.iter().rev().find_map(|r| r.mean_episode_reward).unwrap_or(f64::NAN);
        finals.push(last);
    }
    let bandit_secs = t.elapsed().as_secs_f64();
    let good = finals.iter().filter(|&&r| r >= 0.9).count();
    check(good >= 4, format!("bandit2: {good}/5 seeds reach 0.9 ({finals:?})"))?;
    check(bandit_secs < 60.0, format!("bandit2 took {bandit_secs:.1}s"))?;

    let runs = runs.as_ref().map_err(|e| e.clone())?;
    let pd = scripted_return(true);
    let zero = scripted_return(false);
    let score = |r: f64| (r - zero) / (pd - zero);
    let returns = |m: &str| -> Vec<f64> { runs.iter().filter(|r| r.method == m).map(|r| r.eval_return).collect() };
    let (base, mask) = (median(&returns("none")), median(&returns("masksembles")));
    check(score(base) >= 0.7, format!("baseline score {:.3} (return {base:.3}, PD {pd:.3})", score(base)))?;
    check(score(mask) >= 0.7, format!("masksembles score {:.3} (return {mask:.3}, PD {pd:.3})", score(mask)))?;
    check(
        (mask - base).abs() <= 0.3 * base.abs(),
        format!("masksembles return {mask:.3} not within 30% of baseline {base:.3}"),
    )?;
    check(train_secs < 600.0, format!("pointmass training took {train_secs:.0}s"))?;
    Ok(format!(
        "bandit2 {good}/5 >= 0.9 in {bandit_secs:.1}s; pointmass median return baseline {base:.3}, masksembles {mask:.3} (PD {pd:.3}, zero {zero:.3}; scores {:.2}, {:.2}); {train_secs:.0}s",
        score(base),
        score(mask)
    ))
}

fn criterion_9(runs: &Result<Vec<PointmassRun>, String>) -> Outcome {
    let runs = runs.as_ref().map_err(|e| e.clone())?;
    let perturbed = BenchConfig {
        perturbation: PerturbationSpace {
            at_least_one: true,
            ..PerturbationSpace::gravity_friction()
        },
        ..BenchConfig::default()
    };
    let null = BenchConfig {
        source: OodSource::Null,
        ..BenchConfig::default()
    };
    let mut aucs = Vec::new();
    let mut nulls = Vec::new();
    for run in runs.iter().filter(|r| r.method == "masksembles") {
        let b = run_benchmark(&run.agent, "pointmass", &perturbed, run.seed).map_err(|e| e.to_string())?;
        aucs.push(b.auc(Measure::ValueStd).unwrap());
        let n = run_benchmark(&run.agent, "pointmass", &null, run.seed).map_err(|e| e.to_string())?;
        for m in Measure::applicable(false) {
            nulls.push((run.seed, m.name(), n.auc(m).unwrap()));
        }
    }
    let med = median(&aucs);
    check(med >= 0.7, format!("value AUC median {med:.3} ({aucs:.3?})"))?;
    for &(seed, m, a) in &nulls {
        check((0.4..=0.6).contains(&a), format!("null control seed {seed} {m}: AUC {a:.3}"))?;
    }
    let null_range = nulls.iter().fold((1.0f64, 0.0f64), |(lo, hi), n| (lo.min(n.2), hi.max(n.2)));
    Ok(format!(
        "value AUC median {med:.3} ({aucs:.3?}); null AUCs in [{:.3}, {:.3}]",
        null_range.0, null_range.1
    ))
}

// ---------------------------------------------------------------- 10

fn criterion_10() -> Outcome {
    let k = 4;
    let base = PpoConfig {
        num_envs: 4,
        n_steps: 32,
        batch_size: 32,
        n_epochs: 3,
        total_timesteps: 4 * 4 * 32 * 3,
        mode: TrainMode::Independent,
        ..PpoConfig::default()
    };
    let agent = Agent::new(AgentConfig {
        obs_dim: 4,
        action_space: ActionSpace::Continuous(2),
        hidden: vec![16, 16],
        method: Method::Ensembles { k },
        seed: 10,
        freeze_log_std: false,
        log_std_init: 0.0,
    })
    .unwrap();
    let out = train("pointmass", &EnvParams::default(), agent, &base, 10, &mut |_| Ok(())).map_err(|e| e.to_string())?;
    let per = base.total_timesteps / k as u64;
    check(
        out.report.submodel_steps == vec![per; k],
        format!("sub-model steps {:?}, want {per} each", out.report.submodel_steps),
    )?;
    check(
        out.report.submodel_epochs == vec![k * base.n_epochs; k],
        format!("sub-model epochs {:?}", out.report.submodel_epochs),
    )?;
    check(out.report.timesteps == base.total_timesteps, format!("total steps {}", out.report.timesteps))?;
    Ok(format!(
        "budget {} -> {per} steps and {} epochs per member",
        base.total_timesteps,
        k * base.n_epochs
    ))
}

// ---------------------------------------------------------------- 11

fn criterion_11() -> Outcome {
    let mut rng = Rng::new(11, 0);
    for trial in 0..20 {
        let pts: Vec<ParetoPoint> = (0..200)
            .map(|i| ParetoPoint {
                config_id: i,
                reward: rng.below(30) as f64,
                auc: rng.below(30) as f64 / 30.0,
                dominated: false,
            })
            .collect();
        let mut front: Vec<usize> = pareto_front(&pts).iter().map(|p| p.config_id).collect();
        front.sort_unstable();
        let brute: Vec<usize> = pts
            .iter()
            .filter(|p| {
                !pts.iter().any(|q| q.reward >= p.reward && q.auc >= p.auc && (q.reward > p.reward || q.auc > p.auc))
            })
            .map(|p| p.config_id)
            .collect();
        check(front == brute, format!("trial {trial}: front {front:?} vs brute force {brute:?}"))?;
    }
    Ok("20 sets of 200 points match brute-force dominance".into())
}

// ---------------------------------------------------------------- 12

fn criterion_12() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let config = dir.path().join("run.json");
    std::fs::write(
        &config,
        r#"{
  "env": "pointmass",
  "method": {"kind": "masksembles", "k": 4, "scale": 2.0},
  "ppo": {"total_timesteps": 4096, "num_envs": 8, "n_steps": 64, "normalize_obs": true},
  "seed": 12
}"#,
    )
    .map_err(|e| e.to_string())?;
    let run = |out: &Path| -> Result<(), String> {
        let status = Command::new(env!("CARGO_BIN_EXE_oodppo"))
            .args(["train", "--config"])
            .arg(&config)
            .arg("--out")
            .arg(out)
            .status()
            .map_err(|e| e.to_string())?;
        check(status.success(), format!("train exited with {status}"))
    };
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    run(&a)?;
    run(&b)?;
    for f in ["checkpoint.bin", "train_curve.csv"] {
        let x = std::fs::read(a.join(f)).map_err(|e| e.to_string())?;
        let y = std::fs::read(b.join(f)).map_err(|e| e.to_string())?;
        check(x == y, format!("{f} differs between runs"))?;
    }
    Ok("two train runs give byte-identical checkpoint.bin and train_curve.csv".into())
}

fn main() {
    let mut failed = 0;
    let mut report = |n: usize, out: Outcome| match out {
        Ok(msg) => println!("criterion {n:>2}: PASS  {msg}"),
        Err(msg) => {
            failed += 1;
            println!("criterion {n:>2}: FAIL  {msg}");
        }
    };
    report(1, criterion_1());
    report(2, criterion_2());
    report(3, criterion_3());
    report(4, criterion_4());
    report(5, criterion_5());
    report(6, criterion_6());
    report(7, criterion_7());
    let t = Instant::now();
    let runs = pointmass_runs();
    let train_secs = t.elapsed().as_secs_f64();
    report(8, criterion_8(&runs, train_secs));
    report(9, criterion_9(&runs));
    report(10, criterion_10());
    report(11, criterion_11());
    report(12, criterion_12());
    if failed > 0 {
        eprintln!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
