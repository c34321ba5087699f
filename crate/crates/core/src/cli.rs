//! Command-line front end: `train`, `eval`, `oodbench` and `sweep`.
//!
//! Every command writes into one output directory and refuses to replace
//! existing outputs unless `--force` is given. `eval` and `oodbench` read
//! `<out>/checkpoint.bin` by default, so they can share the training
//! directory; only `train` and `sweep` write `config.resolved.json`.

use std::fs::File;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::agent::Agent;
use crate::checkpoint::Checkpoint;
use crate::config::{Command, RunConfig};
use crate::error::{Error, Result};
use crate::layers::net::Method;
use crate::ood::run_benchmark;
use crate::ppo::evaluate::{mean, std};
use crate::ppo::{evaluate, train, CurveRow};
use crate::sweep::{pareto_front, points_of, run_sweep, SweepRow};

#[derive(Debug, Parser)]
#[command(name = "oodppo", version, about = "PPO with sub-model uncertainty and OOD detection benchmarks")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Cmd,
}

#[derive(Debug, Subcommand)]
pub enum Cmd {
    /// Train an agent; writes checkpoint.bin, train_curve.csv and config.resolved.json.
    Train(CommonArgs),
    /// Evaluate a checkpoint under each inference scheme; writes eval.csv.
    Eval(CommonArgs),
    /// Run the OOD detection benchmark on a checkpoint; writes summary.csv,
    /// roc_<measure>.csv, timeline.csv and breakdown.csv.
    Oodbench(CommonArgs),
    /// Random hyperparameter search; writes sweep.csv and pareto.csv.
    Sweep(CommonArgs),
}

#[derive(Debug, Args)]
pub struct CommonArgs {
    /// Run configuration (JSON). Optional for eval and oodbench, which fall
    /// back to the configuration stored in the checkpoint.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory; defaults to `out_dir` from the configuration.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Overrides the configuration seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Replace existing outputs.
    #[arg(long)]
    pub force: bool,
    /// Checkpoint to load; defaults to `<out>/checkpoint.bin`.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Cmd::Train(args) => cmd_train(&args),
        Cmd::Eval(args) => cmd_eval(&args),
        Cmd::Oodbench(args) => cmd_oodbench(&args),
        Cmd::Sweep(args) => cmd_sweep(&args),
    }
}

fn resolve(args: &CommonArgs, base: Option<RunConfig>, cmd: Command) -> Result<(RunConfig, PathBuf)> {
    let mut cfg = match (&args.config, base) {
        (Some(path), _) => RunConfig::load(path)?,
        (None, Some(cfg)) => cfg,
        (None, None) => return Err(Error::config("--config", "a configuration file is required")),
    };
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    let out = match (&args.out, &cfg.out_dir) {
        (Some(out), _) => out.clone(),
        (None, Some(dir)) => PathBuf::from(dir),
        (None, None) => return Err(Error::config("--out", "no output directory given")),
    };
    cfg.out_dir = Some(out.display().to_string());
    cfg.validate(cmd)?;
    Ok((cfg, out))
}

/// Creates `out` and checks that none of `files` exists unless forced.
fn prepare_out(out: &Path, files: &[&str], force: bool) -> Result<()> {
    std::fs::create_dir_all(out)?;
    if !force {
        if let Some(f) = files.iter().find(|f| out.join(f).exists()) {
            return Err(Error::Io(std::io::Error::new(
                std::io::ErrorKind::AlreadyExists,
                format!("{} exists; pass --force to overwrite", out.join(f).display()),
            )));
        }
    }
    Ok(())
}

fn write_resolved(out: &Path, cfg: &RunConfig) -> Result<()> {
    let mut f = File::create(out.join("config.resolved.json"))?;
    f.write_all(cfg.to_json()?.as_bytes())?;
    f.write_all(b"\n")?;
    Ok(())
}

fn opt(x: Option<f64>) -> String {
    x.map(|v| v.to_string()).unwrap_or_default()
}

fn load_checkpoint(args: &CommonArgs, out_hint: Option<&Path>) -> Result<Checkpoint> {
    let path = match (&args.checkpoint, out_hint) {
        (Some(p), _) => p.clone(),
        (None, Some(out)) => out.join("checkpoint.bin"),
        (None, None) => return Err(Error::config("--checkpoint", "no checkpoint given")),
    };
    if !path.exists() {
        return Err(Error::Io(std::io::Error::new(
            std::io::ErrorKind::NotFound,
            format!("checkpoint {} not found", path.display()),
        )));
    }
    Checkpoint::load(&path)
}

/// Loads the checkpoint and resolves the configuration against it: an
/// explicit `--config` supplies evaluation settings, the network always
/// comes from the checkpoint.
fn checkpoint_and_config(args: &CommonArgs, cmd: Command) -> Result<(Checkpoint, RunConfig, PathBuf)> {
    let out_hint = args.out.clone().or_else(|| {
        args.config
            .as_ref()
            .and_then(|p| RunConfig::load(p).ok())
            .and_then(|c| c.out_dir.map(PathBuf::from))
    });
    let ck = load_checkpoint(args, out_hint.as_deref())?;
    let (mut cfg, out) = resolve(args, Some(ck.config.clone()), cmd)?;
    if cfg.env != ck.config.env || cfg.method != ck.config.method {
        return Err(Error::config(
            "env",
            format!(
                "configuration is for {} / {} but the checkpoint holds {} / {}",
                cfg.env,
                cfg.method.name(),
                ck.config.env,
                ck.config.method.name()
            ),
        ));
    }
    cfg.agent = ck.config.agent.clone();
    Ok((ck, cfg, out))
}

pub fn cmd_train(args: &CommonArgs) -> Result<()> {
    let (cfg, out) = resolve(args, None, Command::Train)?;
    prepare_out(&out, &["checkpoint.bin", "train_curve.csv", "config.resolved.json"], args.force)?;
    write_resolved(&out, &cfg)?;
    let agent = Agent::new(cfg.agent_config()?)?;
    let mut curve = csv::Writer::from_path(out.join("train_curve.csv"))?;
    curve.write_record([
        "iteration",
        "timesteps",
        "mean_episode_reward",
        "mean_episode_len",
        "loss",
        "policy_loss",
        "value_loss",
        "entropy",
    ])?;
    let mut on_row = |r: &CurveRow| -> Result<()> {
        curve.write_record([
            r.iteration.to_string(),
            r.timesteps.to_string(),
            opt(r.mean_episode_reward),
            opt(r.mean_episode_len),
            r.loss.to_string(),
            r.policy_loss.to_string(),
            r.value_loss.to_string(),
            r.entropy.to_string(),
        ])?;
        curve.flush()?;
        Ok(())
    };
    let outcome = train(&cfg.env, &cfg.env_params, agent, &cfg.ppo, cfg.seed, &mut on_row)?;
    curve.flush()?;
    // The output location is not part of the run, so the snapshot leaves it
    // out and reruns into other directories stay byte-identical.
    Checkpoint {
        config: RunConfig { out_dir: None, ..cfg },
        state: outcome.state,
    }
    .save(&out.join("checkpoint.bin"))
}

pub fn cmd_eval(args: &CommonArgs) -> Result<()> {
    let (ck, cfg, out) = checkpoint_and_config(args, Command::Eval)?;
    prepare_out(&out, &["eval.csv"], args.force)?;
    let agent = &ck.state.agent;
    let mut w = csv::Writer::from_path(out.join("eval.csv"))?;
    w.write_record(["env", "method", "scheme", "episodes", "seeds", "mean_reward", "std_reward"])?;
    for scheme in cfg.eval.resolved_schemes(agent.action_space()) {
        let mut returns = Vec::with_capacity(cfg.eval.episodes * cfg.eval.seeds);
        for s in 0..cfg.eval.seeds {
            returns.extend(evaluate(
                agent,
                &cfg.env,
                &cfg.env_params,
                cfg.eval.episodes,
                scheme,
                cfg.seed.wrapping_add(s as u64),
            )?);
        }
        w.write_record([
            cfg.env.clone(),
            cfg.method.name().to_string(),
            scheme.label(),
            returns.len().to_string(),
            cfg.eval.seeds.to_string(),
            mean(&returns).to_string(),
            std(&returns).to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn cmd_oodbench(args: &CommonArgs) -> Result<()> {
    let (ck, cfg, out) = checkpoint_and_config(args, Command::OodBench)?;
    let agent = &ck.state.agent;
    let result = run_benchmark(agent, &cfg.env, &cfg.bench, cfg.seed)?;
    let roc_files: Vec<String> = result.rocs.iter().map(|r| format!("roc_{}.csv", r.measure)).collect();
    let mut files = vec!["summary.csv", "timeline.csv", "breakdown.csv"];
    files.extend(roc_files.iter().map(String::as_str));
    prepare_out(&out, &files, args.force)?;

    let (n_id, n_ood) = (result.id_states.len(), result.ood_states.len());
    let mut summary = csv::Writer::from_path(out.join("summary.csv"))?;
    summary.write_record(["measure", "auc", "n_id", "n_ood", "flipped"])?;
    for (roc, file) in result.rocs.iter().zip(&roc_files) {
        summary.write_record([
            roc.measure.clone(),
            roc.auc.to_string(),
            n_id.to_string(),
            n_ood.to_string(),
            roc.flipped.to_string(),
        ])?;
        let mut w = csv::Writer::from_path(out.join(file))?;
        w.write_record(["threshold", "fpr", "tpr"])?;
        for ((t, f), p) in roc.thresholds.iter().zip(&roc.fpr).zip(&roc.tpr) {
            w.write_record([t.to_string(), f.to_string(), p.to_string()])?;
        }
        w.flush()?;
    }
    summary.flush()?;

    let tl = &result.timeline;
    let mut w = csv::Writer::from_path(out.join("timeline.csv"))?;
    let mut header = vec!["step".to_string(), "is_ood".to_string()];
    header.extend(tl.measures.iter().map(|m| m.name().to_string()));
    w.write_record(&header)?;
    for (i, row) in tl.rows.iter().enumerate() {
        let mut rec = vec![i.to_string(), u8::from(i >= tl.boundary).to_string()];
        rec.extend(row.iter().map(f64::to_string));
        w.write_record(&rec)?;
    }
    w.flush()?;

    let mut w = csv::Writer::from_path(out.join("breakdown.csv"))?;
    w.write_record(["measure", "provenance", "gravity", "wind", "friction", "body_scale", "layout", "auc"])?;
    for m in &tl.measures {
        for (tag, auc) in result.auc_by_provenance(*m)? {
            let params = tag
                .strip_prefix("config_")
                .and_then(|i| i.parse::<usize>().ok())
                .and_then(|i| result.perturbations.get(i));
            let mut rec = vec![m.name().to_string(), tag.clone()];
            match params {
                Some(p) => rec.extend([
                    p.gravity.to_string(),
                    p.wind.to_string(),
                    p.friction.to_string(),
                    p.body_scale.to_string(),
                    p.layout.to_string(),
                ]),
                None => rec.extend(std::iter::repeat_n(String::new(), 5)),
            }
            rec.push(auc.to_string());
            w.write_record(&rec)?;
        }
    }
    w.flush()?;
    Ok(())
}

fn sweep_record(row: &SweepRow) -> Vec<String> {
    let p = &row.params;
    let (k, scale, drop_p) = match p.method {
        Method::None => (1, None, None),
        Method::Masksembles { k, scale } => (k, Some(scale), None),
        Method::Dropout { k, p } | Method::Dropconnect { k, p } => (k, None, Some(p)),
        Method::Ensembles { k } => (k, None, None),
    };
    vec![
        row.config_id.to_string(),
        p.method.name().to_string(),
        k.to_string(),
        opt(scale),
        opt(drop_p),
        p.learning_rate.to_string(),
        p.hidden_width.to_string(),
        p.clip_range.to_string(),
        p.ent_coef.to_string(),
        p.gae_lambda.to_string(),
        p.n_epochs.to_string(),
        row.reward.to_string(),
        row.auc.to_string(),
        row.diverged.to_string(),
        row.dominated.to_string(),
    ]
}

const SWEEP_HEADER: [&str; 15] = [
    "config_id",
    "method",
    "k",
    "scale",
    "dropout_p",
    "learning_rate",
    "hidden_width",
    "clip_range",
    "ent_coef",
    "gae_lambda",
    "n_epochs",
    "reward",
    "auc",
    "diverged",
    "dominated",
];

pub fn cmd_sweep(args: &CommonArgs) -> Result<()> {
    let (cfg, out) = resolve(args, None, Command::Sweep)?;
    prepare_out(&out, &["sweep.csv", "pareto.csv", "config.resolved.json"], args.force)?;
    write_resolved(&out, &cfg)?;
    let rows = run_sweep(&cfg.env, &cfg.agent_config()?, &cfg.ppo, &cfg.sweep, cfg.seed)?;
    let mut w = csv::Writer::from_path(out.join("sweep.csv"))?;
    w.write_record(SWEEP_HEADER)?;
    for row in &rows {
        w.write_record(sweep_record(row))?;
    }
    w.flush()?;
    let mut w = csv::Writer::from_path(out.join("pareto.csv"))?;
    w.write_record(SWEEP_HEADER)?;
    for p in pareto_front(&points_of(&rows)) {
        w.write_record(sweep_record(&rows[p.config_id]))?;
    }
    w.flush()?;
    Ok(())
}
