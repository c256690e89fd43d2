//! Command-line interface of the `apex-dqfd` binary.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use super::{analyze_operator, cmd_eval, run_experiment, write_json, AnalyzeConfig, EvalRequest, ExperimentConfig};
use crate::demos::{generate_demos, load_demos, save_demos, DemoPolicy};
use crate::error::{Error, Result};
use crate::mdp::{EnvSpec, EpisodeCap};

#[derive(Debug, Parser)]
#[command(name = "apex-dqfd", version, about = "Distributed DQN from demonstrations on small tabular environments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train an agent and write a run directory.
    Train(TrainArgs),
    /// Score a checkpoint with greedy episodes.
    Eval(EvalArgs),
    /// Check fixed-point, contraction and Lipschitz properties of the transformed operator.
    AnalyzeOperator(AnalyzeArgs),
    /// Write oracle demonstrations to a demo file.
    GenDemos(GenDemosArgs),
    /// Validate a demo file and print a summary.
    InspectDemos(InspectArgs),
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Experiment config (TOML); desk defaults when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Single-threaded, bit-reproducible schedule.
    #[arg(long)]
    pub deterministic: bool,
    /// no_transform, no_tc, no_demos or no_im; repeatable.
    #[arg(long, value_name = "ABLATION")]
    pub ablate: Vec<String>,
    /// Run directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Override the learner step budget.
    #[arg(long)]
    pub steps: Option<u64>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Experiment config supplying env, cap and evaluation settings.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Environment, e.g. `delayed_chain:200`; defaults to the checkpoint's.
    #[arg(long)]
    pub env: Option<String>,
    #[arg(long)]
    pub episodes: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub cap: Option<usize>,
    /// Reference score for normalization.
    #[arg(long)]
    pub reference: Option<f64>,
    /// Random-policy score; estimated when omitted.
    #[arg(long)]
    pub random: Option<f64>,
    /// Write the report as JSON here as well as to stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, default_value = "operator_report.json")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct GenDemosArgs {
    /// Experiment config supplying env, gamma, cap and the demo section.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub env: Option<String>,
    /// `oracle` or `oracle_noise:P`.
    #[arg(long)]
    pub policy: Option<String>,
    #[arg(long)]
    pub episodes: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub cap: Option<usize>,
    #[arg(long)]
    pub gamma: Option<f64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct InspectArgs {
    pub path: PathBuf,
}

/// Exit status of a command that finished without error.
pub const EXIT_OK: i32 = 0;
pub const EXIT_ERROR: i32 = 1;
pub const EXIT_DIVERGED: i32 = 3;
pub const EXIT_CHECKS_FAILED: i32 = 4;

fn load_config(path: Option<&Path>) -> Result<ExperimentConfig> {
    match path {
        Some(p) => ExperimentConfig::load(p),
        None => Ok(ExperimentConfig::desk()),
    }
}

fn parse_env(s: &str) -> Result<EnvSpec> {
    s.parse().map_err(|e: Error| Error::Config(e.to_string()))
}

pub fn train_config(args: &TrainArgs) -> Result<ExperimentConfig> {
    let mut cfg = load_config(args.config.as_deref())?;
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if args.deterministic {
        cfg.deterministic = true;
    }
    for a in &args.ablate {
        cfg.apply_ablation(a.parse()?);
    }
    if let Some(out) = &args.out {
        cfg.out_dir = Some(out.clone());
    }
    if let Some(steps) = args.steps {
        cfg.learner_steps = steps;
    }
    cfg.resolve()
}

fn train(args: &TrainArgs) -> Result<i32> {
    let summary = run_experiment(train_config(args)?)?;
    println!("run directory: {}", summary.out_dir.display());
    println!("learner steps: {}  env steps: {}  episodes: {}", summary.learner_steps, summary.env_steps, summary.episodes);
    println!("max |Q|: {}", summary.max_abs_q);
    if let Some(msg) = &summary.aborted {
        eprintln!("training aborted: {msg}");
        return Ok(EXIT_DIVERGED);
    }
    if let Some(e) = &summary.final_eval {
        println!("greedy return: mean {} median {} (oracle {})", e.mean, e.median, summary.oracle_return);
    }
    Ok(EXIT_OK)
}

fn eval(args: &EvalArgs) -> Result<i32> {
    let cfg = args.config.as_deref().map(ExperimentConfig::load).transpose()?;
    let env = match (&args.env, &cfg) {
        (Some(e), _) => Some(parse_env(e)?),
        (None, Some(c)) => Some(c.env),
        (None, None) => None,
    };
    let defaults = cfg.unwrap_or_default();
    let req = EvalRequest {
        env,
        episodes: args.episodes.unwrap_or(defaults.eval.episodes),
        seed: args.seed.unwrap_or(defaults.eval.seed),
        cap: EpisodeCap::new(args.cap.unwrap_or(defaults.actors.episode_cap))?,
        reference: args.reference,
        random: args.random,
    };
    let report = cmd_eval(&args.checkpoint, &req)?;
    println!("{}", serde_json::to_string_pretty(&report).map_err(|e| Error::InvalidState(e.to_string()))?);
    if let Some(out) = &args.out {
        write_json(out, &report)?;
    }
    Ok(EXIT_OK)
}

fn analyze(args: &AnalyzeArgs) -> Result<i32> {
    let cfg = match &args.config {
        Some(p) => AnalyzeConfig::load(p)?,
        None => AnalyzeConfig::default(),
    };
    let report = analyze_operator(&cfg)?;
    write_json(&args.out, &report)?;
    for e in &report.fixed_point {
        println!(
            "fixed point  {:<20} gamma {:<6} {:<16} sup {:.3e}  agreement {}  {}",
            e.env,
            e.gamma,
            e.transform,
            e.sup_distance,
            e.argmax_agreement,
            if e.pass { "ok" } else { "FAIL" }
        );
    }
    for e in &report.contraction {
        println!(
            "contraction  gamma {:<8} ratio {:.4} bound {:.4}  {}",
            e.gamma,
            e.max_ratio,
            e.bound,
            if e.pass { "ok" } else { "FAIL" }
        );
    }
    let l = &report.lipschitz;
    println!(
        "lipschitz    h {:.6} <= {:.6}, h_inv {:.4} <= {:.4}  {}",
        l.max_slope,
        l.bound,
        l.max_slope_inverse,
        l.bound_inverse,
        if l.pass { "ok" } else { "FAIL" }
    );
    println!("report written to {}", args.out.display());
    Ok(if report.all_pass { EXIT_OK } else { EXIT_CHECKS_FAILED })
}

fn gen_demos(args: &GenDemosArgs) -> Result<i32> {
    let cfg = load_config(args.config.as_deref())?;
    let env = match &args.env {
        Some(e) => parse_env(e)?,
        None => cfg.env,
    };
    let policy: DemoPolicy = match &args.policy {
        Some(p) => p.parse().map_err(|e: Error| Error::Config(e.to_string()))?,
        None => cfg.demo_policy()?,
    };
    let cap = EpisodeCap::new(args.cap.unwrap_or(cfg.actors.episode_cap))?;
    let set = generate_demos(
        &env,
        policy,
        args.episodes.unwrap_or(cfg.demos.episodes),
        args.seed.or(cfg.demos.seed).unwrap_or(cfg.seed),
        cap,
        args.gamma.unwrap_or(cfg.learner.gamma),
    )?;
    save_demos(&set, &args.out)?;
    println!(
        "wrote {} episodes ({} steps) of {} to {}",
        set.episodes.len(),
        set.total_steps(),
        set.env,
        args.out.display()
    );
    Ok(EXIT_OK)
}

fn inspect(args: &InspectArgs) -> Result<i32> {
    let set = load_demos(&args.path)?;
    println!("env: {}", set.env);
    println!("policy: {}  seed: {}", set.policy, set.seed);
    println!("episodes: {}  steps: {}", set.episodes.len(), set.total_steps());
    println!("best episode: {}", set.best_episode_index);
    for (i, e) in set.episodes.iter().enumerate() {
        println!(
            "  episode {i}: length {} return {} {}",
            e.len(),
            e.total_reward(),
            if e.terminated { "terminated" } else { "truncated" }
        );
    }
    Ok(EXIT_OK)
}

pub fn execute(cli: &Cli) -> Result<i32> {
    match &cli.command {
        Command::Train(a) => train(a),
        Command::Eval(a) => eval(a),
        Command::AnalyzeOperator(a) => analyze(a),
        Command::GenDemos(a) => gen_demos(a),
        Command::InspectDemos(a) => inspect(a),
    }
}

/// Parses `args` (including the program name) and runs the command,
/// returning the process exit status.
pub fn run<I, S>(args: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match execute(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_ERROR
        }
    }
}
