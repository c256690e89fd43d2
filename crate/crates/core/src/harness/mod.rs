//! Experiment orchestration: configuration, the actor pool plus learner run,
//! metrics, evaluation, operator analysis and the command line.

mod analyze;
pub mod cli;
mod config;
mod eval;
mod metrics;

pub use analyze::{analyze_operator, random_mdps, AnalyzeConfig, ContractionConfig, LipschitzConfig, OperatorReport};
pub use config::{Ablation, DemoConfig, EvalConfig, ExperimentConfig, NetworkConfig, Precision, ScheduleConfig};
pub use eval::{cmd_eval, evaluate_network, normalized_score, oracle_returns, random_policy_returns, EvalReport, EvalRequest};
pub use metrics::{read_metrics, MetricsRow, MetricsWriter, METRICS_HEADER};

use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

use parking_lot::Mutex;
use serde::{Deserialize, Serialize};

use crate::actor::{derive_seed, Actor, PriorityRule};
use crate::demos::{generate_demos, load_demos, save_demos, seed_expert_buffer};
use crate::error::{Error, Result};
use crate::learner::{train, Control, Learner, StepReport, TrainObserver};
use crate::mdp::{make_env, EpisodeCap, FiniteMdp};
use crate::network::{save_checkpoint, Checkpoint, SnapshotCell};
use crate::replay::{PrioritizedBuffer, SharedBuffer};
use crate::scalar::Scalar;

/// Outcome of one training run, also written to `summary.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub out_dir: PathBuf,
    pub learner_steps: u64,
    pub snapshot_k: u64,
    pub env_steps: u64,
    pub episodes: u64,
    /// Largest `|Q|` seen in any training batch.
    pub max_abs_q: f64,
    /// Mean return of the exact optimal policy under the evaluation protocol.
    pub oracle_return: f64,
    /// First evaluation step whose mean reached the configured oracle fraction.
    pub first_success_step: Option<u64>,
    pub stopped_early: bool,
    /// Divergence diagnostics when the run was aborted.
    pub aborted: Option<String>,
    pub final_eval: Option<EvalReport>,
    pub elapsed_ms: u64,
}

pub const CONFIG_FILE: &str = "config.toml";
pub const METRICS_FILE: &str = "metrics.csv";
pub const CHECKPOINT_FILE: &str = "checkpoint.json";
pub const SUMMARY_FILE: &str = "summary.json";
pub const DEMOS_FILE: &str = "demos.txt";
pub const DIVERGENCE_FILE: &str = "divergence.txt";

fn default_out_dir(cfg: &ExperimentConfig) -> PathBuf {
    let env = cfg.env.to_string().replace(':', "_");
    PathBuf::from("runs").join(format!("{env}-seed{}", cfg.seed))
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::InvalidState(e.to_string()))?;
    std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

/// Trains per `cfg` and writes the run directory: resolved `config.toml`,
/// `metrics.csv`, `demos.txt` (when demonstrations are used),
/// `checkpoint.json` and `summary.json`.
pub fn run_experiment(cfg: ExperimentConfig) -> Result<RunSummary> {
    let cfg = cfg.resolve()?;
    match cfg.precision {
        Precision::F64 => run_typed::<f64>(&cfg),
        Precision::F32 => run_typed::<f32>(&cfg),
    }
}

type ErrorSlot = Arc<Mutex<Option<Error>>>;

struct Pool<T: Scalar> {
    /// Actors stepped in turn on the learner thread (deterministic mode only).
    local: Vec<Actor<T>>,
    next: usize,
    env_steps: Arc<AtomicU64>,
    episodes: Arc<AtomicU64>,
    learner_steps: Arc<AtomicU64>,
    failure: ErrorSlot,
}

impl<T: Scalar> Pool<T> {
    fn step_local(&mut self, cell: &SnapshotCell<T>, buffer: &SharedBuffer) -> Result<()> {
        let n = self.local.len();
        let actor = &mut self.local[self.next % n];
        self.next = (self.next + 1) % n;
        if actor.step(cell, buffer)?.is_some() {
            self.episodes.fetch_add(1, Ordering::Relaxed);
        }
        self.env_steps.fetch_add(1, Ordering::Relaxed);
        Ok(())
    }

    fn check_failure(&self) -> Result<()> {
        match self.failure.lock().take() {
            Some(e) => Err(e),
            None => Ok(()),
        }
    }
}

struct RunObserver<'a, T: Scalar> {
    cfg: &'a ExperimentConfig,
    mdp: Arc<FiniteMdp>,
    cap: EpisodeCap,
    cell: &'a SnapshotCell<T>,
    actor_buffer: &'a SharedBuffer,
    pool: Pool<T>,
    metrics: MetricsWriter,
    start: Instant,
    window_max_q: f64,
    max_abs_q: f64,
    last_row: u64,
    last: Option<StepReport>,
    oracle_return: f64,
    first_success_step: Option<u64>,
}

impl<'a, T: Scalar> RunObserver<'a, T> {
    fn wall_ms(&self) -> u64 {
        if self.cfg.deterministic {
            0
        } else {
            self.start.elapsed().as_millis() as u64
        }
    }

    fn row(&mut self, report: &StepReport, eval: Option<f64>) -> Result<()> {
        let l = &report.losses;
        let row = MetricsRow {
            step: report.step,
            wall_ms: self.wall_ms(),
            loss_td: l.td,
            loss_tc: l.tc,
            loss_im: l.im,
            loss_total: l.total,
            max_abs_q: self.window_max_q,
            eval_return_mean: eval,
            snapshot_k: report.snapshot_k,
        };
        self.window_max_q = 0.0;
        self.last_row = report.step;
        self.metrics.write(&row)
    }

    fn deterministic(&self) -> bool {
        !self.pool.local.is_empty()
    }
}

impl<T: Scalar> TrainObserver<T> for RunObserver<'_, T> {
    fn before_step(&mut self, learner: &Learner<T>) -> Result<()> {
        self.pool.check_failure()?;
        if self.deterministic() {
            while self.actor_buffer.len() < self.cfg.schedule.min_replay {
                self.pool.step_local(self.cell, self.actor_buffer)?;
            }
            if learner.steps() > 0 {
                for _ in 0..self.cfg.schedule.actor_steps_per_learner_step {
                    self.pool.step_local(self.cell, self.actor_buffer)?;
                }
            }
        } else {
            while self.actor_buffer.len() < self.cfg.schedule.min_replay {
                self.pool.check_failure()?;
                std::thread::sleep(Duration::from_millis(1));
            }
        }
        Ok(())
    }

    fn starved(&mut self, _learner: &Learner<T>) -> Result<()> {
        self.pool.check_failure()?;
        if self.deterministic() {
            self.pool.step_local(self.cell, self.actor_buffer)
        } else {
            std::thread::sleep(Duration::from_millis(1));
            Ok(())
        }
    }

    fn after_step(&mut self, learner: &Learner<T>, report: &StepReport) -> Result<Control> {
        let step = report.step;
        self.pool.learner_steps.store(step, Ordering::Relaxed);
        self.window_max_q = self.window_max_q.max(report.losses.max_abs_q);
        self.max_abs_q = self.max_abs_q.max(report.losses.max_abs_q);
        if step % self.cfg.schedule.publish_period == 0 {
            self.cell.publish(learner.publish());
        }
        let mut control = Control::Continue;
        let eval_due = self.cfg.eval.every > 0 && step % self.cfg.eval.every == 0;
        let eval = if eval_due {
            let e = evaluate_network(learner.online(), self.mdp.clone(), self.cap, self.cfg.eval.episodes, self.cfg.eval.seed)?;
            if let Some(frac) = self.cfg.eval.stop_at_oracle_fraction {
                if e.mean >= frac * self.oracle_return {
                    self.first_success_step.get_or_insert(step);
                    control = Control::Stop;
                }
            }
            Some(e.mean)
        } else {
            None
        };
        if eval_due || step % self.cfg.metrics_every == 0 {
            self.row(report, eval)?;
        }
        self.last = Some(report.clone());
        Ok(control)
    }
}

fn run_typed<T: Scalar>(cfg: &ExperimentConfig) -> Result<RunSummary> {
    let start = Instant::now();
    let out = cfg.out_dir.clone().unwrap_or_else(|| default_out_dir(cfg));
    std::fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
    let config_text = format!(
        "# Resolved configuration of this run; `apex-dqfd train --config` on this file repeats it.\n{}",
        cfg.to_toml()?
    );
    let config_path = out.join(CONFIG_FILE);
    std::fs::write(&config_path, config_text).map_err(|e| Error::io(&config_path, e))?;

    let mdp = Arc::new(make_env(&cfg.env)?);
    let cap = EpisodeCap::new(cfg.actors.episode_cap)?;
    let gamma = cfg.learner.gamma;
    let oracle = oracle_returns(mdp.clone(), gamma, cap, cfg.eval.episodes, cfg.eval.seed)?;
    let oracle_return = oracle.iter().sum::<f64>() / oracle.len() as f64;

    let expert = if cfg.learner.use_expert_data {
        let set = match &cfg.demos.path {
            Some(path) => {
                let set = load_demos(path)?;
                if set.env != cfg.env {
                    return Err(Error::Config(format!(
                        "demo file {} is for {}, experiment runs {}",
                        path.display(),
                        set.env,
                        cfg.env
                    )));
                }
                set
            }
            None => generate_demos(
                &cfg.env,
                cfg.demo_policy()?,
                cfg.demos.episodes,
                cfg.demos.seed.unwrap_or(cfg.seed),
                cap,
                gamma,
            )?,
        };
        save_demos(&set, &out.join(DEMOS_FILE))?;
        let mut buffer = PrioritizedBuffer::expert(cfg.replay)?;
        seed_expert_buffer(&set, gamma, &cfg.actors.horizons, cfg.demos.initial_priority, &mut buffer)?;
        Some(SharedBuffer::new(buffer))
    } else {
        None
    };
    let actor_buffer = SharedBuffer::new(PrioritizedBuffer::actor(cfg.replay)?);

    let arch = cfg.architecture(mdp.n_states(), mdp.n_actions());
    let mut learner = Learner::<T>::new(cfg.learner.clone(), arch, derive_seed(cfg.seed, 0))?;
    let cell = SnapshotCell::new(learner.publish());
    let rule = PriorityRule {
        gamma,
        transform: cfg.learner.value_transform(),
        huber: cfg.learner.priority_huber,
        floor: cfg.replay.priority_floor,
    };
    let actor_seed = derive_seed(cfg.seed, 1);
    let actors = (1..=cfg.actors.num_actors)
        .map(|i| Actor::new(i, &cfg.actors, rule, mdp.clone(), cell.latest(), actor_seed))
        .collect::<Result<Vec<_>>>()?;

    let env_steps = Arc::new(AtomicU64::new(0));
    let episodes = Arc::new(AtomicU64::new(0));
    let learner_steps = Arc::new(AtomicU64::new(0));
    let failure: ErrorSlot = Arc::new(Mutex::new(None));
    let stop = AtomicBool::new(false);
    let (local, threaded) = if cfg.deterministic { (actors, Vec::new()) } else { (Vec::new(), actors) };

    let mut observer = RunObserver {
        cfg,
        mdp: mdp.clone(),
        cap,
        cell: &cell,
        actor_buffer: &actor_buffer,
        pool: Pool {
            local,
            next: 0,
            env_steps: env_steps.clone(),
            episodes: episodes.clone(),
            learner_steps: learner_steps.clone(),
            failure: failure.clone(),
        },
        metrics: MetricsWriter::create(&out.join(METRICS_FILE))?,
        start,
        window_max_q: 0.0,
        max_abs_q: 0.0,
        last_row: 0,
        last: None,
        oracle_return,
        first_success_step: None,
    };

    let outcome = std::thread::scope(|scope| {
        for mut actor in threaded {
            let (cell, buffer, stop) = (&cell, &actor_buffer, &stop);
            let (env_steps, episodes, learner_steps, failure) =
                (env_steps.clone(), episodes.clone(), learner_steps.clone(), failure.clone());
            let ratio = cfg.schedule.actor_steps_per_learner_step as u64;
            let lead = cfg.schedule.min_replay as u64;
            scope.spawn(move || {
                while !stop.load(Ordering::Relaxed) {
                    // keep the actors at most `ratio` env steps per learner step ahead
                    let allowed = lead + ratio * (learner_steps.load(Ordering::Relaxed) + 1);
                    if env_steps.load(Ordering::Relaxed) >= allowed {
                        std::thread::sleep(Duration::from_micros(200));
                        continue;
                    }
                    match actor.step(cell, buffer) {
                        Ok(ended) => {
                            env_steps.fetch_add(1, Ordering::Relaxed);
                            if ended.is_some() {
                                episodes.fetch_add(1, Ordering::Relaxed);
                            }
                        }
                        Err(e) => {
                            failure.lock().get_or_insert(e);
                            stop.store(true, Ordering::Relaxed);
                        }
                    }
                }
            });
        }
        let result = train(&mut learner, &actor_buffer, expert.as_ref(), cfg.learner_steps, &mut observer);
        stop.store(true, Ordering::Relaxed);
        result
    });

    let mut aborted = None;
    let report = match outcome {
        Ok(r) => Some(r),
        Err(Error::Divergence(msg)) => {
            let path = out.join(DIVERGENCE_FILE);
            std::fs::write(&path, format!("{msg}\n")).map_err(|e| Error::io(&path, e))?;
            aborted = Some(msg);
            None
        }
        Err(e) => return Err(e),
    };
    if let Some(last) = observer.last.clone().filter(|l| l.step > observer.last_row) {
        observer.row(&last, None)?;
    }
    observer.metrics.flush()?;

    let final_eval = if aborted.is_none() {
        save_checkpoint(
            &out.join(CHECKPOINT_FILE),
            &Checkpoint::from_network(learner.online(), learner.snapshot_k(), Some(cfg.env.to_string())),
        )?;
        Some(evaluate_network(learner.online(), mdp, cap, cfg.eval.episodes, cfg.eval.seed)?)
    } else {
        None
    };
    let summary = RunSummary {
        out_dir: out.clone(),
        learner_steps: learner.steps(),
        snapshot_k: learner.snapshot_k(),
        env_steps: env_steps.load(Ordering::Relaxed),
        episodes: episodes.load(Ordering::Relaxed),
        max_abs_q: observer.max_abs_q,
        oracle_return,
        first_success_step: observer.first_success_step,
        stopped_early: report.as_ref().is_some_and(|r| r.stopped_early),
        aborted,
        final_eval,
        elapsed_ms: start.elapsed().as_millis() as u64,
    };
    write_json(&out.join(SUMMARY_FILE), &summary)?;
    Ok(summary)
}
