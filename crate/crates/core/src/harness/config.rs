use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::actor::{ActorPoolConfig, Exploration};
use crate::demos::DemoPolicy;
use crate::error::{Error, Result};
use crate::learner::LearnerConfig;
use crate::mdp::EnvSpec;
use crate::network::Architecture;
use crate::replay::ReplayConfig;

/// Ablation switches selectable from the command line.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Ablation {
    NoTransform,
    NoTc,
    /// No expert buffer and no imitation loss; actors switch to the high-exploration schedule.
    NoDemos,
    NoIm,
}

impl FromStr for Ablation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "no_transform" => Ok(Ablation::NoTransform),
            "no_tc" => Ok(Ablation::NoTc),
            "no_demos" => Ok(Ablation::NoDemos),
            "no_im" => Ok(Ablation::NoIm),
            _ => Err(Error::Config(format!(
                "unknown ablation {s:?} (expected no_transform, no_tc, no_demos or no_im)"
            ))),
        }
    }
}

impl fmt::Display for Ablation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Ablation::NoTransform => "no_transform",
            Ablation::NoTc => "no_tc",
            Ablation::NoDemos => "no_demos",
            Ablation::NoIm => "no_im",
        })
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Precision {
    F32,
    #[default]
    F64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetworkConfig {
    pub hidden: Vec<usize>,
    pub dueling: bool,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self {
            hidden: vec![64, 64],
            dueling: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DemoConfig {
    /// Load demonstrations from this file instead of generating them.
    pub path: Option<PathBuf>,
    /// `oracle` or `oracle_noise:P`.
    pub policy: String,
    pub episodes: usize,
    /// Defaults to the experiment seed.
    pub seed: Option<u64>,
    pub initial_priority: f64,
}

impl Default for DemoConfig {
    fn default() -> Self {
        Self {
            path: None,
            policy: "oracle".into(),
            episodes: 5,
            seed: None,
            initial_priority: 1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    /// Learner steps between greedy evaluations; 0 evaluates only at the end.
    pub every: u64,
    pub episodes: usize,
    pub seed: u64,
    /// Stop once the evaluation mean reaches this fraction of the oracle return.
    pub stop_at_oracle_fraction: Option<f64>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            every: 1000,
            episodes: 10,
            seed: 1_000_003,
            stop_at_oracle_fraction: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScheduleConfig {
    /// Environment steps (summed over actors) per learner step. Exact in
    /// deterministic mode, an upper bound on the actors' lead otherwise.
    pub actor_steps_per_learner_step: usize,
    /// Actor transitions required before the first learner step.
    pub min_replay: usize,
    /// Learner steps between publishing parameters to the actors.
    pub publish_period: u64,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        Self {
            actor_steps_per_learner_step: 16,
            min_replay: 256,
            publish_period: 10,
        }
    }
}

/// One experiment. Every field has a default, so a config file only needs to
/// name what differs from the desk profile.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(with = "env_string")]
    pub env: EnvSpec,
    pub seed: u64,
    /// Single-threaded round-robin schedule with bit-reproducible output.
    pub deterministic: bool,
    pub precision: Precision,
    pub learner_steps: u64,
    /// Learner steps between metrics rows.
    pub metrics_every: u64,
    pub out_dir: Option<PathBuf>,
    pub ablations: Vec<Ablation>,
    pub network: NetworkConfig,
    pub learner: LearnerConfig,
    pub actors: ActorPoolConfig,
    pub replay: ReplayConfig,
    pub demos: DemoConfig,
    pub eval: EvalConfig,
    pub schedule: ScheduleConfig,
}

mod env_string {
    use serde::{Deserialize, Deserializer, Serializer};

    use crate::mdp::EnvSpec;

    pub fn serialize<S: Serializer>(env: &EnvSpec, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(env)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<EnvSpec, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

fn merge_tables(base: &mut toml::Table, over: toml::Table) {
    for (key, value) in over {
        match (base.get_mut(&key), value) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge_tables(b, o),
            (_, value) => {
                base.insert(key, value);
            }
        }
    }
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self::desk()
    }
}

impl ExperimentConfig {
    /// Desk-scale defaults: 16 actors, batch 64, faster learning rate and
    /// target refresh than the full-scale settings.
    pub fn desk() -> Self {
        Self {
            env: EnvSpec::SparseGrid { width: 8, height: 8 },
            seed: 0,
            deterministic: false,
            precision: Precision::F64,
            learner_steps: 50_000,
            metrics_every: 100,
            out_dir: None,
            ablations: Vec::new(),
            network: NetworkConfig::default(),
            learner: LearnerConfig {
                batch_size: 64,
                target_update_period: 500,
                adam: crate::network::AdamConfig {
                    learning_rate: 1e-3,
                    ..Default::default()
                },
                ..LearnerConfig::default()
            },
            actors: ActorPoolConfig::default(),
            replay: ReplayConfig::default(),
            demos: DemoConfig::default(),
            eval: EvalConfig::default(),
            schedule: ScheduleConfig::default(),
        }
    }

    /// Full-scale settings: batch 256, learning rate 5e-5, target period 2500, 128 actors.
    pub fn full_scale() -> Self {
        let mut cfg = Self::desk();
        cfg.learner = LearnerConfig::default();
        cfg.actors.num_actors = 128;
        cfg.network.hidden = vec![128, 128, 128];
        cfg.schedule.actor_steps_per_learner_step = 128;
        cfg.schedule.min_replay = 1024;
        cfg
    }

    /// Parses a config file. Keys it leaves out, including keys inside a
    /// partially given table, keep their desk-profile values.
    pub fn from_toml(text: &str) -> Result<Self> {
        let err = |e: &dyn std::fmt::Display| Error::Config(e.to_string());
        let given: toml::Table = toml::from_str(text).map_err(|e| err(&e))?;
        let mut merged = toml::Table::try_from(Self::desk()).map_err(|e| err(&e))?;
        merge_tables(&mut merged, given);
        merged.try_into().map_err(|e| err(&e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn apply_ablation(&mut self, ablation: Ablation) {
        match ablation {
            Ablation::NoTransform => self.learner.use_transform = false,
            Ablation::NoTc => self.learner.use_tc = false,
            Ablation::NoDemos => {
                self.learner.use_expert_data = false;
                self.learner.use_im = false;
                self.actors.exploration = Exploration::High;
            }
            Ablation::NoIm => self.learner.use_im = false,
        }
        if !self.ablations.contains(&ablation) {
            self.ablations.push(ablation);
        }
    }

    /// Applies the listed ablations and validates.
    pub fn resolve(mut self) -> Result<Self> {
        for a in self.ablations.clone() {
            self.apply_ablation(a);
        }
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        self.learner.validate()?;
        self.actors.validate()?;
        if self.network.hidden.contains(&0) {
            return Err(Error::Config("hidden layer widths must be positive".into()));
        }
        if !(self.replay.priority_floor > 0.0) || self.replay.actor_capacity == 0 {
            return Err(Error::Config("replay needs a positive priority floor and capacity".into()));
        }
        if self.metrics_every == 0 {
            return Err(Error::Config("metrics_every must be positive".into()));
        }
        if self.eval.episodes == 0 {
            return Err(Error::Config("eval.episodes must be positive".into()));
        }
        if self.schedule.actor_steps_per_learner_step == 0 || self.schedule.publish_period == 0 {
            return Err(Error::Config("schedule rates must be positive".into()));
        }
        if self.learner.use_expert_data {
            self.demo_policy()?;
            if self.demos.episodes == 0 && self.demos.path.is_none() {
                return Err(Error::Config("expert data enabled but demos.episodes is 0".into()));
            }
        }
        Ok(())
    }

    pub fn demo_policy(&self) -> Result<DemoPolicy> {
        self.demos.policy.parse().map_err(|e: Error| Error::Config(e.to_string()))
    }

    pub fn architecture(&self, n_states: usize, n_actions: usize) -> Architecture {
        Architecture {
            input_dim: n_states,
            hidden: self.network.hidden.clone(),
            n_actions,
            dueling: self.network.dueling,
        }
    }
}
