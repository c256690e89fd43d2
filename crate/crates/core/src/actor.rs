//! Rollout workers: epsilon-greedy behaviour under the latest published
//! snapshot, n-step transition assembly and initial priorities.

use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::learner::{bootstrap, one_hot_rows, priority_of, UniqueRows};
use crate::mdp::{Env, EpisodeCap, Episode, FiniteMdp};
use crate::network::{Network, ParamSnapshot, SnapshotCell};
use crate::qtable::argmax;
use crate::replay::{assemble_transitions, SharedBuffer, Transition, DEFAULT_HORIZONS};
use crate::scalar::Scalar;
use crate::transform::ValueTransform;

/// Per-actor exploration rates.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Exploration {
    /// `0.1^(alpha + 3 (1 - alpha))`, from 0.001 to 0.1.
    #[default]
    Standard,
    /// `0.4^(1 + 7 alpha)`, from 0.4 down to about 0.0007; used without demonstrations.
    High,
}

impl Exploration {
    /// Rate of actor `i` (1-based) among `m`. A single actor sits at `alpha = 1/2`.
    pub fn epsilon(self, i: usize, m: usize) -> Result<f64> {
        if m == 0 || i == 0 || i > m {
            return Err(Error::invalid(format!("actor index {i} out of range 1..={m}")));
        }
        let alpha = if m == 1 { 0.5 } else { (i - 1) as f64 / (m - 1) as f64 };
        Ok(match self {
            Exploration::Standard => 0.1f64.powf(alpha + 3.0 * (1.0 - alpha)),
            Exploration::High => 0.4f64.powf(1.0 + 7.0 * alpha),
        })
    }
}

pub fn epsilon_for(i: usize, m: usize) -> Result<f64> {
    Exploration::Standard.epsilon(i, m)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ActorPoolConfig {
    pub num_actors: usize,
    pub episode_cap: usize,
    /// Environment steps between snapshot refreshes.
    pub snapshot_refresh: usize,
    pub exploration: Exploration,
    pub horizons: Vec<usize>,
}

impl Default for ActorPoolConfig {
    fn default() -> Self {
        Self {
            num_actors: 16,
            episode_cap: EpisodeCap::default().max_steps,
            snapshot_refresh: 100,
            exploration: Exploration::Standard,
            horizons: DEFAULT_HORIZONS.to_vec(),
        }
    }
}

impl ActorPoolConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_actors == 0 {
            return Err(Error::Config("num_actors must be at least 1".into()));
        }
        if self.episode_cap == 0 || self.snapshot_refresh == 0 {
            return Err(Error::Config("episode_cap and snapshot_refresh must be positive".into()));
        }
        if self.horizons.is_empty() || self.horizons.contains(&0) {
            return Err(Error::Config(format!("invalid horizons {:?}", self.horizons)));
        }
        Ok(())
    }
}

/// How initial priorities are computed from a snapshot.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PriorityRule {
    pub gamma: f64,
    pub transform: ValueTransform,
    pub huber: bool,
    pub floor: f64,
}

/// Initial priorities with `snapshot` acting as both online and target network.
pub fn initial_priorities<T: Scalar>(transitions: &[Transition], snapshot: &Network<T>, rule: &PriorityRule) -> Result<Vec<f64>> {
    if transitions.is_empty() {
        return Ok(Vec::new());
    }
    let n_states = snapshot.architecture().input_dim;
    let mut rows = UniqueRows::new(n_states);
    for t in transitions {
        if t.state >= n_states || t.bootstrap_state >= n_states {
            return Err(Error::invalid(format!("transition {t:?} does not fit the network")));
        }
        rows.insert(t.state);
        rows.insert(t.bootstrap_state);
    }
    let q = snapshot.forward_batch(&rows.features::<T>(), rows.len())?;
    transitions
        .iter()
        .map(|t| {
            let next = q.q_row(rows.row(t.bootstrap_state));
            let (_, y) = bootstrap(t, next, next, rule.gamma, false, &rule.transform)?;
            let delta = (q.q_row(rows.row(t.state))[t.action] - y).as_f64();
            Ok(priority_of(delta, rule.huber).max(rule.floor))
        })
        .collect()
}

pub fn initial_priority<T: Scalar>(transition: &Transition, snapshot: &Network<T>, rule: &PriorityRule) -> Result<f64> {
    Ok(initial_priorities(std::slice::from_ref(transition), snapshot, rule)?[0])
}

/// Greedy action under `net` with lowest-index tie-breaking.
pub fn greedy_action<T: Scalar>(net: &Network<T>, state: usize) -> Result<usize> {
    let x = one_hot_rows::<T>(std::iter::once(state), net.architecture().input_dim);
    Ok(argmax(&net.forward(&x)?))
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ActorStats {
    pub env_steps: u64,
    pub episodes: u64,
    pub transitions: u64,
    pub return_sum: f64,
}

pub struct Actor<T: Scalar> {
    index: usize,
    epsilon: f64,
    env: Env,
    rng: ChaCha8Rng,
    snapshot: Arc<ParamSnapshot<T>>,
    /// Greedy action per state under `snapshot`, filled lazily.
    greedy: Vec<Option<usize>>,
    since_refresh: usize,
    refresh: usize,
    horizons: Vec<usize>,
    rule: PriorityRule,
    episode: Episode,
    stats: ActorStats,
}

/// Independent seed for stream `i` derived from `seed`.
pub fn derive_seed(seed: u64, i: u64) -> u64 {
    let mut z = seed ^ i.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    // splitmix64 finalizer
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl<T: Scalar> Actor<T> {
    /// Actor `index` (1-based) of the pool described by `cfg`.
    pub fn new(
        index: usize,
        cfg: &ActorPoolConfig,
        rule: PriorityRule,
        mdp: Arc<FiniteMdp>,
        snapshot: Arc<ParamSnapshot<T>>,
        seed: u64,
    ) -> Result<Self> {
        cfg.validate()?;
        let epsilon = cfg.exploration.epsilon(index, cfg.num_actors)?;
        Self::with_epsilon(index, epsilon, cfg, rule, mdp, snapshot, seed)
    }

    pub fn with_epsilon(
        index: usize,
        epsilon: f64,
        cfg: &ActorPoolConfig,
        rule: PriorityRule,
        mdp: Arc<FiniteMdp>,
        snapshot: Arc<ParamSnapshot<T>>,
        seed: u64,
    ) -> Result<Self> {
        if !(0.0..=1.0).contains(&epsilon) {
            return Err(Error::invalid(format!("epsilon {epsilon} outside [0, 1]")));
        }
        if snapshot.network().architecture().input_dim != mdp.n_states()
            || snapshot.network().architecture().n_actions != mdp.n_actions()
        {
            return Err(Error::invalid("snapshot shape does not match the environment"));
        }
        let cap = EpisodeCap::new(cfg.episode_cap)?;
        let n_states = mdp.n_states();
        let env = Env::new(mdp, cap, derive_seed(seed, 2 * index as u64));
        Ok(Self {
            index,
            epsilon,
            env,
            rng: ChaCha8Rng::seed_from_u64(derive_seed(seed, 2 * index as u64 + 1)),
            greedy: vec![None; n_states],
            snapshot,
            since_refresh: 0,
            refresh: cfg.snapshot_refresh,
            horizons: cfg.horizons.clone(),
            rule,
            episode: Episode::default(),
            stats: ActorStats::default(),
        })
    }

    pub fn index(&self) -> usize {
        self.index
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn stats(&self) -> &ActorStats {
        &self.stats
    }

    pub fn snapshot_tag(&self) -> u64 {
        self.snapshot.tag()
    }

    fn choose(&mut self, state: usize) -> Result<usize> {
        let n = self.env.mdp().n_actions();
        if self.rng.gen::<f64>() < self.epsilon {
            Ok(self.rng.gen_range(0..n))
        } else if let Some(a) = self.greedy[state] {
            Ok(a)
        } else {
            let a = greedy_action(self.snapshot.network(), state)?;
            self.greedy[state] = Some(a);
            Ok(a)
        }
    }

    /// One environment step. When the episode ends its transitions are
    /// inserted into `buffer` and the undiscounted return is returned.
    pub fn step(&mut self, cell: &SnapshotCell<T>, buffer: &SharedBuffer) -> Result<Option<f64>> {
        if self.env.is_done() {
            self.episode = Episode {
                states: vec![self.env.reset()],
                ..Episode::default()
            };
        }
        let action = self.choose(self.env.state())?;
        let step = self.env.step(action)?;
        self.episode.actions.push(action);
        self.episode.rewards.push(step.reward);
        self.episode.states.push(step.next_state);
        self.stats.env_steps += 1;
        self.since_refresh += 1;
        if self.since_refresh >= self.refresh {
            let latest = cell.latest();
            if !Arc::ptr_eq(&latest, &self.snapshot) {
                self.snapshot = latest;
                self.greedy.iter_mut().for_each(|a| *a = None);
            }
            self.since_refresh = 0;
        }
        if !step.done() {
            return Ok(None);
        }
        self.episode.terminated = step.terminated;
        let episode = std::mem::take(&mut self.episode);
        let mut transitions = assemble_transitions(&episode, self.rule.gamma, &self.horizons);
        let priorities = initial_priorities(&transitions, self.snapshot.network(), &self.rule)?;
        for (t, p) in transitions.iter_mut().zip(priorities) {
            t.priority = p;
        }
        self.stats.transitions += transitions.len() as u64;
        buffer.insert_all(transitions)?;
        let ret = episode.total_reward();
        self.stats.episodes += 1;
        self.stats.return_sum += ret;
        Ok(Some(ret))
    }

    /// Steps until `stop` is raised.
    pub fn run(&mut self, cell: &SnapshotCell<T>, buffer: &SharedBuffer, stop: &AtomicBool) -> Result<ActorStats> {
        while !stop.load(Ordering::Relaxed) {
            self.step(cell, buffer)?;
        }
        Ok(self.stats.clone())
    }
}

/// Undiscounted returns of `episodes` greedy rollouts.
pub fn evaluate_greedy<T: Scalar>(net: &Network<T>, mdp: Arc<FiniteMdp>, cap: EpisodeCap, episodes: usize, seed: u64) -> Result<Vec<f64>> {
    if episodes == 0 {
        return Err(Error::invalid("evaluation needs at least one episode"));
    }
    let arch = net.architecture();
    if arch.input_dim != mdp.n_states() || arch.n_actions != mdp.n_actions() {
        return Err(Error::invalid(format!(
            "network expects {} states and {} actions, environment has {} and {}",
            arch.input_dim,
            arch.n_actions,
            mdp.n_states(),
            mdp.n_actions()
        )));
    }
    // one forward pass per state instead of per step
    let greedy: Vec<usize> = (0..mdp.n_states()).map(|s| greedy_action(net, s)).collect::<Result<_>>()?;
    let mut env = Env::new(mdp, cap, seed);
    (0..episodes)
        .map(|_| Ok(env.run_episode(|s| greedy[s])?.total_reward()))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::{make_env, EnvSpec};
    use crate::network::Architecture;
    use crate::replay::{PrioritizedBuffer, ReplayConfig};
    use crate::transform::TransformParams;
    use proptest::prelude::*;

    fn rule(gamma: f64) -> PriorityRule {
        PriorityRule {
            gamma,
            transform: ValueTransform::Sqrt(TransformParams::default()),
            huber: true,
            floor: 1e-4,
        }
    }

    fn tabular(n_states: usize, n_actions: usize, q: impl Fn(usize, usize) -> f64) -> Network<f64> {
        let arch = Architecture {
            input_dim: n_states,
            hidden: vec![],
            n_actions,
            dueling: false,
        };
        let mut params = vec![0.0; (n_states + 1) * n_actions];
        for s in 0..n_states {
            for a in 0..n_actions {
                params[s * n_actions + a] = q(s, a);
            }
        }
        Network::from_params(arch, params).unwrap()
    }

    fn actor_buffer() -> SharedBuffer {
        SharedBuffer::new(PrioritizedBuffer::actor(ReplayConfig::default()).unwrap())
    }

    #[test]
    fn schedule_endpoints() {
        assert!((epsilon_for(1, 128).unwrap() - 0.001).abs() < 1e-15);
        assert!((epsilon_for(128, 128).unwrap() - 0.1).abs() < 1e-15);
        assert!((epsilon_for(65, 129).unwrap() - 0.01).abs() < 1e-15);
        assert!((epsilon_for(1, 1).unwrap() - 0.01).abs() < 1e-15);
        assert!(epsilon_for(0, 4).is_err());
        assert!(epsilon_for(5, 4).is_err());
        assert!((Exploration::High.epsilon(1, 16).unwrap() - 0.4).abs() < 1e-15);
    }

    proptest! {
        #[test]
        fn schedule_is_monotone(m in 2usize..=256) {
            let eps: Vec<f64> = (1..=m).map(|i| epsilon_for(i, m).unwrap()).collect();
            prop_assert!((eps[0] - 0.001).abs() < 1e-15);
            prop_assert!((eps[m - 1] - 0.1).abs() < 1e-15);
            prop_assert!(eps.windows(2).all(|w| w[0] < w[1]));
        }
    }

    #[test]
    fn terminal_priority_from_zero_snapshot() {
        let net = tabular(2, 2, |_, _| 0.0);
        let t = Transition {
            state: 0,
            action: 1,
            n_step_reward: 1.0,
            bootstrap_state: 1,
            horizon: 1,
            steps: 1,
            terminal_within_horizon: true,
            is_expert: false,
            is_best_episode: false,
            priority: 0.0,
        };
        let p = initial_priority(&t, &net, &rule(0.999)).unwrap();
        assert!((p - 0.08998).abs() < 1e-5, "{p}");
    }

    #[test]
    fn fixed_point_priority_is_floor() {
        use crate::solver::{value_iterate, SolveOptions};
        let mdp = Arc::new(make_env(&EnvSpec::DelayedChain { length: 6 }).unwrap());
        let r = rule(0.9);
        let sol = value_iterate::<f64>(&mdp, &SolveOptions::transformed(0.9, r.transform)).unwrap();
        let net = tabular(mdp.n_states(), 2, |s, a| sol.q.get(s, a));
        let ep = Env::new(mdp.clone(), EpisodeCap::new(50).unwrap(), 0).run_episode(|_| 1).unwrap();
        for t in assemble_transitions(&ep, 0.9, &[1]) {
            assert_eq!(initial_priority(&t, &net, &r).unwrap(), 1e-4);
        }
    }

    #[test]
    fn pure_random_actions_are_uniform() {
        let mdp = Arc::new(make_env(&EnvSpec::WindyGrid { width: 4, height: 4, slip: 0.0 }).unwrap());
        let net = tabular(mdp.n_states(), 4, |_, a| a as f64);
        let cell = SnapshotCell::new(net.snapshot(0));
        let cfg = ActorPoolConfig {
            episode_cap: 50,
            ..ActorPoolConfig::default()
        };
        let mut actor = Actor::with_epsilon(1, 1.0, &cfg, rule(0.99), mdp, cell.latest(), 3).unwrap();
        let mut counts = [0usize; 4];
        let n = 100_000;
        for _ in 0..n {
            counts[actor.choose(0).unwrap()] += 1;
        }
        let mean = n as f64 / 4.0;
        let sd = (n as f64 * 0.25 * 0.75).sqrt();
        for c in counts {
            assert!((c as f64 - mean).abs() < 3.0 * sd, "{counts:?}");
        }
    }

    #[test]
    fn optimal_snapshot_reaches_goal_every_episode() {
        let mdp = Arc::new(make_env(&EnvSpec::DelayedChain { length: 8 }).unwrap());
        let net = tabular(mdp.n_states(), 2, |_, a| a as f64);
        let cell = SnapshotCell::new(net.snapshot(0));
        let buffer = actor_buffer();
        let cfg = ActorPoolConfig {
            episode_cap: 100,
            ..ActorPoolConfig::default()
        };
        let mut actor = Actor::with_epsilon(1, 0.0, &cfg, rule(0.99), mdp, cell.latest(), 0).unwrap();
        let mut returns = Vec::new();
        while returns.len() < 5 {
            if let Some(r) = actor.step(&cell, &buffer).unwrap() {
                returns.push(r);
            }
        }
        assert_eq!(returns, vec![1.0; 5]);
        assert_eq!(actor.stats().env_steps, 35);
        // 7 steps per episode, horizons 1 and 10
        assert_eq!(buffer.len(), 70);
        assert!(buffer.lock().transitions().all(|t| t.priority >= 1e-4));
    }

    #[test]
    fn cap_bounds_episode_length() {
        let mdp = Arc::new(make_env(&EnvSpec::DelayedChain { length: 100 }).unwrap());
        let net = tabular(mdp.n_states(), 2, |_, _| 0.0);
        let cell = SnapshotCell::new(net.snapshot(0));
        let buffer = actor_buffer();
        let cfg = ActorPoolConfig {
            episode_cap: 10,
            ..ActorPoolConfig::default()
        };
        let mut actor = Actor::with_epsilon(1, 0.5, &cfg, rule(0.99), mdp, cell.latest(), 9).unwrap();
        let mut steps = 0;
        let mut ends = Vec::new();
        for _ in 0..100 {
            steps += 1;
            if actor.step(&cell, &buffer).unwrap().is_some() {
                ends.push(steps);
            }
        }
        assert_eq!(ends, (1..=10).map(|k| 10 * k).collect::<Vec<_>>());
    }

    #[test]
    fn refresh_picks_up_published_snapshot() {
        let mdp = Arc::new(make_env(&EnvSpec::DelayedChain { length: 100 }).unwrap());
        let net = tabular(mdp.n_states(), 2, |_, _| 0.0);
        let cell = SnapshotCell::new(net.snapshot(0));
        let buffer = actor_buffer();
        let cfg = ActorPoolConfig {
            snapshot_refresh: 3,
            ..ActorPoolConfig::default()
        };
        let mut actor = Actor::with_epsilon(1, 0.1, &cfg, rule(0.99), mdp, cell.latest(), 1).unwrap();
        cell.publish(net.snapshot(7));
        actor.step(&cell, &buffer).unwrap();
        actor.step(&cell, &buffer).unwrap();
        assert_eq!(actor.snapshot_tag(), 0);
        actor.step(&cell, &buffer).unwrap();
        assert_eq!(actor.snapshot_tag(), 7);
    }

    #[test]
    fn greedy_evaluation() {
        let mdp = Arc::new(make_env(&EnvSpec::DelayedChain { length: 5 }).unwrap());
        let good = tabular(5, 2, |_, a| a as f64);
        let bad = tabular(5, 2, |_, a| -(a as f64));
        let cap = EpisodeCap::new(20).unwrap();
        assert_eq!(evaluate_greedy(&good, mdp.clone(), cap, 3, 0).unwrap(), vec![1.0; 3]);
        assert_eq!(evaluate_greedy(&bad, mdp.clone(), cap, 2, 0).unwrap(), vec![0.0; 2]);
        assert!(evaluate_greedy(&good, mdp.clone(), cap, 0, 0).is_err());
        assert!(evaluate_greedy(&tabular(4, 2, |_, _| 0.0), mdp, cap, 1, 0).is_err());
    }
}
