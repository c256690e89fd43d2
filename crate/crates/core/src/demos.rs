//! Expert demonstrations: oracle rollouts, the demo file format and seeding
//! of the expert replay buffer.
//!
//! Demo files are UTF-8 text. The first line is the header, e.g.
//!
//! ```text
//! apex-dqfd-demos version=1 env=sparse_grid:8x8 n_episodes=5 best_episode_index=0 seed=7 policy=oracle
//! ```
//!
//! followed by one whitespace-separated record per environment step:
//!
//! ```text
//! episode_id step state action reward next_state terminated
//! ```
//!
//! Lines starting with `#` are comments. Episodes appear in order, steps
//! within an episode are consecutive from 0, and `next_state` of one step is
//! the `state` of the next. An episode whose last record has
//! `terminated=false` was cut by the episode cap.

use std::fmt;
use std::path::Path;
use std::str::FromStr;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::mdp::{make_env, Env, EnvSpec, Episode, EpisodeCap, FiniteMdp};
use crate::replay::{assemble_transitions, PrioritizedBuffer};
use crate::solver::{greedy_policy, value_iterate, SolveOptions};

pub const DEMO_MAGIC: &str = "apex-dqfd-demos";
pub const DEMO_VERSION: u32 = 1;

/// Policy that produced a demo set.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum DemoPolicy {
    /// Greedy with respect to the exact optimal Q-function.
    Oracle,
    /// Oracle, but each step takes a uniformly random action with probability `p`.
    OracleNoise(f64),
}

impl fmt::Display for DemoPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DemoPolicy::Oracle => write!(f, "oracle"),
            DemoPolicy::OracleNoise(p) => write!(f, "oracle_noise:{p}"),
        }
    }
}

impl FromStr for DemoPolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "oracle" {
            return Ok(DemoPolicy::Oracle);
        }
        let p = s
            .strip_prefix("oracle_noise:")
            .and_then(|p| p.parse::<f64>().ok())
            .ok_or_else(|| Error::invalid(format!("unknown demo policy {s:?} (expected oracle or oracle_noise:P)")))?;
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::invalid(format!("noise probability {p} outside [0, 1]")));
        }
        Ok(DemoPolicy::OracleNoise(p))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DemoSet {
    pub env: EnvSpec,
    pub seed: u64,
    pub policy: DemoPolicy,
    pub episodes: Vec<Episode>,
    pub best_episode_index: usize,
}

/// Index of the highest-return episode, lowest index on ties.
pub fn best_episode(episodes: &[Episode]) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, e) in episodes.iter().enumerate() {
        let r = e.total_reward();
        if best.map_or(true, |(_, b)| r > b) {
            best = Some((i, r));
        }
    }
    best.map(|(i, _)| i)
}

impl DemoSet {
    pub fn returns(&self) -> Vec<f64> {
        self.episodes.iter().map(Episode::total_reward).collect()
    }

    pub fn total_steps(&self) -> usize {
        self.episodes.iter().map(Episode::len).sum()
    }
}

/// Greedy policy of the exact optimal Q-function at discount `gamma`.
pub fn oracle_policy(mdp: &FiniteMdp, gamma: f64) -> Result<Vec<usize>> {
    let sol = value_iterate::<f64>(mdp, &SolveOptions::standard(gamma))?;
    if !sol.converged {
        return Err(Error::InvalidState("value iteration did not converge for the oracle".into()));
    }
    Ok(greedy_policy(&sol.q))
}

/// Rolls out the oracle policy `n_episodes` times. Fails if the noise-free
/// oracle does not reach a terminal state within `cap`.
pub fn generate_demos(
    spec: &EnvSpec,
    policy: DemoPolicy,
    n_episodes: usize,
    seed: u64,
    cap: EpisodeCap,
    gamma: f64,
) -> Result<DemoSet> {
    if n_episodes == 0 {
        return Err(Error::invalid("n_episodes must be at least 1"));
    }
    let mdp = Arc::new(make_env(spec)?);
    let oracle = oracle_policy(&mdp, gamma)?;
    let mut env = Env::new(mdp.clone(), cap, seed);
    let probe = env.run_episode(|s| oracle[s])?;
    if !probe.terminated {
        return Err(Error::InvalidState(format!(
            "oracle policy does not finish {spec} within {} steps",
            cap.max_steps
        )));
    }
    let mut env = Env::new(mdp.clone(), cap, seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let n_actions = mdp.n_actions();
    let mut episodes = Vec::with_capacity(n_episodes);
    for _ in 0..n_episodes {
        let ep = env.run_episode(|s| match policy {
            DemoPolicy::OracleNoise(p) if rng.gen::<f64>() < p => rng.gen_range(0..n_actions),
            _ => oracle[s],
        })?;
        if policy == DemoPolicy::Oracle && !ep.terminated {
            return Err(Error::InvalidState(format!("oracle episode on {spec} hit the step cap")));
        }
        episodes.push(ep);
    }
    let best_episode_index = best_episode(&episodes).expect("at least one episode");
    Ok(DemoSet {
        env: *spec,
        seed,
        policy,
        episodes,
        best_episode_index,
    })
}

pub fn format_demos(set: &DemoSet) -> String {
    use std::fmt::Write;
    let mut out = format!(
        "{DEMO_MAGIC} version={DEMO_VERSION} env={} n_episodes={} best_episode_index={} seed={} policy={}\n",
        set.env,
        set.episodes.len(),
        set.best_episode_index,
        set.seed,
        set.policy
    );
    out.push_str("# episode_id step state action reward next_state terminated\n");
    for (e, ep) in set.episodes.iter().enumerate() {
        for t in 0..ep.len() {
            let terminated = ep.terminated && t + 1 == ep.len();
            writeln!(
                out,
                "{e} {t} {} {} {:?} {} {terminated}",
                ep.states[t],
                ep.actions[t],
                ep.rewards[t],
                ep.states[t + 1]
            )
            .expect("writing to a String");
        }
    }
    out
}

pub fn save_demos(set: &DemoSet, path: &Path) -> Result<()> {
    std::fs::write(path, format_demos(set)).map_err(|e| Error::io(path, e))
}

pub fn load_demos(path: &Path) -> Result<DemoSet> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_demos(&text)
}

struct Header {
    env: EnvSpec,
    n_episodes: usize,
    best: usize,
    seed: u64,
    policy: DemoPolicy,
}

fn parse_header(line: &str) -> Result<Header> {
    let parse_err = |message: String| Error::Parse { line: 1, message };
    let mut fields = line.split_whitespace();
    if fields.next() != Some(DEMO_MAGIC) {
        return Err(parse_err(format!("expected header starting with {DEMO_MAGIC:?}")));
    }
    let (mut version, mut env, mut n, mut best, mut seed, mut policy) = (None, None, None, None, None, None);
    for field in fields {
        let (key, value) = field
            .split_once('=')
            .ok_or_else(|| parse_err(format!("malformed header field {field:?}")))?;
        let bad = |e: String| parse_err(format!("header field {key}: {e}"));
        match key {
            "version" => version = Some(value.parse::<u32>().map_err(|e| bad(e.to_string()))?),
            "env" => env = Some(value.parse::<EnvSpec>().map_err(|e| bad(e.to_string()))?),
            "n_episodes" => n = Some(value.parse::<usize>().map_err(|e| bad(e.to_string()))?),
            "best_episode_index" => best = Some(value.parse::<usize>().map_err(|e| bad(e.to_string()))?),
            "seed" => seed = Some(value.parse::<u64>().map_err(|e| bad(e.to_string()))?),
            "policy" => policy = Some(value.parse::<DemoPolicy>().map_err(|e| bad(e.to_string()))?),
            _ => return Err(parse_err(format!("unknown header field {key:?}"))),
        }
    }
    let version = version.ok_or_else(|| parse_err("header lacks version".into()))?;
    if version != DEMO_VERSION {
        return Err(Error::Validation {
            line: 1,
            message: format!("unsupported demo file version {version} (expected {DEMO_VERSION})"),
        });
    }
    Ok(Header {
        env: env.ok_or_else(|| parse_err("header lacks env".into()))?,
        n_episodes: n.ok_or_else(|| parse_err("header lacks n_episodes".into()))?,
        best: best.ok_or_else(|| parse_err("header lacks best_episode_index".into()))?,
        seed: seed.unwrap_or(0),
        policy: policy.unwrap_or(DemoPolicy::Oracle),
    })
}

struct Record {
    episode: usize,
    step: usize,
    state: usize,
    action: usize,
    reward: f64,
    next_state: usize,
    terminated: bool,
}

fn parse_record(line: &str, n: usize) -> Result<Record> {
    let err = |message: String| Error::Parse { line: n, message };
    let f: Vec<&str> = line.split_whitespace().collect();
    if f.len() != 7 {
        return Err(err(format!("expected 7 fields, found {}", f.len())));
    }
    let int = |i: usize, name: &str| f[i].parse::<usize>().map_err(|e| err(format!("{name} {:?}: {e}", f[i])));
    let reward = f[4].parse::<f64>().map_err(|e| err(format!("reward {:?}: {e}", f[4])))?;
    if !reward.is_finite() {
        return Err(err(format!("non-finite reward {:?}", f[4])));
    }
    Ok(Record {
        episode: int(0, "episode_id")?,
        step: int(1, "step")?,
        state: int(2, "state")?,
        action: int(3, "action")?,
        reward,
        next_state: int(5, "next_state")?,
        terminated: f[6].parse::<bool>().map_err(|e| err(format!("terminated {:?}: {e}", f[6])))?,
    })
}

/// Parses and validates a demo file against its environment.
pub fn parse_demos(text: &str) -> Result<DemoSet> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
    let header_line = lines.next().map(|(_, l)| l).filter(|l| !l.trim().is_empty());
    let header = parse_header(header_line.ok_or(Error::Parse {
        line: 1,
        message: "empty demo file".into(),
    })?)?;
    let mdp = make_env(&header.env)?;
    let invalid = |line: usize, message: String| Error::Validation { line, message };

    let mut episodes: Vec<Episode> = Vec::new();
    let mut open = false;
    for (n, line) in lines {
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let r = parse_record(trimmed, n)?;
        if r.step == 0 {
            if r.episode != episodes.len() {
                return Err(invalid(n, format!("expected episode {} to start, found {}", episodes.len(), r.episode)));
            }
            if r.state >= mdp.n_states() || mdp.initial_distribution()[r.state] <= 0.0 {
                return Err(invalid(n, format!("state {} is not a start state", r.state)));
            }
            episodes.push(Episode {
                states: vec![r.state],
                ..Episode::default()
            });
        } else {
            let ep = episodes.last().filter(|_| r.episode + 1 == episodes.len());
            let Some(ep) = ep else {
                return Err(invalid(n, format!("episode {} step {} does not continue an episode", r.episode, r.step)));
            };
            if !open {
                return Err(invalid(n, format!("episode {} continues after its terminal step", r.episode)));
            }
            if r.step != ep.len() {
                return Err(invalid(n, format!("expected step {}, found {}", ep.len(), r.step)));
            }
            let last = *ep.states.last().expect("episodes start with a state");
            if r.state != last {
                return Err(invalid(n, format!("state {} does not follow previous next_state {last}", r.state)));
            }
        }
        if r.action >= mdp.n_actions() {
            return Err(invalid(n, format!("action {} out of range", r.action)));
        }
        if r.next_state >= mdp.n_states() || mdp.transition_prob(r.state, r.action, r.next_state) <= 0.0 {
            return Err(invalid(
                n,
                format!("transition {} -[{}]-> {} is impossible in {}", r.state, r.action, r.next_state, header.env),
            ));
        }
        if !mdp.reward_in_support(r.state, r.action, r.reward) {
            return Err(invalid(n, format!("reward {} impossible for state {} action {}", r.reward, r.state, r.action)));
        }
        if r.terminated != mdp.is_terminal(r.next_state) {
            return Err(invalid(n, format!("terminated={} disagrees with the environment", r.terminated)));
        }
        let ep = episodes.last_mut().expect("episode opened above");
        ep.actions.push(r.action);
        ep.rewards.push(r.reward);
        ep.states.push(r.next_state);
        ep.terminated = r.terminated;
        open = !r.terminated;
    }
    let end = text.lines().count().max(1);
    if episodes.len() != header.n_episodes {
        return Err(invalid(end, format!("header promises {} episodes, found {}", header.n_episodes, episodes.len())));
    }
    if best_episode(&episodes) != Some(header.best) {
        return Err(invalid(1, format!("best_episode_index {} is not the highest-return episode", header.best)));
    }
    Ok(DemoSet {
        env: header.env,
        seed: header.seed,
        policy: header.policy,
        episodes,
        best_episode_index: header.best,
    })
}

/// Fills and seals the expert buffer with every demo transition. Only the
/// best episode's transitions carry the imitation flag.
pub fn seed_expert_buffer(
    set: &DemoSet,
    gamma: f64,
    horizons: &[usize],
    initial_priority: f64,
    buffer: &mut PrioritizedBuffer,
) -> Result<usize> {
    if buffer.is_sealed() {
        return Err(Error::Protocol("expert buffer is already sealed".into()));
    }
    let priority = initial_priority.max(buffer.config().priority_floor);
    let mut count = 0;
    for (i, ep) in set.episodes.iter().enumerate() {
        for mut t in assemble_transitions(ep, gamma, horizons) {
            t.is_expert = true;
            t.is_best_episode = i == set.best_episode_index;
            t.priority = priority;
            buffer.insert(t)?;
            count += 1;
        }
    }
    buffer.seal();
    Ok(count)
}
