//! Finite MDPs, the episodic environment wrapper, and the built-in toy suite.
//!
//! Rewards are raw and never clipped. Each `(state, action)` pair carries an
//! expected reward used by the exact solver, and optionally a discrete reward
//! distribution that the environment samples from.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

const STOCHASTIC_TOL: f64 = 1e-12;

/// One `(value, probability)` atom of a discrete reward distribution.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RewardAtom {
    pub value: f64,
    pub prob: f64,
}

/// Tabular MDP: dense kernel `P(x'|x,a)`, rewards `R(x,a)`, terminal mask and
/// initial-state distribution. Immutable after construction.
#[derive(Clone, Debug, PartialEq)]
pub struct FiniteMdp {
    n_states: usize,
    n_actions: usize,
    kernel: Vec<f64>,
    reward: Vec<f64>,
    reward_dist: Vec<Option<Vec<RewardAtom>>>,
    terminal: Vec<bool>,
    initial: Vec<f64>,
    // nonzero kernel entries per (x, a)
    support: Vec<Vec<(usize, f64)>>,
}

impl FiniteMdp {
    /// Validates and builds an MDP. `kernel` is indexed `[(x * n_actions + a) * n_states + x']`
    /// and `reward` is indexed `[x * n_actions + a]`.
    pub fn new(
        n_states: usize,
        n_actions: usize,
        kernel: Vec<f64>,
        reward: Vec<f64>,
        terminal: Vec<bool>,
        initial: Vec<f64>,
    ) -> Result<Self> {
        Self::with_reward_distributions(
            n_states,
            n_actions,
            kernel,
            reward,
            vec![None; n_states * n_actions],
            terminal,
            initial,
        )
    }

    pub fn with_reward_distributions(
        n_states: usize,
        n_actions: usize,
        kernel: Vec<f64>,
        reward: Vec<f64>,
        reward_dist: Vec<Option<Vec<RewardAtom>>>,
        terminal: Vec<bool>,
        initial: Vec<f64>,
    ) -> Result<Self> {
        if n_states == 0 || n_actions == 0 {
            return Err(Error::invalid("an MDP needs at least one state and one action"));
        }
        let pairs = n_states * n_actions;
        if kernel.len() != pairs * n_states
            || reward.len() != pairs
            || reward_dist.len() != pairs
            || terminal.len() != n_states
            || initial.len() != n_states
        {
            return Err(Error::invalid("MDP table sizes do not match n_states/n_actions"));
        }
        let mut support = Vec::with_capacity(pairs);
        for pair in 0..pairs {
            let row = &kernel[pair * n_states..(pair + 1) * n_states];
            if row.iter().any(|p| !p.is_finite() || *p < 0.0) {
                return Err(Error::invalid(format!("kernel row {pair} has a negative or non-finite entry")));
            }
            let total: f64 = row.iter().sum();
            if (total - 1.0).abs() > STOCHASTIC_TOL {
                return Err(Error::invalid(format!("kernel row {pair} sums to {total}")));
            }
            if !reward[pair].is_finite() {
                return Err(Error::invalid(format!("reward {pair} is not finite")));
            }
            if let Some(atoms) = &reward_dist[pair] {
                let mass: f64 = atoms.iter().map(|a| a.prob).sum();
                let mean: f64 = atoms.iter().map(|a| a.prob * a.value).sum();
                if atoms.is_empty()
                    || atoms.iter().any(|a| a.prob < 0.0 || !a.value.is_finite())
                    || (mass - 1.0).abs() > STOCHASTIC_TOL
                {
                    return Err(Error::invalid(format!("reward distribution {pair} is not a distribution")));
                }
                if (mean - reward[pair]).abs() > 1e-9 * (1.0 + mean.abs()) {
                    return Err(Error::invalid(format!(
                        "reward distribution {pair} has mean {mean}, table says {}",
                        reward[pair]
                    )));
                }
            }
            support.push(
                row.iter()
                    .enumerate()
                    .filter(|(_, p)| **p > 0.0)
                    .map(|(s, p)| (s, *p))
                    .collect(),
            );
        }
        for (s, is_terminal) in terminal.iter().enumerate() {
            if !is_terminal {
                continue;
            }
            for a in 0..n_actions {
                let pair = s * n_actions + a;
                let self_loop = kernel[pair * n_states + s] == 1.0;
                let zero_reward = reward[pair] == 0.0
                    && reward_dist[pair]
                        .as_ref()
                        .is_none_or(|atoms| atoms.iter().all(|at| at.prob == 0.0 || at.value == 0.0));
                if !self_loop || !zero_reward {
                    return Err(Error::invalid(format!(
                        "terminal state {s} must self-loop with reward 0 under every action"
                    )));
                }
            }
        }
        if initial.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return Err(Error::invalid("initial distribution has a negative or non-finite entry"));
        }
        let total: f64 = initial.iter().sum();
        if (total - 1.0).abs() > STOCHASTIC_TOL {
            return Err(Error::invalid(format!("initial distribution sums to {total}")));
        }
        if initial.iter().zip(&terminal).any(|(p, t)| *t && *p > 0.0) {
            return Err(Error::invalid("initial distribution puts mass on a terminal state"));
        }
        Ok(Self {
            n_states,
            n_actions,
            kernel,
            reward,
            reward_dist,
            terminal,
            initial,
            support,
        })
    }

    /// Random dense stochastic MDP with rewards uniform in `[-reward_scale, reward_scale]`,
    /// no terminal states and a uniform initial distribution.
    pub fn random(n_states: usize, n_actions: usize, reward_scale: f64, rng: &mut impl Rng) -> Result<Self> {
        let mut kernel = Vec::with_capacity(n_states * n_actions * n_states);
        for _ in 0..n_states * n_actions {
            let raw: Vec<f64> = (0..n_states).map(|_| rng.gen::<f64>() + 1e-3).collect();
            let total: f64 = raw.iter().sum();
            let mut row: Vec<f64> = raw.iter().map(|p| p / total).collect();
            // absorb rounding so the row sums to one within tolerance
            let err = 1.0 - row.iter().sum::<f64>();
            row[0] += err;
            kernel.extend(row);
        }
        let reward = (0..n_states * n_actions)
            .map(|_| rng.gen_range(-reward_scale..=reward_scale))
            .collect();
        Self::new(
            n_states,
            n_actions,
            kernel,
            reward,
            vec![false; n_states],
            vec![1.0 / n_states as f64; n_states],
        )
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn transition_prob(&self, state: usize, action: usize, next: usize) -> f64 {
        self.kernel[(state * self.n_actions + action) * self.n_states + next]
    }

    pub fn kernel_row(&self, state: usize, action: usize) -> &[f64] {
        let start = (state * self.n_actions + action) * self.n_states;
        &self.kernel[start..start + self.n_states]
    }

    /// Next states with nonzero probability.
    pub fn successors(&self, state: usize, action: usize) -> &[(usize, f64)] {
        &self.support[state * self.n_actions + action]
    }

    /// Expected reward `R(x, a)`.
    pub fn reward(&self, state: usize, action: usize) -> f64 {
        self.reward[state * self.n_actions + action]
    }

    pub fn reward_distribution(&self, state: usize, action: usize) -> Option<&[RewardAtom]> {
        self.reward_dist[state * self.n_actions + action].as_deref()
    }

    /// Whether `reward` can be emitted by `(state, action)`.
    pub fn reward_in_support(&self, state: usize, action: usize, reward: f64) -> bool {
        match self.reward_distribution(state, action) {
            Some(atoms) => atoms.iter().any(|a| a.prob > 0.0 && a.value == reward),
            None => self.reward(state, action) == reward,
        }
    }

    pub fn is_terminal(&self, state: usize) -> bool {
        self.terminal[state]
    }

    pub fn initial_distribution(&self) -> &[f64] {
        &self.initial
    }

    /// True when every kernel row and reward distribution is a point mass.
    pub fn is_deterministic(&self) -> bool {
        self.support.iter().all(|s| s.len() == 1)
            && self
                .reward_dist
                .iter()
                .flatten()
                .all(|atoms| atoms.iter().filter(|a| a.prob > 0.0).count() == 1)
    }

    /// Largest and smallest expected one-step rewards.
    pub fn reward_range(&self) -> (f64, f64) {
        self.reward
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), r| (lo.min(*r), hi.max(*r)))
    }

    /// One-hot encoding of a state id, the approximator's input features.
    pub fn features<T: Scalar>(&self, state: usize) -> Vec<T> {
        one_hot(state, self.n_states)
    }
}

pub fn one_hot<T: Scalar>(index: usize, len: usize) -> Vec<T> {
    let mut v = vec![T::zero(); len];
    v[index] = T::one();
    v
}

/// Maximum episode length before truncation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EpisodeCap {
    pub max_steps: usize,
}

impl EpisodeCap {
    pub fn new(max_steps: usize) -> Result<Self> {
        if max_steps == 0 {
            return Err(Error::invalid("episode cap must be at least 1"));
        }
        Ok(Self { max_steps })
    }
}

impl Default for EpisodeCap {
    fn default() -> Self {
        Self { max_steps: 1000 }
    }
}

/// Outcome of one environment step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EnvStep {
    pub next_state: usize,
    /// Raw, unclipped reward.
    pub reward: f64,
    /// A terminal state was entered.
    pub terminated: bool,
    /// The episode cap was hit without reaching a terminal state.
    pub truncated: bool,
    /// 1-based index of this step within the episode.
    pub step_index: usize,
}

impl EnvStep {
    pub fn done(&self) -> bool {
        self.terminated || self.truncated
    }
}

/// Episodic sampler over a shared [`FiniteMdp`] with private RNG state.
#[derive(Clone, Debug)]
pub struct Env {
    mdp: Arc<FiniteMdp>,
    cap: EpisodeCap,
    rng: ChaCha8Rng,
    state: usize,
    steps: usize,
    done: bool,
}

impl Env {
    /// The environment starts in the "done" state; call [`Env::reset`] first.
    pub fn new(mdp: Arc<FiniteMdp>, cap: EpisodeCap, seed: u64) -> Self {
        Self {
            mdp,
            cap,
            rng: ChaCha8Rng::seed_from_u64(seed),
            state: 0,
            steps: 0,
            done: true,
        }
    }

    pub fn mdp(&self) -> &Arc<FiniteMdp> {
        &self.mdp
    }

    pub fn cap(&self) -> EpisodeCap {
        self.cap
    }

    pub fn state(&self) -> usize {
        self.state
    }

    pub fn is_done(&self) -> bool {
        self.done
    }

    pub fn reseed(&mut self, seed: u64) {
        self.rng = ChaCha8Rng::seed_from_u64(seed);
    }

    /// Samples a start state and zeroes the step counter.
    pub fn reset(&mut self) -> usize {
        self.state = sample_index(self.mdp.initial_distribution(), &mut self.rng);
        self.steps = 0;
        self.done = false;
        self.state
    }

    pub fn step(&mut self, action: usize) -> Result<EnvStep> {
        if self.done {
            return Err(Error::Protocol("step called on a finished episode".into()));
        }
        if action >= self.mdp.n_actions() {
            return Err(Error::invalid(format!(
                "action {action} out of range for {} actions",
                self.mdp.n_actions()
            )));
        }
        let mdp = &self.mdp;
        let successors = mdp.successors(self.state, action);
        let next_state = if successors.len() == 1 {
            successors[0].0
        } else {
            let u: f64 = self.rng.gen();
            let mut acc = 0.0;
            let mut chosen = successors[successors.len() - 1].0;
            for &(s, p) in successors {
                acc += p;
                if u < acc {
                    chosen = s;
                    break;
                }
            }
            chosen
        };
        let reward = match mdp.reward_distribution(self.state, action) {
            Some(atoms) => {
                let u: f64 = self.rng.gen();
                let mut acc = 0.0;
                let mut value = atoms[atoms.len() - 1].value;
                for atom in atoms {
                    acc += atom.prob;
                    if u < acc {
                        value = atom.value;
                        break;
                    }
                }
                value
            }
            None => mdp.reward(self.state, action),
        };
        self.steps += 1;
        let terminated = mdp.is_terminal(next_state);
        let truncated = !terminated && self.steps >= self.cap.max_steps;
        self.state = next_state;
        self.done = terminated || truncated;
        Ok(EnvStep {
            next_state,
            reward,
            terminated,
            truncated,
            step_index: self.steps,
        })
    }
}

/// A recorded episode: `states` has one more entry than `actions` and `rewards`
/// (the final state). `terminated` is set when the final state is terminal.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Episode {
    pub states: Vec<usize>,
    pub actions: Vec<usize>,
    pub rewards: Vec<f64>,
    pub terminated: bool,
}

impl Episode {
    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    /// Undiscounted return.
    pub fn total_reward(&self) -> f64 {
        self.rewards.iter().sum()
    }
}

impl Env {
    /// Resets and runs one episode under `policy`, which maps a state to an action.
    pub fn run_episode(&mut self, mut policy: impl FnMut(usize) -> usize) -> Result<Episode> {
        let mut episode = Episode {
            states: vec![self.reset()],
            ..Default::default()
        };
        loop {
            let action = policy(self.state);
            let step = self.step(action)?;
            episode.actions.push(action);
            episode.rewards.push(step.reward);
            episode.states.push(step.next_state);
            if step.done() {
                episode.terminated = step.terminated;
                return Ok(episode);
            }
        }
    }
}

fn sample_index(probs: &[f64], rng: &mut impl Rng) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    let mut last = 0;
    for (i, p) in probs.iter().enumerate() {
        if *p <= 0.0 {
            continue;
        }
        last = i;
        acc += p;
        if u < acc {
            return i;
        }
    }
    last
}

/// Built-in environment families.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EnvSpec {
    /// Serpentine maze on a `width x height` grid. Walls separate consecutive rows
    /// except for one gap at alternating ends, so the only route from the top-left
    /// start to the goal visits every cell: `width * height - 1` steps. Entering the
    /// goal pays reward 1 and terminates.
    SparseGrid { width: usize, height: usize },
    /// `length` states in a line, the last one terminal. Action 0 steps back
    /// (staying put at 0), action 1 steps forward; only the final forward step pays 1.
    DelayedChain { length: usize },
    /// One state per frame. Actions: tap (1), strike (10), gamble (100 with
    /// probability `jackpot_prob`, else 0). Every action advances a frame.
    BowlingScale { frames: usize, jackpot_prob: f64 },
    /// Open grid with the goal in the far corner. With probability `slip` the move
    /// goes in a uniformly random direction instead. Any action taken on the goal
    /// cell collects reward 1 and ends the episode.
    WindyGrid { width: usize, height: usize, slip: f64 },
}

pub const GRID_ACTIONS: usize = 4;

/// Deterministic grid move: 0 up, 1 right, 2 down, 3 left. Off-grid moves stay put.
pub fn grid_move(width: usize, height: usize, cell: usize, action: usize) -> usize {
    let (row, col) = (cell / width, cell % width);
    match action {
        0 if row > 0 => cell - width,
        1 if col + 1 < width => cell + 1,
        2 if row + 1 < height => cell + width,
        3 if col > 0 => cell - 1,
        _ => cell,
    }
}

impl EnvSpec {
    pub fn name(&self) -> &'static str {
        match self {
            EnvSpec::SparseGrid { .. } => "sparse_grid",
            EnvSpec::DelayedChain { .. } => "delayed_chain",
            EnvSpec::BowlingScale { .. } => "bowling_scale",
            EnvSpec::WindyGrid { .. } => "windy_grid",
        }
    }

    pub fn build(&self) -> Result<FiniteMdp> {
        match *self {
            EnvSpec::SparseGrid { width, height } => sparse_grid(width, height),
            EnvSpec::DelayedChain { length } => delayed_chain(length),
            EnvSpec::BowlingScale { frames, jackpot_prob } => bowling_scale(frames, jackpot_prob),
            EnvSpec::WindyGrid { width, height, slip } => windy_grid(width, height, slip),
        }
    }
}

/// Builds the MDP named by `spec`.
pub fn make_env(spec: &EnvSpec) -> Result<FiniteMdp> {
    spec.build()
}

impl fmt::Display for EnvSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EnvSpec::SparseGrid { width, height } => write!(f, "sparse_grid:{width}x{height}"),
            EnvSpec::DelayedChain { length } => write!(f, "delayed_chain:{length}"),
            EnvSpec::BowlingScale { frames, jackpot_prob } => write!(f, "bowling_scale:{frames}:{jackpot_prob}"),
            EnvSpec::WindyGrid { width, height, slip } => write!(f, "windy_grid:{width}x{height}:{slip}"),
        }
    }
}

impl FromStr for EnvSpec {
    type Err = Error;

    /// Parses the compact form written by `Display`, e.g. `sparse_grid:8x8`.
    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Config(format!("unrecognized env spec `{s}`"));
        let dims = |d: &str| -> Result<(usize, usize)> {
            let (w, h) = d.split_once('x').ok_or_else(bad)?;
            Ok((w.parse().map_err(|_| bad())?, h.parse().map_err(|_| bad())?))
        };
        let parts: Vec<&str> = s.trim().split(':').collect();
        match parts.as_slice() {
            ["sparse_grid", d] => {
                let (width, height) = dims(d)?;
                Ok(EnvSpec::SparseGrid { width, height })
            }
            ["delayed_chain", n] => Ok(EnvSpec::DelayedChain {
                length: n.parse().map_err(|_| bad())?,
            }),
            ["bowling_scale", n, p] => Ok(EnvSpec::BowlingScale {
                frames: n.parse().map_err(|_| bad())?,
                jackpot_prob: p.parse().map_err(|_| bad())?,
            }),
            ["windy_grid", d, p] => {
                let (width, height) = dims(d)?;
                Ok(EnvSpec::WindyGrid {
                    width,
                    height,
                    slip: p.parse().map_err(|_| bad())?,
                })
            }
            _ => Err(bad()),
        }
    }
}

struct TableBuilder {
    n_states: usize,
    n_actions: usize,
    kernel: Vec<f64>,
    reward: Vec<f64>,
    reward_dist: Vec<Option<Vec<RewardAtom>>>,
    terminal: Vec<bool>,
}

impl TableBuilder {
    fn new(n_states: usize, n_actions: usize) -> Self {
        Self {
            n_states,
            n_actions,
            kernel: vec![0.0; n_states * n_actions * n_states],
            reward: vec![0.0; n_states * n_actions],
            reward_dist: vec![None; n_states * n_actions],
            terminal: vec![false; n_states],
        }
    }

    fn add(&mut self, s: usize, a: usize, next: usize, p: f64) {
        self.kernel[(s * self.n_actions + a) * self.n_states + next] += p;
    }

    fn absorbing(&mut self, s: usize) {
        self.terminal[s] = true;
        for a in 0..self.n_actions {
            self.add(s, a, s, 1.0);
        }
    }

    fn finish(self, start: usize) -> Result<FiniteMdp> {
        let mut initial = vec![0.0; self.n_states];
        initial[start] = 1.0;
        FiniteMdp::with_reward_distributions(
            self.n_states,
            self.n_actions,
            self.kernel,
            self.reward,
            self.reward_dist,
            self.terminal,
            initial,
        )
    }
}

/// Cells of the serpentine route in visiting order.
pub fn serpentine_route(width: usize, height: usize) -> Vec<usize> {
    let mut route = Vec::with_capacity(width * height);
    for row in 0..height {
        if row % 2 == 0 {
            route.extend((0..width).map(|c| row * width + c));
        } else {
            route.extend((0..width).rev().map(|c| row * width + c));
        }
    }
    route
}

fn sparse_grid(width: usize, height: usize) -> Result<FiniteMdp> {
    if !(2..=64).contains(&width) || !(1..=64).contains(&height) {
        return Err(Error::invalid(format!(
            "sparse_grid needs 2 <= width <= 64 and 1 <= height <= 64, got {width}x{height}"
        )));
    }
    let n = width * height;
    let goal = *serpentine_route(width, height).last().expect("grid is nonempty");
    let mut t = TableBuilder::new(n, GRID_ACTIONS);
    for cell in 0..n {
        if cell == goal {
            t.absorbing(cell);
            continue;
        }
        let (row, col) = (cell / width, cell % width);
        for a in 0..GRID_ACTIONS {
            let mut next = grid_move(width, height, cell, a);
            // vertical moves pass only through the gap between two rows
            let gap_below = if row % 2 == 0 { width - 1 } else { 0 };
            let gap_above = if row == 0 {
                usize::MAX
            } else if (row - 1) % 2 == 0 {
                width - 1
            } else {
                0
            };
            if (a == 2 && col != gap_below) || (a == 0 && col != gap_above) {
                next = cell;
            }
            t.add(cell, a, next, 1.0);
            if next == goal {
                t.reward[cell * GRID_ACTIONS + a] = 1.0;
            }
        }
    }
    t.finish(0)
}

fn delayed_chain(length: usize) -> Result<FiniteMdp> {
    if !(2..=100_000).contains(&length) {
        return Err(Error::invalid(format!("delayed_chain needs 2 <= length <= 100000, got {length}")));
    }
    let mut t = TableBuilder::new(length, 2);
    let goal = length - 1;
    for s in 0..goal {
        t.add(s, 0, s.saturating_sub(1), 1.0);
        t.add(s, 1, s + 1, 1.0);
    }
    t.reward[(goal - 1) * 2 + 1] = 1.0;
    t.absorbing(goal);
    t.finish(0)
}

fn bowling_scale(frames: usize, jackpot_prob: f64) -> Result<FiniteMdp> {
    if !(1..=10_000).contains(&frames) || !(0.0..=1.0).contains(&jackpot_prob) {
        return Err(Error::invalid(format!(
            "bowling_scale needs 1 <= frames <= 10000 and jackpot_prob in [0, 1], got {frames}, {jackpot_prob}"
        )));
    }
    let mut t = TableBuilder::new(frames + 1, 3);
    for s in 0..frames {
        for a in 0..3 {
            t.add(s, a, s + 1, 1.0);
        }
        t.reward[s * 3] = 1.0;
        t.reward[s * 3 + 1] = 10.0;
        t.reward[s * 3 + 2] = 100.0 * jackpot_prob;
        if jackpot_prob > 0.0 && jackpot_prob < 1.0 {
            t.reward_dist[s * 3 + 2] = Some(vec![
                RewardAtom { value: 100.0, prob: jackpot_prob },
                RewardAtom { value: 0.0, prob: 1.0 - jackpot_prob },
            ]);
        }
    }
    t.absorbing(frames);
    t.finish(0)
}

fn windy_grid(width: usize, height: usize, slip: f64) -> Result<FiniteMdp> {
    if !(2..=64).contains(&width) || !(2..=64).contains(&height) || !(0.0..=1.0).contains(&slip) {
        return Err(Error::invalid(format!(
            "windy_grid needs 2 <= width, height <= 64 and slip in [0, 1], got {width}x{height}, {slip}"
        )));
    }
    let cells = width * height;
    let goal = cells - 1;
    let terminal = cells;
    let mut t = TableBuilder::new(cells + 1, GRID_ACTIONS);
    for cell in 0..cells {
        for a in 0..GRID_ACTIONS {
            if cell == goal {
                t.add(cell, a, terminal, 1.0);
                t.reward[cell * GRID_ACTIONS + a] = 1.0;
                continue;
            }
            t.add(cell, a, grid_move(width, height, cell, a), 1.0 - slip);
            for d in 0..GRID_ACTIONS {
                if slip > 0.0 {
                    t.add(cell, a, grid_move(width, height, cell, d), slip / GRID_ACTIONS as f64);
                }
            }
        }
    }
    // drop zero-probability entries left by slip = 0 or slip = 1
    t.kernel.iter_mut().for_each(|p| {
        if *p < 1e-300 {
            *p = 0.0
        }
    });
    t.absorbing(terminal);
    t.finish(0)
}
