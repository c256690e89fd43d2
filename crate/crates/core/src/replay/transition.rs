use serde::{Deserialize, Serialize};

use crate::mdp::Episode;

pub const DEFAULT_HORIZONS: [usize; 2] = [1, 10];

/// An n-step transition `(x_t, a_t, R_n(t), x_{t+k})`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub state: usize,
    pub action: usize,
    /// `sum_{j<k} gamma^j r_{t+j+1}`.
    pub n_step_reward: f64,
    pub bootstrap_state: usize,
    /// Nominal horizon `n`.
    pub horizon: usize,
    /// Steps actually covered, `k <= n`; smaller than `n` only at the end of an episode.
    pub steps: usize,
    /// A terminal state was reached within the window: the bootstrap value is 0.
    pub terminal_within_horizon: bool,
    pub is_expert: bool,
    /// Part of the highest-return expert episode; gates the imitation loss.
    pub is_best_episode: bool,
    pub priority: f64,
}

/// Builds an `n`-step transition for every time step and every horizon, in
/// time-major order (`t = 0` for each horizon, then `t = 1`, ...).
///
/// Windows running past the end of the episode are cut at the last step. When
/// the episode ended in a terminal state such windows are marked
/// `terminal_within_horizon`; after a truncation they bootstrap from the final
/// state with `gamma^k`.
pub fn assemble_transitions(episode: &Episode, gamma: f64, horizons: &[usize]) -> Vec<Transition> {
    let len = episode.len();
    debug_assert_eq!(episode.states.len(), len + 1);
    let mut out = Vec::with_capacity(len * horizons.len());
    for t in 0..len {
        for &n in horizons {
            let k = n.min(len - t);
            let mut reward = 0.0;
            let mut discount = 1.0;
            for j in 0..k {
                reward += discount * episode.rewards[t + j];
                discount *= gamma;
            }
            out.push(Transition {
                state: episode.states[t],
                action: episode.actions[t],
                n_step_reward: reward,
                bootstrap_state: episode.states[t + k],
                horizon: n,
                steps: k,
                terminal_within_horizon: episode.terminated && t + k == len,
                is_expert: false,
                is_best_episode: false,
                priority: 0.0,
            });
        }
    }
    out
}
