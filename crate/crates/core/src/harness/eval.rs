use std::path::Path;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::actor::evaluate_greedy;
use crate::demos::oracle_policy;
use crate::error::{Error, Result};
use crate::mdp::{make_env, Env, EnvSpec, EpisodeCap, FiniteMdp};
use crate::network::{load_checkpoint, Network};
use crate::scalar::Scalar;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub episodes: usize,
    pub mean: f64,
    pub median: f64,
    pub min: f64,
    pub max: f64,
    pub returns: Vec<f64>,
    /// `(mean - random) / (reference - random) * 100` when a reference score is known.
    pub normalized: Option<f64>,
}

impl EvalReport {
    pub fn from_returns(returns: Vec<f64>) -> Result<Self> {
        if returns.is_empty() {
            return Err(Error::invalid("no evaluation episodes"));
        }
        let mut sorted = returns.clone();
        sorted.sort_by(f64::total_cmp);
        let n = sorted.len();
        let median = if n % 2 == 1 {
            sorted[n / 2]
        } else {
            0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
        };
        Ok(Self {
            episodes: n,
            mean: returns.iter().sum::<f64>() / n as f64,
            median,
            min: sorted[0],
            max: sorted[n - 1],
            returns,
            normalized: None,
        })
    }
}

pub fn normalized_score(score: f64, random: f64, reference: f64) -> Result<f64> {
    if reference == random {
        return Err(Error::invalid("reference and random scores coincide"));
    }
    Ok((score - random) / (reference - random) * 100.0)
}

/// Returns of a uniformly random policy.
pub fn random_policy_returns(mdp: Arc<FiniteMdp>, cap: EpisodeCap, episodes: usize, seed: u64) -> Result<Vec<f64>> {
    let n = mdp.n_actions();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xa11ce);
    let mut env = Env::new(mdp, cap, seed);
    (0..episodes)
        .map(|_| Ok(env.run_episode(|_| rng.gen_range(0..n))?.total_reward()))
        .collect()
}

/// Returns of the exact optimal policy at discount `gamma`.
pub fn oracle_returns(mdp: Arc<FiniteMdp>, gamma: f64, cap: EpisodeCap, episodes: usize, seed: u64) -> Result<Vec<f64>> {
    let policy = oracle_policy(&mdp, gamma)?;
    let mut env = Env::new(mdp, cap, seed);
    (0..episodes).map(|_| Ok(env.run_episode(|s| policy[s])?.total_reward())).collect()
}

pub fn evaluate_network<T: Scalar>(net: &Network<T>, mdp: Arc<FiniteMdp>, cap: EpisodeCap, episodes: usize, seed: u64) -> Result<EvalReport> {
    EvalReport::from_returns(evaluate_greedy(net, mdp, cap, episodes, seed)?)
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalRequest {
    /// Defaults to the environment recorded in the checkpoint.
    pub env: Option<EnvSpec>,
    pub episodes: usize,
    pub seed: u64,
    pub cap: EpisodeCap,
    pub reference: Option<f64>,
    /// Random-policy score; estimated with the same seed when absent.
    pub random: Option<f64>,
}

pub fn cmd_eval(checkpoint: &Path, req: &EvalRequest) -> Result<EvalReport> {
    if req.episodes == 0 {
        return Err(Error::invalid("eval needs at least one episode"));
    }
    let ck = load_checkpoint(checkpoint)?;
    let spec = match (&req.env, &ck.env) {
        (Some(e), _) => *e,
        (None, Some(e)) => e.parse()?,
        (None, None) => return Err(Error::invalid("checkpoint names no environment; pass one explicitly")),
    };
    let mdp = Arc::new(make_env(&spec)?);
    let net = ck.network::<f64>()?;
    let mut report = evaluate_network(&net, mdp.clone(), req.cap, req.episodes, req.seed)?;
    if let Some(reference) = req.reference {
        let random = match req.random {
            Some(r) => r,
            None => EvalReport::from_returns(random_policy_returns(mdp, req.cap, req.episodes, req.seed)?)?.mean,
        };
        report.normalized = Some(normalized_score(report.mean, random, reference)?);
    }
    Ok(report)
}
