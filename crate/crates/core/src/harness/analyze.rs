//! Operator analysis: fixed-point identities, empirical contraction ratios and
//! Lipschitz sweeps, written out as one JSON report.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mdp::{make_env, EnvSpec, FiniteMdp};
use crate::solver::verify_fixed_point;
use crate::transform::{empirical_contraction_ratio, lipschitz_sweep, ContractionProbe, LipschitzBounds, TransformParams, ValueTransform};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ContractionConfig {
    pub random_mdps: usize,
    pub max_states: usize,
    pub max_actions: usize,
    pub gammas: Vec<f64>,
    pub trials: usize,
    pub value_range: f64,
    pub seed: u64,
}

impl Default for ContractionConfig {
    fn default() -> Self {
        Self {
            random_mdps: 50,
            max_states: 20,
            max_actions: 4,
            gammas: vec![0.005, 0.015, 0.019, 0.1, 0.5, 0.9],
            trials: 1000,
            value_range: 10.0,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LipschitzConfig {
    pub range: f64,
    pub samples: usize,
    pub seed: u64,
}

impl Default for LipschitzConfig {
    fn default() -> Self {
        Self {
            range: 1e6,
            samples: 200_000,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalyzeConfig {
    /// Environments in compact form, e.g. `delayed_chain:200`.
    pub envs: Vec<String>,
    pub gammas: Vec<f64>,
    pub epsilon: f64,
    /// Value-iteration stopping tolerance.
    pub tol: f64,
    /// Largest sup-norm distance accepted for the fixed-point identities.
    pub pass_tol: f64,
    /// Slope of the linear transform hook.
    pub linear_alpha: f64,
    pub contraction: ContractionConfig,
    pub lipschitz: LipschitzConfig,
}

impl Default for AnalyzeConfig {
    fn default() -> Self {
        Self {
            envs: ["sparse_grid:8x8", "delayed_chain:200", "sparse_grid:5x5", "delayed_chain:20", "windy_grid:6x6:0"]
                .map(String::from)
                .to_vec(),
            gammas: vec![0.9, 0.99, 0.999],
            epsilon: 0.01,
            tol: 1e-12,
            pass_tol: 1e-8,
            linear_alpha: 2.0,
            contraction: ContractionConfig::default(),
            lipschitz: LipschitzConfig::default(),
        }
    }
}

impl AnalyzeConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FixedPointEntry {
    pub env: String,
    pub gamma: f64,
    pub transform: String,
    pub sup_distance: f64,
    pub argmax_agreement: f64,
    pub converged: bool,
    pub pass: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContractionEntry {
    pub gamma: f64,
    /// `gamma * L_h * L_h_inv`.
    pub bound: f64,
    pub below_threshold: bool,
    pub mdps: usize,
    pub max_ratio: f64,
    pub pass: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LipschitzEntry {
    pub max_slope: f64,
    pub bound: f64,
    pub max_slope_inverse: f64,
    pub bound_inverse: f64,
    pub pass: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OperatorReport {
    pub epsilon: f64,
    pub bounds: LipschitzBounds,
    pub fixed_point: Vec<FixedPointEntry>,
    /// Environments skipped by the nonlinear fixed-point check (stochastic).
    pub skipped: Vec<String>,
    pub contraction: Vec<ContractionEntry>,
    pub lipschitz: LipschitzEntry,
    pub all_pass: bool,
}

fn fixed_point_entry(env: &str, mdp: &FiniteMdp, gamma: f64, transform: ValueTransform, cfg: &AnalyzeConfig) -> Result<FixedPointEntry> {
    let r = verify_fixed_point(mdp, gamma, &transform, cfg.tol)?;
    let name = match transform {
        ValueTransform::Sqrt(p) => format!("sqrt(eps={})", p.epsilon()),
        ValueTransform::Identity => "identity".into(),
        ValueTransform::Linear { alpha } => format!("linear({alpha})"),
    };
    Ok(FixedPointEntry {
        env: env.to_string(),
        gamma,
        transform: name,
        sup_distance: r.sup_distance,
        argmax_agreement: r.argmax_agreement,
        converged: r.converged,
        pass: r.converged && r.sup_distance < cfg.pass_tol && r.argmax_agreement == 1.0,
    })
}

/// Random stochastic MDPs for the contraction probe.
pub fn random_mdps(cfg: &ContractionConfig) -> Result<Vec<FiniteMdp>> {
    if cfg.max_states < 1 || cfg.max_actions < 1 {
        return Err(Error::Config("random MDPs need at least one state and action".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    (0..cfg.random_mdps)
        .map(|_| {
            let ns = rng.gen_range(1..=cfg.max_states);
            let na = rng.gen_range(1..=cfg.max_actions);
            FiniteMdp::random(ns, na, 10.0, &mut rng)
        })
        .collect()
}

pub fn analyze_operator(cfg: &AnalyzeConfig) -> Result<OperatorReport> {
    let params = TransformParams::new(cfg.epsilon)?;
    let sqrt = ValueTransform::Sqrt(params);
    let linear = ValueTransform::linear(cfg.linear_alpha)?;
    let bounds = params.lipschitz();

    let mut fixed_point = Vec::new();
    let mut skipped = Vec::new();
    for env in &cfg.envs {
        let spec: EnvSpec = env.parse().map_err(|e: Error| Error::Config(e.to_string()))?;
        let mdp = make_env(&spec)?;
        for &gamma in &cfg.gammas {
            if mdp.is_deterministic() {
                fixed_point.push(fixed_point_entry(env, &mdp, gamma, sqrt, cfg)?);
            } else if !skipped.contains(env) {
                skipped.push(env.clone());
            }
            fixed_point.push(fixed_point_entry(env, &mdp, gamma, linear, cfg)?);
        }
    }

    let mdps = random_mdps(&cfg.contraction)?;
    let mut contraction = Vec::new();
    for &gamma in &cfg.contraction.gammas {
        let bound = gamma * bounds.l_h * bounds.l_h_inv;
        let below = gamma < bounds.contraction_gamma_max;
        let mut max_ratio = 0.0f64;
        for (i, mdp) in mdps.iter().enumerate() {
            let probe = ContractionProbe {
                trials: cfg.contraction.trials,
                value_range: cfg.contraction.value_range,
                seed: cfg.contraction.seed.wrapping_add(i as u64),
            };
            max_ratio = max_ratio.max(empirical_contraction_ratio(mdp, gamma, &sqrt, &probe)?);
        }
        contraction.push(ContractionEntry {
            gamma,
            bound,
            below_threshold: below,
            mdps: mdps.len(),
            max_ratio,
            pass: max_ratio <= bound + 1e-12 && (!below || max_ratio < 1.0),
        });
    }

    let sweep = lipschitz_sweep(&sqrt, cfg.lipschitz.range, cfg.lipschitz.samples, cfg.lipschitz.seed)?;
    let lipschitz = LipschitzEntry {
        max_slope: sweep.max_slope,
        bound: bounds.l_h,
        max_slope_inverse: sweep.max_slope_inverse,
        bound_inverse: bounds.l_h_inv,
        pass: sweep.max_slope <= bounds.l_h + 1e-9 && sweep.max_slope_inverse <= bounds.l_h_inv + 1e-9,
    };

    let all_pass = fixed_point.iter().all(|e| e.pass) && contraction.iter().all(|e| e.pass) && lipschitz.pass;
    Ok(OperatorReport {
        epsilon: cfg.epsilon,
        bounds,
        fixed_point,
        skipped,
        contraction,
        lipschitz,
        all_pass,
    })
}
