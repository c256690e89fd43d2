//! Exact value iteration under the standard and transformed Bellman operators.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mdp::FiniteMdp;
use crate::qtable::QTable;
use crate::scalar::Scalar;
use crate::transform::{apply_operator, ValueTransform};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolveOptions {
    pub gamma: f64,
    pub transform: ValueTransform,
    /// Stop once the sup-norm change between successive iterates drops below this.
    pub tol: f64,
    pub max_sweeps: usize,
    /// Required to run a nonlinear transform on a stochastic MDP, where no fixed
    /// point identity is guaranteed.
    pub allow_stochastic_transformed: bool,
}

impl SolveOptions {
    pub fn standard(gamma: f64) -> Self {
        Self {
            gamma,
            transform: ValueTransform::Identity,
            tol: 1e-12,
            max_sweeps: 1_000_000,
            allow_stochastic_transformed: false,
        }
    }

    pub fn transformed(gamma: f64, transform: ValueTransform) -> Self {
        Self {
            transform,
            ..Self::standard(gamma)
        }
    }
}

/// Result of value iteration. Non-convergence is reported, not raised.
#[derive(Clone, Debug, PartialEq)]
pub struct Solution<T> {
    pub q: QTable<T>,
    pub sweeps: usize,
    pub converged: bool,
    /// Sup-norm change of every sweep, in order.
    pub residuals: Vec<T>,
}

impl<T: Scalar> Solution<T> {
    pub fn last_residual(&self) -> T {
        self.residuals.last().copied().unwrap_or_else(T::zero)
    }
}

/// Iterates `Q_k = T Q_{k-1}` (or `T_h`) from `Q_0 = 0`.
pub fn value_iterate<T: Scalar>(mdp: &FiniteMdp, opts: &SolveOptions) -> Result<Solution<T>> {
    if !(opts.tol > 0.0) {
        return Err(Error::invalid(format!("tolerance must be positive, got {}", opts.tol)));
    }
    if !(0.0..1.0).contains(&opts.gamma) {
        return Err(Error::invalid(format!("gamma must lie in [0, 1), got {}", opts.gamma)));
    }
    let nonlinear = matches!(opts.transform, ValueTransform::Sqrt(_));
    if nonlinear && !mdp.is_deterministic() && !opts.allow_stochastic_transformed {
        return Err(Error::invalid(
            "transformed value iteration on a stochastic MDP needs allow_stochastic_transformed",
        ));
    }
    let tol = T::of(opts.tol);
    let mut q = QTable::zeros(mdp.n_states(), mdp.n_actions());
    let mut residuals = Vec::new();
    for sweep in 1..=opts.max_sweeps {
        let next = apply_operator(&q, mdp, opts.gamma, &opts.transform)?;
        let residual = next.sup_distance(&q)?;
        residuals.push(residual);
        q = next;
        if residual < tol {
            return Ok(Solution {
                q,
                sweeps: sweep,
                converged: true,
                residuals,
            });
        }
    }
    Ok(Solution {
        q,
        sweeps: opts.max_sweeps,
        converged: false,
        residuals,
    })
}

/// Greedy action per state, lowest index on ties.
pub fn greedy_policy<T: Scalar>(q: &QTable<T>) -> Vec<usize> {
    (0..q.n_states()).map(|s| q.argmax(s)).collect()
}

/// Fraction of states on which two policies pick the same action.
pub fn policy_agreement(a: &[usize], b: &[usize]) -> f64 {
    if a.is_empty() {
        return 1.0;
    }
    a.iter().zip(b).filter(|(x, y)| x == y).count() as f64 / a.len() as f64
}

/// Fraction of states where `policy` picks an action within `tol` of the best
/// value in `q`. Unlike [`policy_agreement`], ties count as agreement.
pub fn optimal_fraction(q: &QTable<f64>, policy: &[usize], tol: f64) -> f64 {
    if policy.is_empty() {
        return 1.0;
    }
    let hits = policy
        .iter()
        .enumerate()
        .filter(|&(s, &a)| {
            let row = q.row(s);
            let best = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            row[a] >= best - tol * best.abs().max(1.0)
        })
        .count();
    hits as f64 / policy.len() as f64
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FixedPointReport {
    /// `||Q_h - h o Q*||_inf` between the transformed fixed point and the mapped standard one.
    pub sup_distance: f64,
    /// Fraction of states whose transformed greedy action is optimal under `Q*`.
    pub argmax_agreement: f64,
    pub standard_sweeps: usize,
    pub transformed_sweeps: usize,
    pub converged: bool,
}

/// Checks that transformed value iteration lands on `h o Q*`.
///
/// A linear transform is accepted on any MDP; a nonlinear one only on a
/// deterministic MDP.
pub fn verify_fixed_point(mdp: &FiniteMdp, gamma: f64, transform: &ValueTransform, tol: f64) -> Result<FixedPointReport> {
    if matches!(transform, ValueTransform::Sqrt(_)) && !mdp.is_deterministic() {
        return Err(Error::invalid(
            "the fixed point identity for a nonlinear transform needs a deterministic MDP",
        ));
    }
    let standard = value_iterate::<f64>(
        mdp,
        &SolveOptions {
            tol,
            ..SolveOptions::standard(gamma)
        },
    )?;
    let transformed = value_iterate::<f64>(
        mdp,
        &SolveOptions {
            tol,
            ..SolveOptions::transformed(gamma, *transform)
        },
    )?;
    let mapped = standard.q.try_map(|v| transform.forward(v))?;
    let sup_distance = transformed.q.sup_distance(&mapped)?;
    // near-ties between actions flip under rounding, so judge the action by its Q* value
    let argmax_agreement = optimal_fraction(&standard.q, &greedy_policy(&transformed.q), 1e-9);
    Ok(FixedPointReport {
        sup_distance,
        argmax_agreement,
        standard_sweeps: standard.sweeps,
        transformed_sweeps: transformed.sweeps,
        converged: standard.converged && transformed.converged,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::{make_env, EnvSpec};
    use crate::transform::{h, TransformParams};

    fn chain(length: usize) -> FiniteMdp {
        make_env(&EnvSpec::DelayedChain { length }).unwrap()
    }

    #[test]
    fn zero_reward_mdp_converges_in_one_sweep() {
        let mdp = FiniteMdp::new(2, 2, vec![0.5; 8], vec![0.0; 4], vec![false; 2], vec![1.0, 0.0]).unwrap();
        let sol = value_iterate::<f64>(&mdp, &SolveOptions::standard(0.9)).unwrap();
        assert!(sol.converged);
        assert_eq!(sol.sweeps, 1);
        assert!(sol.q.values().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn chain_values_by_hand() {
        let sol = value_iterate::<f64>(&chain(3), &SolveOptions::standard(0.5)).unwrap();
        assert!(sol.converged);
        assert_eq!(sol.q.get(0, 1), 0.5);
        assert_eq!(sol.q.get(1, 1), 1.0);
        // back at 0 stays at 0, worth gamma * V(0)
        assert_eq!(sol.q.get(0, 0), 0.25);
        assert_eq!(greedy_policy(&sol.q)[..2], [1, 1]);
    }

    #[test]
    fn transformed_chain_is_h_of_q_star() {
        let p = TransformParams::default();
        let mdp = chain(3);
        let std = value_iterate::<f64>(&mdp, &SolveOptions::standard(0.5)).unwrap();
        let tr = value_iterate::<f64>(&mdp, &SolveOptions::transformed(0.5, ValueTransform::Sqrt(p))).unwrap();
        for s in 0..3 {
            for a in 0..2 {
                assert!((tr.q.get(s, a) - h(std.q.get(s, a), &p).unwrap()).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn bad_options_are_rejected() {
        let mdp = chain(3);
        let mut opts = SolveOptions::standard(1.0);
        assert!(value_iterate::<f64>(&mdp, &opts).is_err());
        opts.gamma = 0.9;
        opts.tol = 0.0;
        assert!(value_iterate::<f64>(&mdp, &opts).is_err());
    }

    #[test]
    fn stochastic_transformed_needs_acknowledgement() {
        let mdp = make_env(&EnvSpec::WindyGrid { width: 3, height: 3, slip: 0.2 }).unwrap();
        let mut opts = SolveOptions::transformed(0.9, ValueTransform::default());
        assert!(value_iterate::<f64>(&mdp, &opts).is_err());
        opts.allow_stochastic_transformed = true;
        assert!(value_iterate::<f64>(&mdp, &opts).is_ok());
        assert!(verify_fixed_point(&mdp, 0.9, &ValueTransform::default(), 1e-10).is_err());
    }

    #[test]
    fn non_convergence_is_a_result() {
        let mut opts = SolveOptions::standard(0.99);
        opts.max_sweeps = 3;
        let sol = value_iterate::<f64>(&chain(50), &opts).unwrap();
        assert!(!sol.converged);
        assert_eq!(sol.sweeps, 3);
        assert_eq!(sol.residuals.len(), 3);
    }

    #[test]
    fn residuals_shrink_by_at_least_gamma() {
        let mdp = make_env(&EnvSpec::WindyGrid { width: 4, height: 4, slip: 0.3 }).unwrap();
        let gamma = 0.8;
        let sol = value_iterate::<f64>(&mdp, &SolveOptions::standard(gamma)).unwrap();
        for w in sol.residuals.windows(2) {
            assert!(w[1] <= gamma * w[0] + 1e-15, "{} then {}", w[0], w[1]);
        }
    }

    #[test]
    fn greedy_policy_ties_and_unique_maxima() {
        let q = QTable::from_values(2, 2, vec![1.0, 1.0, 0.0, 3.0]).unwrap();
        assert_eq!(greedy_policy(&q), vec![0, 1]);
    }

    #[test]
    fn chain_policy_is_forward() {
        let sol = value_iterate::<f64>(&chain(20), &SolveOptions::standard(0.9)).unwrap();
        let policy = greedy_policy(&sol.q);
        assert!(policy[..19].iter().all(|&a| a == 1));
    }

    #[test]
    fn fixed_point_on_small_grid_and_linear_hook() {
        let grid = make_env(&EnvSpec::SparseGrid { width: 5, height: 5 }).unwrap();
        let report = verify_fixed_point(&grid, 0.9, &ValueTransform::default(), 1e-12).unwrap();
        assert!(report.sup_distance < 1e-10, "{report:?}");
        assert_eq!(report.argmax_agreement, 1.0);

        let linear = ValueTransform::linear(2.0).unwrap();
        let report = verify_fixed_point(&grid, 0.9, &linear, 1e-12).unwrap();
        assert!(report.sup_distance < 1e-10);
        // the linear hook also holds on stochastic MDPs
        let windy = make_env(&EnvSpec::WindyGrid { width: 3, height: 3, slip: 0.3 }).unwrap();
        assert!(verify_fixed_point(&windy, 0.9, &linear, 1e-12).unwrap().sup_distance < 1e-10);
    }

    #[test]
    fn trivial_single_state_mdp() {
        let mdp = FiniteMdp::new(1, 1, vec![1.0], vec![0.0], vec![false], vec![1.0]).unwrap();
        let report = verify_fixed_point(&mdp, 0.9, &ValueTransform::default(), 1e-12).unwrap();
        assert_eq!(report.sup_distance, 0.0);
        assert_eq!(report.argmax_agreement, 1.0);
    }
}
