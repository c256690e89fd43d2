//! The value transform `h(z) = sign(z)(sqrt(|z| + 1) - 1) + eps * z`, its closed-form
//! inverse, the transformed Bellman operator on tabular Q-functions, and empirical
//! contraction / Lipschitz probes.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mdp::FiniteMdp;
use crate::qtable::QTable;
use crate::scalar::Scalar;

/// Inputs with larger magnitude are rejected: `h_inv` squares its intermediate value.
pub const INPUT_CAP: f64 = 1e12;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawParams", into = "RawParams")]
pub struct TransformParams {
    epsilon: f64,
}

#[derive(Serialize, Deserialize)]
struct RawParams {
    epsilon: f64,
}

impl TryFrom<RawParams> for TransformParams {
    type Error = Error;
    fn try_from(raw: RawParams) -> Result<Self> {
        Self::new(raw.epsilon)
    }
}

impl From<TransformParams> for RawParams {
    fn from(p: TransformParams) -> Self {
        RawParams { epsilon: p.epsilon }
    }
}

impl TransformParams {
    pub fn new(epsilon: f64) -> Result<Self> {
        if !(epsilon.is_finite() && epsilon > 0.0) {
            return Err(Error::invalid(format!("epsilon must be positive and finite, got {epsilon}")));
        }
        Ok(Self { epsilon })
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn lipschitz(&self) -> LipschitzBounds {
        LipschitzBounds::new(0.5 + self.epsilon, 1.0 / self.epsilon)
    }
}

impl Default for TransformParams {
    fn default() -> Self {
        Self { epsilon: 0.01 }
    }
}

/// Lipschitz constants of a transform and its inverse, and the discount below
/// which the transformed operator is guaranteed to contract.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LipschitzBounds {
    pub l_h: f64,
    pub l_h_inv: f64,
    pub contraction_gamma_max: f64,
}

impl LipschitzBounds {
    fn new(l_h: f64, l_h_inv: f64) -> Self {
        Self {
            l_h,
            l_h_inv,
            contraction_gamma_max: 1.0 / (l_h * l_h_inv),
        }
    }
}

fn check_input<T: Scalar>(x: T, what: &str) -> Result<()> {
    if !x.is_finite() {
        return Err(Error::invalid(format!("{what} input is not finite")));
    }
    if x.abs().as_f64() > INPUT_CAP {
        return Err(Error::invalid(format!("{what} input {x} exceeds the range cap {INPUT_CAP:e}")));
    }
    Ok(())
}

/// `h(z) = sign(z)(sqrt(|z| + 1) - 1) + eps * z`.
pub fn h<T: Scalar>(z: T, params: &TransformParams) -> Result<T> {
    check_input(z, "h")?;
    Ok(h_unchecked(z, T::of(params.epsilon)))
}

#[inline]
fn h_unchecked<T: Scalar>(z: T, eps: T) -> T {
    let a = z.abs();
    // sqrt(a + 1) - 1 without cancellation near zero
    let compressed = a / ((a + T::one()).sqrt() + T::one());
    compressed.copysign(z) + eps * z
}

/// Closed-form inverse of [`h`].
pub fn h_inv<T: Scalar>(y: T, params: &TransformParams) -> Result<T> {
    check_input(y, "h_inv")?;
    Ok(h_inv_unchecked(y, T::of(params.epsilon)))
}

#[inline]
fn h_inv_unchecked<T: Scalar>(y: T, eps: T) -> T {
    let one = T::one();
    let two = one + one;
    let four = two + two;
    let c = y.abs() + one + eps;
    let root = (one + four * eps * c).sqrt();
    // (root - 1) / (2 eps), rationalized so small eps does not cancel
    let u = two * c / (root + one);
    ((u - one) * (u + one)).copysign(y)
}

/// `h(reward + gamma * h_inv(next_value_transformed))`; pass 0 as the next value at terminals.
pub fn transformed_target<T: Scalar>(
    reward: T,
    next_value_transformed: T,
    gamma: T,
    params: &TransformParams,
) -> Result<T> {
    ValueTransform::Sqrt(*params).target(reward, next_value_transformed, gamma)
}

/// Value transform used by the operator, the solver and the learner.
///
/// `Identity` gives the standard Bellman operator; `Linear` is the `h(z) = alpha z`
/// hook under which the transformed fixed point is `alpha Q*`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ValueTransform {
    Sqrt(TransformParams),
    Identity,
    Linear { alpha: f64 },
}

impl Default for ValueTransform {
    fn default() -> Self {
        ValueTransform::Sqrt(TransformParams::default())
    }
}

impl ValueTransform {
    pub fn linear(alpha: f64) -> Result<Self> {
        if !(alpha.is_finite() && alpha > 0.0) {
            return Err(Error::invalid(format!("linear transform needs alpha > 0, got {alpha}")));
        }
        Ok(ValueTransform::Linear { alpha })
    }

    pub fn forward<T: Scalar>(&self, z: T) -> Result<T> {
        match self {
            ValueTransform::Sqrt(p) => h(z, p),
            ValueTransform::Identity => {
                check_input(z, "identity")?;
                Ok(z)
            }
            ValueTransform::Linear { alpha } => {
                check_input(z, "linear")?;
                Ok(T::of(*alpha) * z)
            }
        }
    }

    pub fn inverse<T: Scalar>(&self, y: T) -> Result<T> {
        match self {
            ValueTransform::Sqrt(p) => h_inv(y, p),
            ValueTransform::Identity => {
                check_input(y, "identity")?;
                Ok(y)
            }
            ValueTransform::Linear { alpha } => {
                check_input(y, "linear")?;
                Ok(y / T::of(*alpha))
            }
        }
    }

    /// Transformed bootstrap target `h(reward + discount * h_inv(next))`.
    pub fn target<T: Scalar>(&self, reward: T, next: T, discount: T) -> Result<T> {
        let expanded = self.inverse(next)?;
        self.forward(reward + discount * expanded)
    }

    pub fn is_identity(&self) -> bool {
        matches!(self, ValueTransform::Identity)
    }

    pub fn lipschitz(&self) -> LipschitzBounds {
        match self {
            ValueTransform::Sqrt(p) => p.lipschitz(),
            ValueTransform::Identity => LipschitzBounds::new(1.0, 1.0),
            ValueTransform::Linear { alpha } => LipschitzBounds::new(*alpha, 1.0 / alpha),
        }
    }
}

/// One exact synchronous sweep of `T_h` (`T` for the identity transform):
/// `(T_h Q)(x, a) = sum_x' P(x'|x,a) h(R(x,a) + gamma max_a' h_inv(Q(x', a')))`.
pub fn apply_operator<T: Scalar>(
    q: &QTable<T>,
    mdp: &FiniteMdp,
    gamma: f64,
    transform: &ValueTransform,
) -> Result<QTable<T>> {
    if q.n_states() != mdp.n_states() || q.n_actions() != mdp.n_actions() {
        return Err(Error::invalid(format!(
            "q-table is {}x{}, MDP is {}x{}",
            q.n_states(),
            q.n_actions(),
            mdp.n_states(),
            mdp.n_actions()
        )));
    }
    let g = T::of(gamma);
    // h_inv is monotone, so max_a' h_inv(Q) = h_inv(max_a' Q)
    let bootstrap = (0..mdp.n_states())
        .map(|s| transform.inverse(q.max_value(s)))
        .collect::<Result<Vec<T>>>()?;
    let mut out = QTable::zeros(mdp.n_states(), mdp.n_actions());
    for s in 0..mdp.n_states() {
        for a in 0..mdp.n_actions() {
            let r = T::of(mdp.reward(s, a));
            let value = if transform.is_identity() {
                let expected: T = mdp
                    .successors(s, a)
                    .iter()
                    .map(|&(n, p)| T::of(p) * bootstrap[n])
                    .sum();
                r + g * expected
            } else {
                let mut acc = T::zero();
                for &(n, p) in mdp.successors(s, a) {
                    acc = acc + T::of(p) * transform.forward(r + g * bootstrap[n])?;
                }
                acc
            };
            out.set(s, a, value);
        }
    }
    Ok(out)
}

/// Random-pair probe of the contraction modulus of the transformed operator.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContractionProbe {
    pub trials: usize,
    /// Q and U entries are drawn uniformly from `[-value_range, value_range]`.
    pub value_range: f64,
    pub seed: u64,
}

impl Default for ContractionProbe {
    fn default() -> Self {
        Self {
            trials: 1000,
            value_range: 10.0,
            seed: 0,
        }
    }
}

/// `max ||T_h Q - T_h U||_inf / ||Q - U||_inf` over random pairs.
pub fn empirical_contraction_ratio(
    mdp: &FiniteMdp,
    gamma: f64,
    transform: &ValueTransform,
    probe: &ContractionProbe,
) -> Result<f64> {
    if probe.trials == 0 {
        return Err(Error::invalid("contraction probe needs at least one trial"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(probe.seed);
    let range = probe.value_range;
    let draw = |rng: &mut ChaCha8Rng| {
        QTable::from_fn(mdp.n_states(), mdp.n_actions(), |_, _| rng.gen_range(-range..=range))
    };
    let pairs: Vec<_> = (0..probe.trials)
        .map(|_| {
            let q = draw(&mut rng);
            let u = draw(&mut rng);
            (q, u)
        })
        .collect();
    contraction_ratio_of_pairs(mdp, gamma, transform, pairs)
}

/// Contraction ratio over caller-supplied pairs. Pairs with `Q = U` are skipped;
/// if every pair is skipped the ratio is 0.
pub fn contraction_ratio_of_pairs(
    mdp: &FiniteMdp,
    gamma: f64,
    transform: &ValueTransform,
    pairs: impl IntoIterator<Item = (QTable<f64>, QTable<f64>)>,
) -> Result<f64> {
    let mut worst = 0.0f64;
    for (q, u) in pairs {
        let denom = q.sup_distance(&u)?;
        if denom == 0.0 {
            continue;
        }
        let tq = apply_operator(&q, mdp, gamma, transform)?;
        let tu = apply_operator(&u, mdp, gamma, transform)?;
        worst = worst.max(tq.sup_distance(&tu)? / denom);
    }
    Ok(worst)
}

/// Largest observed slopes of a transform and its inverse.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LipschitzSweep {
    pub max_slope: f64,
    pub max_slope_inverse: f64,
}

/// Empirical slopes over `samples` random pairs in `[-range, range]`, half of them
/// drawn as close pairs near the origin where both slopes peak.
pub fn lipschitz_sweep(transform: &ValueTransform, range: f64, samples: usize, seed: u64) -> Result<LipschitzSweep> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut sweep = LipschitzSweep {
        max_slope: 0.0,
        max_slope_inverse: 0.0,
    };
    let slope = |f: &dyn Fn(f64) -> Result<f64>, a: f64, b: f64| -> Result<f64> {
        if a == b {
            return Ok(0.0);
        }
        Ok((f(a)? - f(b)?).abs() / (a - b).abs())
    };
    let fwd = |x: f64| transform.forward(x);
    let inv = |x: f64| transform.inverse(x);
    let inverse_range = transform.forward(range)?.abs();
    for i in 0..samples {
        let (a, b, c, d) = if i % 2 == 0 {
            (
                rng.gen_range(-range..=range),
                rng.gen_range(-range..=range),
                rng.gen_range(-inverse_range..=inverse_range),
                rng.gen_range(-inverse_range..=inverse_range),
            )
        } else {
            let x: f64 = rng.gen_range(-1e-3..=1e-3);
            let y: f64 = rng.gen_range(-1e-3..=1e-3);
            (x, x + 1e-4, y, y + 1e-4)
        };
        sweep.max_slope = sweep.max_slope.max(slope(&fwd, a, b)?);
        sweep.max_slope_inverse = sweep.max_slope_inverse.max(slope(&inv, c, d)?);
    }
    Ok(sweep)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::{make_env, EnvSpec};

    const EPS: TransformParams = TransformParams { epsilon: 0.01 };

    #[test]
    fn h_examples() {
        assert_eq!(h(0.0, &EPS).unwrap(), 0.0);
        assert!((h(3.0f64, &EPS).unwrap() - 1.03).abs() < 1e-12);
        assert!((h(-3.0f64, &EPS).unwrap() + 1.03).abs() < 1e-12);
    }

    #[test]
    fn h_inv_examples() {
        assert_eq!(h_inv(0.0, &EPS).unwrap(), 0.0);
        assert!((h_inv(1.03f64, &EPS).unwrap() - 3.0).abs() < 1e-9);
        assert!((h_inv(-1.03f64, &EPS).unwrap() + 3.0).abs() < 1e-9);
    }

    #[test]
    fn h_inv_matches_the_unrationalized_formula() {
        for y in [-50.0f64, -1.0, 0.3, 2.0, 123.0] {
            let e = 0.01f64;
            let direct = ((1.0 + 4.0 * e * (y.abs() + 1.0 + e)).sqrt() - 1.0) / (2.0 * e);
            let direct = y.signum() * (direct * direct - 1.0);
            assert!((h_inv(y, &EPS).unwrap() - direct).abs() < 1e-9 * (1.0 + direct.abs()));
        }
    }

    #[test]
    fn non_finite_and_huge_inputs_are_rejected() {
        assert!(h(f64::NAN, &EPS).is_err());
        assert!(h(f64::INFINITY, &EPS).is_err());
        assert!(h_inv(f64::NEG_INFINITY, &EPS).is_err());
        assert!(h(2e12, &EPS).is_err());
        assert!(h_inv(-2e12, &EPS).is_err());
        assert!(h(1e12, &EPS).is_ok());
    }

    #[test]
    fn epsilon_must_be_positive() {
        assert!(TransformParams::new(0.0).is_err());
        assert!(TransformParams::new(-1.0).is_err());
        assert!(TransformParams::new(f64::NAN).is_err());
    }

    #[test]
    fn lipschitz_constants() {
        let b = EPS.lipschitz();
        assert!((b.l_h - 0.51).abs() < 1e-15);
        assert!((b.l_h_inv - 100.0).abs() < 1e-12);
        assert!((b.contraction_gamma_max - 1.0 / 51.0).abs() < 1e-15);
        let wide = TransformParams::new(1.0).unwrap().lipschitz();
        assert_eq!(wide.l_h, 1.5);
        assert_eq!(wide.l_h_inv, 1.0);
    }

    #[test]
    fn transformed_target_examples() {
        assert_eq!(transformed_target(0.0, 0.0, 0.999, &EPS).unwrap(), 0.0);
        let t = transformed_target(1.0, 0.0, 0.999, &EPS).unwrap();
        assert!((t - (2f64.sqrt() - 1.0 + 0.01)).abs() < 1e-12);
        assert!((t - 0.42421).abs() < 1e-5);
        let h1 = h(1.0f64, &EPS).unwrap();
        assert!((transformed_target(0.0, h1, 1.0, &EPS).unwrap() - h1).abs() < 1e-12);
    }

    #[test]
    fn works_in_single_precision() {
        let p = EPS;
        let y = h(3.0f32, &p).unwrap();
        assert!((y - 1.03).abs() < 1e-6);
        assert!((h_inv(y, &p).unwrap() - 3.0).abs() < 1e-4);
    }

    fn chain() -> FiniteMdp {
        make_env(&EnvSpec::DelayedChain { length: 3 }).unwrap()
    }

    #[test]
    fn zero_is_fixed_on_zero_reward_mdp() {
        let mdp = FiniteMdp::new(2, 2, vec![0.5; 8], vec![0.0; 4], vec![false; 2], vec![1.0, 0.0]).unwrap();
        let q = QTable::<f64>::zeros(2, 2);
        for t in [ValueTransform::Identity, ValueTransform::default()] {
            assert_eq!(apply_operator(&q, &mdp, 0.9, &t).unwrap(), q);
        }
    }

    #[test]
    fn one_sweep_on_chain() {
        let mdp = chain();
        let q = QTable::<f64>::zeros(3, 2);
        let standard = apply_operator(&q, &mdp, 0.5, &ValueTransform::Identity).unwrap();
        assert_eq!(standard.get(1, 1), 1.0);
        assert_eq!(standard.get(0, 1), 0.0);
        let transformed = apply_operator(&q, &mdp, 0.5, &ValueTransform::default()).unwrap();
        assert!((transformed.get(1, 1) - h(1.0, &EPS).unwrap()).abs() < 1e-15);
        assert_eq!(transformed.get(0, 0), 0.0);
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let q = QTable::<f64>::zeros(2, 2);
        assert!(apply_operator(&q, &chain(), 0.5, &ValueTransform::Identity).is_err());
    }

    #[test]
    fn identical_pairs_give_zero_ratio() {
        let mdp = chain();
        let q = QTable::from_values(3, 2, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let pairs = (0..5).map(|_| (q.clone(), q.clone()));
        assert_eq!(contraction_ratio_of_pairs(&mdp, 0.9, &ValueTransform::default(), pairs).unwrap(), 0.0);
    }

    #[test]
    fn standard_operator_contracts_by_gamma() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mdp = FiniteMdp::random(10, 3, 1.0, &mut rng).unwrap();
        let probe = ContractionProbe { trials: 200, ..Default::default() };
        let ratio = empirical_contraction_ratio(&mdp, 0.7, &ValueTransform::Identity, &probe).unwrap();
        assert!(ratio <= 0.7 + 1e-12, "ratio {ratio}");
    }

    #[test]
    fn transformed_operator_respects_lipschitz_bound() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mdp = FiniteMdp::random(10, 3, 1.0, &mut rng).unwrap();
        let probe = ContractionProbe { trials: 200, ..Default::default() };
        let ratio = empirical_contraction_ratio(&mdp, 0.015, &ValueTransform::default(), &probe).unwrap();
        assert!(ratio <= 0.51 * 100.0 * 0.015, "ratio {ratio}");
    }

    #[test]
    fn zero_trials_is_invalid() {
        let probe = ContractionProbe { trials: 0, ..Default::default() };
        assert!(empirical_contraction_ratio(&chain(), 0.5, &ValueTransform::default(), &probe).is_err());
    }

    #[test]
    fn sweep_finds_slope_near_the_origin() {
        let s = lipschitz_sweep(&ValueTransform::default(), 100.0, 2000, 1).unwrap();
        assert!(s.max_slope <= 0.51 + 1e-9 && s.max_slope > 0.5);
        assert!(s.max_slope_inverse <= 100.0 + 1e-9);
        // inverse slope peaks at large |y|, near 1/eps
        assert!(s.max_slope_inverse > 1.0 / 0.51);
    }
}
