use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// `x^2 / 2` inside `[-1, 1]`, `|x| - 1/2` outside.
pub fn huber<T: Scalar>(x: T) -> T {
    let a = x.abs();
    let half = T::of(0.5);
    if a <= T::one() {
        half * x * x
    } else {
        a - half
    }
}

/// Derivative of [`huber`]: `x` clamped to `[-1, 1]`.
pub fn huber_grad<T: Scalar>(x: T) -> T {
    x.max(-T::one()).min(T::one())
}

pub fn global_norm<T: Scalar>(grads: &[T]) -> T {
    grads.iter().map(|g| *g * *g).sum::<T>().sqrt()
}

/// Rescales `grads` in place so their L2 norm is at most `max_norm`. Returns
/// the norm before clipping.
pub fn clip_global_norm<T: Scalar>(grads: &mut [T], max_norm: T) -> Result<T> {
    if !(max_norm > T::zero()) {
        return Err(Error::invalid(format!("max_norm must be positive, got {max_norm}")));
    }
    let norm = global_norm(grads);
    if norm > max_norm {
        let scale = max_norm / norm;
        grads.iter_mut().for_each(|g| *g = *g * scale);
    }
    Ok(norm)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Decoupled decay applied after the Adam step as `p *= 1 - lr * weight_decay`.
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 5e-5,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            weight_decay: 0.01 / 256.0,
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.learning_rate > 0.0
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.epsilon > 0.0
            && self.weight_decay >= 0.0
            && self.learning_rate * self.weight_decay < 1.0;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid Adam settings {self:?}")))
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<T> {
    pub config: AdamConfig,
    pub m: Vec<T>,
    pub v: Vec<T>,
    pub steps: u64,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(config: AdamConfig, n_params: usize) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            config,
            m: vec![T::zero(); n_params],
            v: vec![T::zero(); n_params],
            steps: 0,
        })
    }

    /// One bias-corrected Adam update followed by decoupled weight decay.
    /// `name` maps a parameter index to a label for error messages.
    pub fn step(&mut self, params: &mut [T], grads: &[T], name: impl Fn(usize) -> String) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::invalid(format!(
                "Adam state holds {} moments, got {} params and {} gradients",
                self.m.len(),
                params.len(),
                grads.len()
            )));
        }
        if let Some(i) = grads.iter().position(|g| !g.is_finite()) {
            return Err(Error::NonFinite {
                name: format!("gradient of {} ({})", name(i), grads[i]),
            });
        }
        self.steps += 1;
        let c = &self.config;
        let t = self.steps as i32;
        let (b1, b2) = (T::of(c.beta1), T::of(c.beta2));
        let correction1 = T::one() - T::of(c.beta1.powi(t));
        let correction2 = T::one() - T::of(c.beta2.powi(t));
        let lr = T::of(c.learning_rate);
        let eps = T::of(c.epsilon);
        let decay = T::one() - T::of(c.learning_rate * c.weight_decay);
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = b1 * self.m[i] + (T::one() - b1) * g;
            self.v[i] = b2 * self.v[i] + (T::one() - b2) * g * g;
            let m_hat = self.m[i] / correction1;
            let v_hat = self.v[i] / correction2;
            params[i] = params[i] - lr * m_hat / (v_hat.sqrt() + eps);
            if c.weight_decay > 0.0 {
                params[i] = params[i] * decay;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn cfg(lr: f64, wd: f64) -> AdamConfig {
        AdamConfig {
            learning_rate: lr,
            weight_decay: wd,
            ..AdamConfig::default()
        }
    }

    #[test]
    fn huber_values() {
        assert_eq!(huber(0.5f64), 0.125);
        assert_eq!(huber(2.0f64), 1.5);
        assert_eq!(huber(-2.0f64), 1.5);
        assert_eq!(huber(1.0f64), 0.5);
        assert_eq!(huber_grad(0.3f64), 0.3);
        assert_eq!(huber_grad(-7.0f64), -1.0);
    }

    #[test]
    fn clipping() {
        let mut g = vec![6.0f64, 8.0];
        assert_eq!(clip_global_norm(&mut g, 40.0).unwrap(), 10.0);
        assert_eq!(g, vec![6.0, 8.0]);
        let mut g = vec![48.0f64, 64.0];
        assert_eq!(clip_global_norm(&mut g, 40.0).unwrap(), 80.0);
        assert_eq!(g, vec![24.0, 32.0]);
        let mut z = vec![0.0f64; 3];
        clip_global_norm(&mut z, 40.0).unwrap();
        assert_eq!(z, vec![0.0; 3]);
        assert!(clip_global_norm(&mut z, 0.0).is_err());
    }

    #[test]
    fn adam_zero_gradient_is_identity() {
        let mut s = AdamState::<f64>::new(cfg(0.1, 0.0), 3).unwrap();
        let mut p = vec![1.0, -2.0, 3.5];
        for _ in 0..5 {
            s.step(&mut p, &[0.0; 3], |i| i.to_string()).unwrap();
        }
        assert_eq!(p, vec![1.0, -2.0, 3.5]);
        assert_eq!(s.steps, 5);
    }

    #[test]
    fn adam_first_step_is_minus_lr() {
        let mut s = AdamState::<f64>::new(cfg(0.1, 0.0), 1).unwrap();
        let mut p = vec![0.0];
        s.step(&mut p, &[1.0], |i| i.to_string()).unwrap();
        assert!((p[0] + 0.1).abs() < 1e-8);
    }

    #[test]
    fn adam_two_steps_follow_recurrence() {
        let mut s = AdamState::<f64>::new(cfg(0.1, 0.0), 1).unwrap();
        let mut p = vec![0.0];
        s.step(&mut p, &[1.0], |i| i.to_string()).unwrap();
        s.step(&mut p, &[1.0], |i| i.to_string()).unwrap();
        let m = 0.9 * 0.1 + 0.1;
        let v = 0.999 * 0.001 + 0.001;
        assert!((s.m[0] - m).abs() < 1e-15);
        assert!((s.v[0] - v).abs() < 1e-15);
        let second = 0.1 * (m / (1.0 - 0.81)) / ((v / (1.0 - 0.999f64.powi(2))).sqrt() + 1e-8);
        assert!((p[0] - (-0.1 / (1.0 + 1e-8) - second)).abs() < 1e-12);
    }

    #[test]
    fn adam_weight_decay_after_step() {
        let mut s = AdamState::<f64>::new(cfg(0.1, 0.5), 1).unwrap();
        let mut p = vec![2.0];
        s.step(&mut p, &[0.0], |i| i.to_string()).unwrap();
        assert_eq!(p[0], 2.0 * (1.0 - 0.05));
    }

    #[test]
    fn adam_rejects_non_finite_gradient_by_name() {
        let mut s = AdamState::<f64>::new(cfg(0.1, 0.0), 2).unwrap();
        let mut p = vec![0.0, 0.0];
        let err = s.step(&mut p, &[0.0, f64::NAN], |i| format!("w{i}")).unwrap_err();
        assert!(err.to_string().contains("w1"), "{err}");
        assert_eq!(p, vec![0.0, 0.0]);
        assert_eq!(s.steps, 0);
    }

    proptest! {
        #[test]
        fn clipped_norm_is_bounded(g in prop::collection::vec(-1e3f64..1e3, 1..50), max in 0.1f64..100.0) {
            let mut g = g;
            clip_global_norm(&mut g, max).unwrap();
            prop_assert!(global_norm(&g) <= max + 1e-9);
        }
    }
}
