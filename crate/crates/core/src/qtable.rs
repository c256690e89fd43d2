//! Dense tabular action-value functions.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Row-major `n_states x n_actions` table of action values.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QTable<T> {
    n_states: usize,
    n_actions: usize,
    values: Vec<T>,
}

impl<T: Scalar> QTable<T> {
    pub fn zeros(n_states: usize, n_actions: usize) -> Self {
        Self {
            n_states,
            n_actions,
            values: vec![T::zero(); n_states * n_actions],
        }
    }

    pub fn from_values(n_states: usize, n_actions: usize, values: Vec<T>) -> Result<Self> {
        if values.len() != n_states * n_actions {
            return Err(Error::invalid(format!(
                "q-table needs {} entries for {n_states}x{n_actions}, got {}",
                n_states * n_actions,
                values.len()
            )));
        }
        Ok(Self {
            n_states,
            n_actions,
            values,
        })
    }

    pub fn from_fn(n_states: usize, n_actions: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut values = Vec::with_capacity(n_states * n_actions);
        for s in 0..n_states {
            for a in 0..n_actions {
                values.push(f(s, a));
            }
        }
        Self {
            n_states,
            n_actions,
            values,
        }
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn get(&self, state: usize, action: usize) -> T {
        self.values[state * self.n_actions + action]
    }

    pub fn set(&mut self, state: usize, action: usize, value: T) {
        self.values[state * self.n_actions + action] = value;
    }

    pub fn row(&self, state: usize) -> &[T] {
        &self.values[state * self.n_actions..(state + 1) * self.n_actions]
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn max_value(&self, state: usize) -> T {
        self.row(state)
            .iter()
            .copied()
            .fold(T::neg_infinity(), T::max)
    }

    /// Greedy action of one row; ties go to the lowest index.
    pub fn argmax(&self, state: usize) -> usize {
        argmax(self.row(state))
    }

    pub fn map(&self, mut f: impl FnMut(T) -> T) -> Self {
        Self {
            n_states: self.n_states,
            n_actions: self.n_actions,
            values: self.values.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn try_map<E>(&self, mut f: impl FnMut(T) -> Result<T, E>) -> Result<Self, E> {
        Ok(Self {
            n_states: self.n_states,
            n_actions: self.n_actions,
            values: self
                .values
                .iter()
                .map(|&v| f(v))
                .collect::<Result<Vec<_>, E>>()?,
        })
    }

    /// `max |self - other|` over all entries.
    pub fn sup_distance(&self, other: &Self) -> Result<T> {
        if self.n_states != other.n_states || self.n_actions != other.n_actions {
            return Err(Error::invalid("q-table shapes differ"));
        }
        Ok(self
            .values
            .iter()
            .zip(&other.values)
            .map(|(&a, &b)| (a - b).abs())
            .fold(T::zero(), T::max))
    }
}

/// Index of the largest entry; the first one wins on ties.
pub fn argmax<T: PartialOrd + Copy>(row: &[T]) -> usize {
    let mut best = 0;
    for (i, v) in row.iter().enumerate().skip(1) {
        if *v > row[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn argmax_prefers_lowest_index_on_ties() {
        assert_eq!(argmax(&[1.0, 1.0]), 0);
        assert_eq!(argmax(&[0.0, 2.0, 2.0]), 1);
        assert_eq!(argmax(&[3.0]), 0);
    }

    #[test]
    fn from_values_checks_length() {
        assert!(QTable::<f64>::from_values(2, 2, vec![0.0; 3]).is_err());
    }

    #[test]
    fn sup_distance_is_largest_gap() {
        let a = QTable::from_values(1, 3, vec![0.0, 1.0, -2.0]).unwrap();
        let b = QTable::from_values(1, 3, vec![0.5, 1.0, 1.0]).unwrap();
        assert_eq!(a.sup_distance(&b).unwrap(), 3.0);
    }
}
