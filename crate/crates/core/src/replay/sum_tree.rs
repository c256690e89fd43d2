use crate::error::{Error, Result};

/// Binary prefix-sum tree over nonnegative leaf masses.
///
/// Leaves live at `[size, 2 * size)` of a flat array with `size` a power of two;
/// node `i` holds the sum of nodes `2i` and `2i + 1`.
#[derive(Clone, Debug)]
pub struct SumTree {
    size: usize,
    nodes: Vec<f64>,
}

impl SumTree {
    pub fn new(capacity: usize) -> Self {
        let size = capacity.max(1).next_power_of_two();
        Self {
            size,
            nodes: vec![0.0; 2 * size],
        }
    }

    pub fn capacity(&self) -> usize {
        self.size
    }

    pub fn total(&self) -> f64 {
        self.nodes[1]
    }

    pub fn get(&self, leaf: usize) -> f64 {
        self.nodes[self.size + leaf]
    }

    /// Sets one leaf and repairs the sums on its path to the root.
    pub fn set(&mut self, leaf: usize, mass: f64) {
        debug_assert!(mass >= 0.0 && mass.is_finite());
        let mut i = self.size + leaf;
        self.nodes[i] = mass;
        while i > 1 {
            i /= 2;
            self.nodes[i] = self.nodes[2 * i] + self.nodes[2 * i + 1];
        }
    }

    /// Doubles capacity until `capacity` leaves fit, keeping existing masses.
    pub fn grow(&mut self, capacity: usize) {
        if capacity <= self.size {
            return;
        }
        let mut bigger = SumTree::new(capacity);
        for leaf in 0..self.size {
            let m = self.get(leaf);
            if m > 0.0 {
                bigger.nodes[bigger.size + leaf] = m;
            }
        }
        for i in (1..bigger.size).rev() {
            bigger.nodes[i] = bigger.nodes[2 * i] + bigger.nodes[2 * i + 1];
        }
        *self = bigger;
    }

    /// Leaf `i` with `cum[i-1] <= value < cum[i]`, where `cum` are prefix sums.
    ///
    /// Values at or past the total land on the last leaf with positive mass.
    pub fn find_prefix(&self, value: f64) -> Result<usize> {
        if !(self.total() > 0.0) {
            return Err(Error::InvalidState("prefix query on an empty sum tree".into()));
        }
        let mut value = value.max(0.0);
        let mut i = 1;
        while i < self.size {
            let left = self.nodes[2 * i];
            let right = self.nodes[2 * i + 1];
            if value < left || right <= 0.0 {
                i *= 2;
            } else {
                value -= left;
                i = 2 * i + 1;
            }
        }
        Ok(i - self.size)
    }

    /// Largest relative mismatch between a node and the sum of its children.
    pub fn audit(&self) -> f64 {
        let scale = self.total().max(f64::MIN_POSITIVE);
        (1..self.size)
            .map(|i| (self.nodes[i] - self.nodes[2 * i] - self.nodes[2 * i + 1]).abs() / scale)
            .fold(0.0, f64::max)
    }
}
