//! Prioritized replay: the sum tree, n-step transition assembly, the FIFO actor
//! buffer, the sealed expert buffer, and the fixed-ratio mixed batch sampler.

mod batch;
mod buffer;
mod sum_tree;
mod transition;

pub use batch::{sample_batch, sample_mixed_batch, BatchItem, SampledBatch, Source};
pub use buffer::{BufferKind, PrioritizedBuffer, Sampled, SharedBuffer};
pub use sum_tree::SumTree;
pub use transition::{assemble_transitions, Transition, DEFAULT_HORIZONS};

use serde::{Deserialize, Serialize};

/// Sampling parameters shared by both buffers.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ReplayConfig {
    /// Exponent `a` in `P(i) = p_i^a / sum_j p_j^a`.
    pub priority_exponent: f64,
    /// Exponent `b` in the importance weight `(N P(i))^-b`.
    pub importance_exponent: f64,
    pub priority_floor: f64,
    pub actor_capacity: usize,
}

impl Default for ReplayConfig {
    fn default() -> Self {
        Self {
            priority_exponent: 0.6,
            importance_exponent: 0.4,
            priority_floor: 1e-4,
            actor_capacity: 50_000,
        }
    }
}
