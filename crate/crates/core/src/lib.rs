//! Distributed deep Q-learning from demonstrations on finite MDPs.
//!
//! The crate pairs a learning stack (prioritized dual replay, n-step transformed
//! TD targets, temporal-consistency and max-margin imitation losses, a small
//! dueling Q-network trained with Adam, ε-greedy actors) with an exact tabular
//! oracle (value iteration under the standard and transformed Bellman operators)
//! so every piece can be checked against ground truth.
//!
//! Numerical code is generic over [`Scalar`] (`f32` or `f64`); the aliases
//! below fix the common instantiations.

pub mod actor;
pub mod demos;
pub mod error;
pub mod harness;
pub mod learner;
pub mod mdp;
pub mod network;
pub mod qtable;
pub mod replay;
pub mod scalar;
pub mod solver;
pub mod transform;

pub use error::{Error, Result};
pub use mdp::{make_env, Env, EnvSpec, EnvStep, EpisodeCap, FiniteMdp};
pub use qtable::QTable;
pub use scalar::Scalar;
pub use transform::{h, h_inv, LipschitzBounds, TransformParams, ValueTransform};

/// Tabular Q-function in double precision, the oracle's working type.
pub type QTable64 = qtable::QTable<f64>;
pub type QNetwork = network::Network<f64>;
pub type QNetworkF32 = network::Network<f32>;
pub type Learner64 = learner::Learner<f64>;
pub type LearnerF32 = learner::Learner<f32>;
