//! Action-space shaping laboratory.
//!
//! Composable action-space transforms, the Get-To-Goal environment family,
//! an MLP actor-critic with hand-derived gradients, a PPO trainer and an
//! experiment harness for seeded learning-curve sweeps.

pub mod curve;
pub mod envs;
pub mod harness;
pub mod error;
pub mod policy;
pub mod ppo;
pub mod selftest;
pub mod shaping;
pub mod spaces;

pub use error::{CheckpointError, EnvError, PolicyError, ShapingError, SpaceError};
pub use shaping::{enumerate_combinations, mask_probabilities, MaxPressed, Transform, TransformStack};
pub use spaces::{Action, ActionSpace, Bound, Cardinality};
