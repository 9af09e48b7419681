//! Actor-critic network, action distributions and the optimizer.
//!
//! The network is generic over the float type so that training can run in
//! `f32` while gradient checks run in `f64`.

mod adam;
mod checkpoint;
mod dist;
mod net;
mod objective;

use std::fmt::Debug;

use ndarray::{LinalgScalar, ScalarOperand};
use num_traits::{Float, FromPrimitive, NumAssign};
use rand::Rng;
use rand_distr::StandardNormal;

pub use adam::Adam;
pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointMeta, ParamBlock};
pub use dist::{
    categorical_entropy, evaluate_logprob, log_softmax, sample_and_logprob, ActionDist,
};
pub use net::{HeadLayout, NetShape, Objective, OutputGrad, PolicyNet, PolicyOutput};
pub use objective::{finite_difference_error, random_check_problem, WeightedObjective};

/// Float types the network can run in.
pub trait Scalar:
    Float + NumAssign + FromPrimitive + LinalgScalar + ScalarOperand + Debug + Send + Sync + 'static
{
    fn from_f64_lossy(x: f64) -> Self;
    fn to_f64_lossless(self) -> f64;
    fn standard_normal<R: Rng + ?Sized>(rng: &mut R) -> Self;
}

impl Scalar for f32 {
    fn from_f64_lossy(x: f64) -> Self {
        x as f32
    }
    fn to_f64_lossless(self) -> f64 {
        self as f64
    }
    fn standard_normal<R: Rng + ?Sized>(rng: &mut R) -> Self {
        rng.sample(StandardNormal)
    }
}

impl Scalar for f64 {
    fn from_f64_lossy(x: f64) -> Self {
        x
    }
    fn to_f64_lossless(self) -> f64 {
        self
    }
    fn standard_normal<R: Rng + ?Sized>(rng: &mut R) -> Self {
        rng.sample(StandardNormal)
    }
}
