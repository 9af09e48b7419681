//! Clipped-surrogate PPO over a vector of environments.

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::curve::{CurvePoint, LearningCurve};
use crate::envs::{AnyEnv, EnvSpec, Environment, VecEnv};
use crate::error::{EnvError, PolicyError, ShapingError};
use crate::policy::{
    sample_and_logprob, Adam, HeadLayout, NetShape, Objective, OutputGrad, PolicyNet, PolicyOutput,
};
use crate::shaping::{Transform, TransformStack};
use crate::spaces::Action;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PpoConfig {
    pub n_envs: usize,
    pub n_steps: usize,
    pub epochs: usize,
    pub minibatches: usize,
    pub clip: f64,
    pub entropy_coef: f64,
    pub value_coef: f64,
    pub lr: f64,
    pub gamma: f64,
    pub lambda: f64,
    pub total_timesteps: u64,
    pub seed: u64,
    pub max_grad_norm: f64,
}

impl Default for PpoConfig {
    fn default() -> Self {
        Self {
            n_envs: 8,
            n_steps: 256,
            epochs: 4,
            minibatches: 4,
            clip: 0.2,
            entropy_coef: 0.01,
            value_coef: 0.5,
            lr: 2.5e-4,
            gamma: 0.99,
            lambda: 0.95,
            total_timesteps: 250_000,
            seed: 0,
            max_grad_norm: 0.5,
        }
    }
}

impl PpoConfig {
    pub fn batch_size(&self) -> usize {
        self.n_envs * self.n_steps
    }

    /// Number of collect/update rounds; always at least one.
    pub fn iterations(&self) -> u64 {
        (self.total_timesteps / self.batch_size() as u64).max(1)
    }

    pub fn validate(&self) -> Result<(), PpoError> {
        let bad = |msg: &str| Err(PpoError::InvalidConfig(msg.to_string()));
        if self.n_envs == 0 || self.n_steps == 0 || self.epochs == 0 || self.minibatches == 0 {
            return bad("n_envs, n_steps, epochs and minibatches must be positive");
        }
        if self.minibatches > self.batch_size() {
            return bad("more minibatches than transitions per batch");
        }
        if !(self.clip > 0.0 && self.clip < 1.0) {
            return bad("clip must lie in (0, 1)");
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) || !(self.lambda > 0.0 && self.lambda <= 1.0) {
            return bad("gamma and lambda must lie in (0, 1]");
        }
        let positive = [self.entropy_coef, self.value_coef, self.lr, self.max_grad_norm];
        if positive.iter().any(|x| !(x.is_finite() && *x > 0.0)) {
            return bad("entropy_coef, value_coef, lr and max_grad_norm must be positive");
        }
        if self.total_timesteps == 0 {
            return bad("total_timesteps must be positive");
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum PpoError {
    #[error("invalid PPO config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    Shaping(#[from] ShapingError),
    #[error("non-finite loss: {0}")]
    NonFiniteLoss(String),
    #[error("iteration {iteration}: {source}")]
    AtIteration {
        iteration: u64,
        #[source]
        source: Box<PpoError>,
    },
}

/// Transitions indexed `t * n_envs + e`.
#[derive(Clone, Debug, PartialEq)]
pub struct RolloutBatch {
    pub n_envs: usize,
    pub n_steps: usize,
    pub observations: Array2<f32>,
    pub actions: Vec<Action>,
    pub log_probs: Vec<f32>,
    pub rewards: Vec<f64>,
    pub dones: Vec<bool>,
    pub values: Vec<f64>,
    pub masks: Vec<Option<Vec<bool>>>,
    /// Value estimates of the observations following the last step.
    pub bootstrap_values: Vec<f64>,
    /// Returns of the episodes that ended during this rollout.
    pub finished_returns: Vec<f64>,
}

impl RolloutBatch {
    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }
}

/// Vectorized environments plus the running return of each open episode.
pub struct Collector {
    envs: VecEnv<AnyEnv>,
    stack: TransformStack,
    running: Vec<f64>,
}

impl Collector {
    pub fn new(envs: VecEnv<AnyEnv>, stack: TransformStack) -> Self {
        let running = vec![0.0; envs.len()];
        Self {
            envs,
            stack,
            running,
        }
    }

    pub fn stack(&self) -> &TransformStack {
        &self.stack
    }

    fn observation_matrix(&self) -> Array2<f32> {
        let obs = self.envs.observations();
        let dim = obs.first().map_or(0, Vec::len);
        Array2::from_shape_fn((obs.len(), dim), |(i, j)| obs[i][j] as f32)
    }

    /// Runs `n_steps` lockstep steps, sampling shaped actions from `net` and
    /// decoding them through the transform stack.
    pub fn collect(
        &mut self,
        net: &PolicyNet<f32>,
        n_steps: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<RolloutBatch, PpoError> {
        let n_envs = self.envs.len();
        let total = n_envs * n_steps;
        let obs_dim = net.shape().obs_dim;
        let mut observations = Array2::zeros((total, obs_dim));
        let mut actions = Vec::with_capacity(total);
        let mut log_probs = Vec::with_capacity(total);
        let mut rewards = Vec::with_capacity(total);
        let mut dones = Vec::with_capacity(total);
        let mut values = Vec::with_capacity(total);
        let mut masks = Vec::with_capacity(total);
        let mut finished_returns = Vec::new();

        for t in 0..n_steps {
            let obs = self.observation_matrix();
            let out = net.forward(obs.view())?;
            let mut env_actions = Vec::with_capacity(n_envs);
            for e in 0..n_envs {
                let mask = self.stack.availability(&self.envs.observations()[e]);
                let dist = out.dist(e, mask.as_deref())?;
                let (action, lp, _) = sample_and_logprob(&dist, rng);
                env_actions.push(self.stack.decode_lenient(&action)?);
                observations.row_mut(t * n_envs + e).assign(&obs.row(e));
                actions.push(action);
                log_probs.push(lp);
                values.push(out.values[e] as f64);
                masks.push(mask);
            }
            let results = self.envs.step(&env_actions)?;
            for (e, r) in results.into_iter().enumerate() {
                self.running[e] += r.reward;
                if r.done {
                    finished_returns.push(self.running[e]);
                    self.running[e] = 0.0;
                }
                rewards.push(r.reward);
                dones.push(r.done);
            }
        }
        let bootstrap_values = net
            .values(self.observation_matrix().view())?
            .iter()
            .map(|&v| v as f64)
            .collect();
        Ok(RolloutBatch {
            n_envs,
            n_steps,
            observations,
            actions,
            log_probs,
            rewards,
            dones,
            values,
            masks,
            bootstrap_values,
            finished_returns,
        })
    }
}

/// Generalized advantage estimates and value targets for a batch laid out
/// `t * n_envs + e`. A done flag at `t` cuts both bootstrapping and the
/// advantage recursion.
pub fn compute_gae(
    rewards: &[f64],
    values: &[f64],
    dones: &[bool],
    bootstrap_values: &[f64],
    gamma: f64,
    lambda: f64,
) -> (Vec<f64>, Vec<f64>) {
    let n_envs = bootstrap_values.len();
    let total = rewards.len();
    assert!(n_envs > 0 && total % n_envs == 0, "batch layout");
    assert!(values.len() == total && dones.len() == total, "batch layout");
    let n_steps = total / n_envs;
    let mut adv = vec![0.0; total];
    for e in 0..n_envs {
        let mut next_adv = 0.0;
        for t in (0..n_steps).rev() {
            let i = t * n_envs + e;
            let next_value = if t + 1 == n_steps {
                bootstrap_values[e]
            } else {
                values[i + n_envs]
            };
            let live = if dones[i] { 0.0 } else { 1.0 };
            let delta = rewards[i] + gamma * next_value * live - values[i];
            next_adv = delta + gamma * lambda * live * next_adv;
            adv[i] = next_adv;
        }
    }
    let returns = adv.iter().zip(values).map(|(a, v)| a + v).collect();
    (adv, returns)
}

/// Shifts and scales to mean 0 and standard deviation 1 (guarded by 1e-8).
pub fn normalize_advantages(adv: &[f64]) -> Vec<f64> {
    let n = adv.len() as f64;
    let mean = adv.iter().sum::<f64>() / n;
    let var = adv.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>() / n;
    let std = var.sqrt();
    adv.iter().map(|a| (a - mean) / (std + 1e-8)).collect()
}

/// The PPO loss on one minibatch:
/// `−mean(min(ρÂ, clip(ρ)Â)) + c_v·mean((V − R)²) − c_ent·mean(H)`.
pub struct SurrogateObjective<'a> {
    pub actions: &'a [&'a Action],
    pub masks: &'a [Option<&'a [bool]>],
    pub old_log_probs: &'a [f32],
    pub advantages: &'a [f32],
    pub returns: &'a [f32],
    pub clip: f32,
    pub value_coef: f32,
    pub entropy_coef: f32,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct LossStats {
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub clip_fraction: f64,
    pub approx_kl: f64,
}

impl SurrogateObjective<'_> {
    fn evaluate_with_stats(&self, out: &PolicyOutput<f32>) -> Result<(f32, OutputGrad<f32>, LossStats), PolicyError> {
        let m = out.len();
        if self.actions.len() != m {
            return Err(PolicyError::ShapeMismatch(format!("minibatch of {m} rows")));
        }
        let inv = 1.0 / m as f32;
        let mut grad = OutputGrad::zeros_like(out);
        let mut stats = LossStats::default();
        let (lo, hi) = (1.0 - self.clip, 1.0 + self.clip);
        for i in 0..m {
            let dist = out.dist(i, self.masks[i])?;
            let lp = dist.log_prob(self.actions[i])?;
            let entropy = dist.entropy();
            let log_ratio = lp - self.old_log_probs[i];
            let ratio = log_ratio.exp();
            let a = self.advantages[i];
            let unclipped = ratio * a;
            let clipped = ratio.clamp(lo, hi) * a;
            // gradient flows only through the unclipped branch when it is the minimum
            let c_logp = if unclipped <= clipped { -unclipped * inv } else { 0.0 };
            let mut row = grad.head.row_mut(i);
            let row = row.as_slice_mut().expect("contiguous head gradient");
            dist.backward(self.actions[i], c_logp, -self.entropy_coef * inv, row, &mut grad.log_std)?;

            let diff = out.values[i] - self.returns[i];
            grad.values[i] = 2.0 * self.value_coef * diff * inv;

            stats.policy_loss -= unclipped.min(clipped) as f64;
            stats.value_loss += (diff * diff) as f64;
            stats.entropy += entropy as f64;
            if (ratio - 1.0).abs() > self.clip {
                stats.clip_fraction += 1.0;
            }
            stats.approx_kl += ((ratio - 1.0) - log_ratio) as f64;
        }
        let mf = m as f64;
        stats.policy_loss /= mf;
        stats.value_loss /= mf;
        stats.entropy /= mf;
        stats.clip_fraction /= mf;
        stats.approx_kl /= mf;
        let loss = stats.policy_loss + self.value_coef as f64 * stats.value_loss - self.entropy_coef as f64 * stats.entropy;
        Ok((loss as f32, grad, stats))
    }
}

impl Objective<f32> for SurrogateObjective<'_> {
    fn evaluate(&self, out: &PolicyOutput<f32>) -> Result<(f32, OutputGrad<f32>), PolicyError> {
        self.evaluate_with_stats(out).map(|(l, g, _)| (l, g))
    }
}

/// Rescales `grad` so its global L2 norm is at most `max_norm`; returns the
/// norm before clipping.
pub fn clip_grad_norm(grad: &mut [f32], max_norm: f64) -> f64 {
    let norm = grad.iter().map(|&g| (g as f64) * (g as f64)).sum::<f64>().sqrt();
    if norm > max_norm {
        let scale = (max_norm / (norm + 1e-6)) as f32;
        grad.iter_mut().for_each(|g| *g *= scale);
    }
    norm
}

/// Epochs of shuffled minibatch updates on one batch. Returns loss statistics
/// averaged over every minibatch.
pub fn ppo_update(
    net: &mut PolicyNet<f32>,
    adam: &mut Adam<f32>,
    batch: &RolloutBatch,
    advantages: &[f64],
    returns: &[f64],
    config: &PpoConfig,
    rng: &mut ChaCha8Rng,
) -> Result<LossStats, PpoError> {
    let n = batch.len();
    let adv: Vec<f32> = normalize_advantages(advantages).iter().map(|&a| a as f32).collect();
    let ret: Vec<f32> = returns.iter().map(|&r| r as f32).collect();
    let mut order: Vec<usize> = (0..n).collect();
    let chunk = n.div_ceil(config.minibatches);
    let mut total = LossStats::default();
    let mut updates = 0usize;
    for _ in 0..config.epochs {
        order.shuffle(rng);
        for idx in order.chunks(chunk) {
            let obs = batch.observations.select(ndarray::Axis(0), idx);
            let actions: Vec<&Action> = idx.iter().map(|&i| &batch.actions[i]).collect();
            let masks: Vec<Option<&[bool]>> = idx.iter().map(|&i| batch.masks[i].as_deref()).collect();
            let old: Vec<f32> = idx.iter().map(|&i| batch.log_probs[i]).collect();
            let a: Vec<f32> = idx.iter().map(|&i| adv[i]).collect();
            let r: Vec<f32> = idx.iter().map(|&i| ret[i]).collect();
            let objective = SurrogateObjective {
                actions: &actions,
                masks: &masks,
                old_log_probs: &old,
                advantages: &a,
                returns: &r,
                clip: config.clip as f32,
                value_coef: config.value_coef as f32,
                entropy_coef: config.entropy_coef as f32,
            };
            let out = net.forward(obs.view())?;
            let (loss, out_grad, stats) = objective.evaluate_with_stats(&out)?;
            let mut grad = net.backward(&out, &out_grad);
            let norm = clip_grad_norm(&mut grad, config.max_grad_norm);
            if !loss.is_finite() || !norm.is_finite() {
                return Err(PpoError::NonFiniteLoss(format!(
                    "loss {loss}, gradient norm {norm}, policy {:.6e}, value {:.6e}, entropy {:.6e}",
                    stats.policy_loss, stats.value_loss, stats.entropy
                )));
            }
            adam.step(net.params_mut(), &grad);
            total.policy_loss += stats.policy_loss;
            total.value_loss += stats.value_loss;
            total.entropy += stats.entropy;
            total.clip_fraction += stats.clip_fraction;
            total.approx_kl += stats.approx_kl;
            updates += 1;
        }
    }
    let u = updates as f64;
    Ok(LossStats {
        policy_loss: total.policy_loss / u,
        value_loss: total.value_loss / u,
        entropy: total.entropy / u,
        clip_fraction: total.clip_fraction / u,
        approx_kl: total.approx_kl / u,
    })
}

/// One record per iteration.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct IterationRecord {
    pub iteration: u64,
    pub env_steps: u64,
    pub mean_return: f64,
    pub episodes_completed: u64,
    pub losses: LossStats,
}

pub struct TrainOutcome {
    pub curve: LearningCurve,
    pub net: PolicyNet<f32>,
    pub records: Vec<IterationRecord>,
}

const RETURN_WINDOW: usize = 100;

/// Independent streams derived from the run seed.
fn derive_seed(seed: u64, stream: u64) -> u64 {
    // splitmix64 finalizer
    let mut z = seed ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Builds the network, environments and transform stack for a run.
pub fn setup(
    config: &PpoConfig,
    env: &EnvSpec,
    transforms: &[Transform],
) -> Result<(PolicyNet<f32>, Collector), PpoError> {
    config.validate()?;
    let stack = TransformStack::apply(env.action_space(), transforms.to_vec())?;
    let head = HeadLayout::for_space(stack.shaped())?;
    let envs = (0..config.n_envs).map(|_| env.build()).collect::<Result<Vec<_>, _>>()?;
    let obs_dim = envs[0].observation_dim();
    let net = PolicyNet::new(NetShape::new(obs_dim, head), derive_seed(config.seed, 1));
    let vec_env = VecEnv::new(envs, derive_seed(config.seed, 2));
    Ok((net, Collector::new(vec_env, stack)))
}

pub fn train(config: &PpoConfig, env: &EnvSpec, transforms: &[Transform]) -> Result<TrainOutcome, PpoError> {
    train_with(config, env, transforms, |_| {})
}

/// Trains and reports each iteration to `on_iteration` as it completes.
pub fn train_with(
    config: &PpoConfig,
    env: &EnvSpec,
    transforms: &[Transform],
    mut on_iteration: impl FnMut(&IterationRecord),
) -> Result<TrainOutcome, PpoError> {
    let (mut net, mut collector) = setup(config, env, transforms)?;
    let mut adam = Adam::new(net.params().len(), config.lr as f32);
    let mut sample_rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, 3));
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, 4));
    let mut window: std::collections::VecDeque<f64> = std::collections::VecDeque::with_capacity(RETURN_WINDOW);
    let mut episodes = 0u64;
    let mut points = Vec::new();
    let mut records = Vec::new();

    for iteration in 0..config.iterations() {
        let at = |source: PpoError| PpoError::AtIteration {
            iteration,
            source: Box::new(source),
        };
        let batch = collector.collect(&net, config.n_steps, &mut sample_rng).map_err(at)?;
        let (adv, ret) = compute_gae(
            &batch.rewards,
            &batch.values,
            &batch.dones,
            &batch.bootstrap_values,
            config.gamma,
            config.lambda,
        );
        let losses = ppo_update(&mut net, &mut adam, &batch, &adv, &ret, config, &mut shuffle_rng).map_err(at)?;

        for &r in &batch.finished_returns {
            if window.len() == RETURN_WINDOW {
                window.pop_front();
            }
            window.push_back(r);
        }
        episodes += batch.finished_returns.len() as u64;
        let (mean, std) = mean_std(window.iter().copied());
        let env_steps = (iteration + 1) * config.batch_size() as u64;
        points.push(CurvePoint {
            env_steps,
            mean_return: mean,
            std_return: std,
            episodes_completed: episodes,
        });
        let record = IterationRecord {
            iteration,
            env_steps,
            mean_return: mean,
            episodes_completed: episodes,
            losses,
        };
        on_iteration(&record);
        records.push(record);
    }
    Ok(TrainOutcome {
        curve: LearningCurve {
            seed: config.seed,
            points,
        },
        net,
        records,
    })
}

/// Population mean and standard deviation; zeros when empty.
pub(crate) fn mean_std(xs: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = xs.clone().count();
    if n == 0 {
        return (0.0, 0.0);
    }
    let mean = xs.clone().sum::<f64>() / n as f64;
    let var = xs.map(|x| (x - mean) * (x - mean)).sum::<f64>() / n as f64;
    (mean, var.sqrt())
}
