use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::net::{HeadLayout, NetShape, Objective, OutputGrad, PolicyNet, PolicyOutput};
use super::Scalar;
use crate::error::PolicyError;
use crate::spaces::{Action, ActionSpace};

/// `Σ w_i log π(a_i|s_i) + c_ent Σ H(π(·|s_i)) + ½ c_v Σ (V(s_i) − t_i)²`.
///
/// Smooth everywhere, so it serves as the finite-difference target.
#[derive(Clone, Debug)]
pub struct WeightedObjective {
    pub actions: Vec<Action>,
    pub masks: Vec<Option<Vec<bool>>>,
    pub logp_weights: Vec<f64>,
    pub entropy_coef: f64,
    pub value_coef: f64,
    pub value_targets: Vec<f64>,
}

impl<F: Scalar> Objective<F> for WeightedObjective {
    fn evaluate(&self, out: &PolicyOutput<F>) -> Result<(F, OutputGrad<F>), PolicyError> {
        let n = out.len();
        if self.actions.len() != n || self.value_targets.len() != n || self.logp_weights.len() != n {
            return Err(PolicyError::ShapeMismatch(format!("objective for a batch of {n}")));
        }
        let mut grad = OutputGrad::zeros_like(out);
        let mut loss = F::zero();
        let c_ent = F::from_f64_lossy(self.entropy_coef);
        let c_v = F::from_f64_lossy(self.value_coef);
        for i in 0..n {
            let dist = out.dist(i, self.masks.get(i).and_then(|m| m.as_deref()))?;
            let w = F::from_f64_lossy(self.logp_weights[i]);
            loss += w * dist.log_prob(&self.actions[i])? + c_ent * dist.entropy();
            let mut row = grad.head.row_mut(i);
            let row = row.as_slice_mut().expect("contiguous head gradient");
            dist.backward(&self.actions[i], w, c_ent, row, &mut grad.log_std)?;

            let diff = out.values[i] - F::from_f64_lossy(self.value_targets[i]);
            loss += F::from_f64_lossy(0.5) * c_v * diff * diff;
            grad.values[i] = c_v * diff;
        }
        Ok((loss, grad))
    }
}

/// Largest relative error between analytic and central-difference gradients,
/// `|a − n| / max(|a|, |n|, 1e-6)`, over every parameter.
pub fn finite_difference_error<O: Objective<f64>>(
    net: &PolicyNet<f64>,
    objective: &O,
    obs: &Array2<f64>,
    step: f64,
) -> Result<f64, PolicyError> {
    let (_, analytic) = net.gradients(objective, obs.view())?;
    let mut probe = net.clone();
    let mut worst = 0.0f64;
    for (k, &a) in analytic.iter().enumerate() {
        let orig = probe.params()[k];
        probe.params_mut()[k] = orig + step;
        let (up, _) = objective.evaluate(&probe.forward(obs.view())?)?;
        probe.params_mut()[k] = orig - step;
        let (down, _) = objective.evaluate(&probe.forward(obs.view())?)?;
        probe.params_mut()[k] = orig;
        let numeric = (up - down) / (2.0 * step);
        let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-6);
        worst = worst.max(rel);
    }
    Ok(worst)
}

/// A small random network, batch and objective for `space`, with parameters
/// large enough that every path carries gradient.
pub fn random_check_problem(
    space: &ActionSpace,
    masked: bool,
    seed: u64,
) -> Result<(PolicyNet<f64>, Array2<f64>, WeightedObjective), PolicyError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let head = HeadLayout::for_space(space)?;
    let obs_dim = rng.random_range(1..=4);
    let shape = NetShape {
        obs_dim,
        hidden: vec![rng.random_range(2..=6), rng.random_range(2..=6)],
        head,
    };
    let mut net = PolicyNet::<f64>::new(shape.clone(), rng.random());
    for p in net.params_mut() {
        *p += 0.5 * f64::standard_normal(&mut rng);
    }
    let batch = rng.random_range(1..=5);
    let obs = Array2::from_shape_fn((batch, obs_dim), |_| f64::standard_normal(&mut rng));
    let mut masks = Vec::with_capacity(batch);
    let mut actions = Vec::with_capacity(batch);
    for _ in 0..batch {
        let mask = (masked && shape.head.mask_len() > 0).then(|| random_mask(&shape.head, &mut rng));
        actions.push(random_action(space, mask.as_deref(), &shape.head, &mut rng));
        masks.push(mask);
    }
    let objective = WeightedObjective {
        actions,
        masks,
        logp_weights: (0..batch).map(|_| f64::standard_normal(&mut rng)).collect(),
        entropy_coef: rng.random_range(-1.0..1.0),
        value_coef: rng.random_range(0.1..1.0),
        value_targets: (0..batch).map(|_| f64::standard_normal(&mut rng)).collect(),
    };
    Ok((net, obs, objective))
}

fn random_mask(head: &HeadLayout, rng: &mut ChaCha8Rng) -> Vec<bool> {
    let blocks = match head {
        HeadLayout::Categorical { n } => vec![*n],
        HeadLayout::Factored { arities } => arities.clone(),
        HeadLayout::Gaussian { .. } => return Vec::new(),
    };
    let mut mask = Vec::new();
    for n in blocks {
        let keep = rng.random_range(0..n);
        mask.extend((0..n).map(|j| j == keep || rng.random_bool(0.5)));
    }
    mask
}

fn random_action(space: &ActionSpace, mask: Option<&[bool]>, head: &HeadLayout, rng: &mut ChaCha8Rng) -> Action {
    let pick = |offset: usize, n: usize, rng: &mut ChaCha8Rng| loop {
        let j = rng.random_range(0..n);
        if mask.is_none_or(|m| m[offset + j]) {
            return j;
        }
    };
    match head {
        HeadLayout::Categorical { n } => Action::Index(pick(0, *n, rng)),
        HeadLayout::Factored { arities } => {
            let mut offset = 0;
            Action::Indices(
                arities
                    .iter()
                    .map(|&n| {
                        let j = pick(offset, n, rng);
                        offset += n;
                        j
                    })
                    .collect(),
            )
        }
        HeadLayout::Gaussian { .. } => space.sample_uniform(rng),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spaces::Bound;

    fn spaces() -> Vec<ActionSpace> {
        vec![
            ActionSpace::Discrete(5),
            ActionSpace::Discrete(2),
            ActionSpace::MultiDiscrete(vec![2, 3, 2]),
            ActionSpace::Continuous(vec![Bound { low: 0.0, high: 360.0 }]),
            ActionSpace::Continuous(vec![Bound { low: -1.0, high: 1.0 }, Bound { low: -3.0, high: 0.5 }]),
        ]
    }

    #[test]
    fn analytic_gradients_match_finite_differences() {
        let mut checked = 0;
        for seed in 0..8u64 {
            for (s, space) in spaces().iter().enumerate() {
                for masked in [false, true] {
                    let (net, obs, obj) = random_check_problem(space, masked, seed * 100 + s as u64).unwrap();
                    let err = finite_difference_error(&net, &obj, &obs, 1e-5).unwrap();
                    assert!(err < 1e-4, "{space} masked={masked} seed={seed}: {err:e}");
                    checked += 1;
                }
            }
        }
        assert!(checked >= 20);
    }

    #[test]
    fn full_size_network_gradient() {
        let space = ActionSpace::MultiDiscrete(vec![2, 2, 2, 2]);
        let (mut net, obs, obj) = random_check_problem(&space, false, 77).unwrap();
        net = PolicyNet::new(NetShape::new(net.shape().obs_dim, net.shape().head.clone()), 4);
        let err = finite_difference_error(&net, &obj, &obs, 1e-5).unwrap();
        assert!(err < 1e-4, "{err:e}");
    }

    struct Constant;
    impl Objective<f64> for Constant {
        fn evaluate(&self, out: &PolicyOutput<f64>) -> Result<(f64, OutputGrad<f64>), PolicyError> {
            Ok((3.0, OutputGrad::zeros_like(out)))
        }
    }

    #[test]
    fn constant_loss_has_zero_gradient() {
        let (net, obs, _) = random_check_problem(&ActionSpace::Discrete(3), false, 1).unwrap();
        let (loss, g) = net.gradients(&Constant, obs.view()).unwrap();
        assert_eq!(loss, 3.0);
        assert!(g.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn gradient_is_linear_in_the_loss() {
        for (i, space) in spaces().iter().enumerate() {
            let (net, obs, l1) = random_check_problem(space, false, 40 + i as u64).unwrap();
            let mut l2 = l1.clone();
            l2.logp_weights.iter_mut().for_each(|w| *w = -0.7 * *w + 0.2);
            l2.entropy_coef = 0.3;
            l2.value_targets.iter_mut().for_each(|t| *t += 1.0);
            let (a, b) = (1.7, -0.4);
            // a·L1 + b·L2 is again a weighted objective apart from the value term
            let combo = Sum { a, b, l1: &l1, l2: &l2 };
            let (_, g1) = net.gradients(&l1, obs.view()).unwrap();
            let (_, g2) = net.gradients(&l2, obs.view()).unwrap();
            let (_, g) = net.gradients(&combo, obs.view()).unwrap();
            for k in 0..g.len() {
                assert!((g[k] - (a * g1[k] + b * g2[k])).abs() < 1e-10);
            }
        }
    }

    struct Sum<'a> {
        a: f64,
        b: f64,
        l1: &'a WeightedObjective,
        l2: &'a WeightedObjective,
    }

    impl Objective<f64> for Sum<'_> {
        fn evaluate(&self, out: &PolicyOutput<f64>) -> Result<(f64, OutputGrad<f64>), PolicyError> {
            let (v1, g1) = self.l1.evaluate(out)?;
            let (v2, g2) = self.l2.evaluate(out)?;
            let grad = OutputGrad {
                head: &g1.head * self.a + &g2.head * self.b,
                values: &g1.values * self.a + &g2.values * self.b,
                log_std: g1.log_std.iter().zip(&g2.log_std).map(|(x, y)| self.a * x + self.b * y).collect(),
            };
            Ok((self.a * v1 + self.b * v2, grad))
        }
    }

    #[test]
    fn masked_logits_get_exactly_zero_gradient() {
        for seed in 0..20 {
            for space in [ActionSpace::Discrete(6), ActionSpace::MultiDiscrete(vec![3, 2, 4])] {
                let (net, obs, obj) = random_check_problem(&space, true, seed).unwrap();
                let out = net.forward(obs.view()).unwrap();
                let (_, grad) = obj.evaluate(&out).unwrap();
                for (i, mask) in obj.masks.iter().enumerate() {
                    let mask = mask.as_ref().unwrap();
                    for (j, &avail) in mask.iter().enumerate() {
                        if !avail {
                            assert_eq!(grad.head[[i, j]].to_bits(), 0.0f64.to_bits());
                        }
                    }
                }
            }
        }
    }
}
