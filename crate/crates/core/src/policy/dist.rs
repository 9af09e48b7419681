use rand::Rng;

use super::net::HeadLayout;
use super::Scalar;
use crate::error::PolicyError;
use crate::spaces::Action;

/// Log-softmax with max subtraction. Masked-out entries get `-inf`.
pub fn log_softmax<F: Scalar>(logits: &[F], mask: Option<&[bool]>) -> Result<Vec<F>, PolicyError> {
    if let Some(m) = mask {
        if m.len() != logits.len() {
            return Err(PolicyError::ShapeMismatch(format!(
                "mask of length {} for {} logits",
                m.len(),
                logits.len()
            )));
        }
    }
    let available = |i: usize| mask.is_none_or(|m| m[i]);
    let max = logits
        .iter()
        .enumerate()
        .filter(|(i, _)| available(*i))
        .map(|(_, &z)| z)
        .fold(None, |acc: Option<F>, z| Some(acc.map_or(z, |a| a.max(z))))
        .ok_or(PolicyError::AllMasked)?;
    let sum = logits
        .iter()
        .enumerate()
        .filter(|(i, _)| available(*i))
        .fold(F::zero(), |acc, (_, &z)| acc + (z - max).exp());
    let log_sum = sum.ln();
    Ok(logits
        .iter()
        .enumerate()
        .map(|(i, &z)| {
            if available(i) {
                (z - max) - log_sum
            } else {
                F::neg_infinity()
            }
        })
        .collect())
}

/// Entropy from log-probabilities; `-inf` entries contribute nothing.
pub fn categorical_entropy<F: Scalar>(log_probs: &[F]) -> F {
    log_probs
        .iter()
        .filter(|lp| lp.is_finite())
        .fold(F::zero(), |acc, &lp| acc - lp.exp() * lp)
}

fn sample_categorical<F: Scalar, R: Rng + ?Sized>(log_probs: &[F], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut cum = 0.0;
    let mut last = 0;
    for (i, lp) in log_probs.iter().enumerate() {
        if !lp.is_finite() {
            continue;
        }
        cum += lp.exp().to_f64_lossless();
        last = i;
        if u < cum {
            return i;
        }
    }
    last
}

/// d(log p_a)/dz and dH/dz for a (possibly masked) softmax, accumulated as
/// `c_logp * dlogp + c_ent * dH`. Masked logits receive exactly zero.
fn categorical_backward<F: Scalar>(
    log_probs: &[F],
    action: Option<usize>,
    c_logp: F,
    c_ent: F,
    out: &mut [F],
) {
    let entropy = categorical_entropy(log_probs);
    for (j, (&lp, g)) in log_probs.iter().zip(out.iter_mut()).enumerate() {
        if !lp.is_finite() {
            continue;
        }
        let p = lp.exp();
        let mut d = F::zero();
        if let Some(a) = action {
            let indicator = if a == j { F::one() } else { F::zero() };
            d = d + c_logp * (indicator - p);
        }
        d = d - c_ent * p * (lp + entropy);
        *g = *g + d;
    }
}

/// Action distribution for one observation.
#[derive(Clone, Debug, PartialEq)]
pub enum ActionDist<F> {
    Categorical {
        log_probs: Vec<F>,
    },
    Factored {
        log_probs: Vec<Vec<F>>,
    },
    /// Diagonal Gaussian; `scale` maps head units onto each bound.
    Gaussian {
        mean: Vec<F>,
        log_std: Vec<F>,
        scale: Vec<F>,
    },
}

impl<F: Scalar> ActionDist<F> {
    pub fn from_head(
        layout: &HeadLayout,
        head: &[F],
        log_std: &[F],
        mask: Option<&[bool]>,
    ) -> Result<Self, PolicyError> {
        if head.len() != layout.width() {
            return Err(PolicyError::ShapeMismatch(format!(
                "head row of {} for a head of width {}",
                head.len(),
                layout.width()
            )));
        }
        match layout {
            HeadLayout::Categorical { .. } => Ok(ActionDist::Categorical {
                log_probs: log_softmax(head, mask)?,
            }),
            HeadLayout::Factored { arities } => {
                if let Some(m) = mask {
                    if m.len() != head.len() {
                        return Err(PolicyError::ShapeMismatch(format!(
                            "mask of length {} for {} logits",
                            m.len(),
                            head.len()
                        )));
                    }
                }
                let mut offset = 0;
                let mut log_probs = Vec::with_capacity(arities.len());
                for &n in arities {
                    let block_mask = mask.map(|m| &m[offset..offset + n]);
                    log_probs.push(log_softmax(&head[offset..offset + n], block_mask)?);
                    offset += n;
                }
                Ok(ActionDist::Factored { log_probs })
            }
            HeadLayout::Gaussian { bounds } => {
                if mask.is_some() {
                    return Err(PolicyError::ShapeMismatch(
                        "continuous heads cannot be masked".into(),
                    ));
                }
                let mut mean = Vec::with_capacity(bounds.len());
                let mut log_sd = Vec::with_capacity(bounds.len());
                let mut scale = Vec::with_capacity(bounds.len());
                for ((b, &z), &s) in bounds.iter().zip(head).zip(log_std) {
                    let r = F::from_f64_lossy(b.half_range());
                    mean.push(F::from_f64_lossy(b.center()) + r * z);
                    log_sd.push(r.ln() + s);
                    scale.push(r);
                }
                Ok(ActionDist::Gaussian {
                    mean,
                    log_std: log_sd,
                    scale,
                })
            }
        }
    }

    /// Probabilities of a categorical head (concatenated for factored heads).
    pub fn probabilities(&self) -> Vec<F> {
        let exp = |lp: &F| if lp.is_finite() { lp.exp() } else { F::zero() };
        match self {
            ActionDist::Categorical { log_probs } => log_probs.iter().map(exp).collect(),
            ActionDist::Factored { log_probs } => log_probs.iter().flatten().map(exp).collect(),
            ActionDist::Gaussian { .. } => Vec::new(),
        }
    }

    pub fn entropy(&self) -> F {
        match self {
            ActionDist::Categorical { log_probs } => categorical_entropy(log_probs),
            ActionDist::Factored { log_probs } => log_probs
                .iter()
                .fold(F::zero(), |acc, lp| acc + categorical_entropy(lp)),
            ActionDist::Gaussian { log_std, .. } => {
                let c = F::from_f64_lossy(0.5 * (1.0 + (2.0 * std::f64::consts::PI).ln()));
                log_std.iter().fold(F::zero(), |acc, &s| acc + c + s)
            }
        }
    }

    pub fn log_prob(&self, action: &Action) -> Result<F, PolicyError> {
        let out_of_range = || PolicyError::OutOfRange(action.to_string());
        match (self, action) {
            (ActionDist::Categorical { log_probs }, Action::Index(i)) => {
                let lp = *log_probs.get(*i).ok_or_else(out_of_range)?;
                Ok(lp)
            }
            (ActionDist::Factored { log_probs }, Action::Indices(idx)) if idx.len() == log_probs.len() => {
                let mut total = F::zero();
                for (lp, &i) in log_probs.iter().zip(idx) {
                    total = total + *lp.get(i).ok_or_else(out_of_range)?;
                }
                Ok(total)
            }
            (ActionDist::Gaussian { mean, log_std, .. }, Action::Reals(x)) if x.len() == mean.len() => {
                let half_log_2pi = F::from_f64_lossy(0.5 * (2.0 * std::f64::consts::PI).ln());
                let half = F::from_f64_lossy(0.5);
                let mut total = F::zero();
                for ((&m, &s), &xv) in mean.iter().zip(log_std).zip(x) {
                    let z = (F::from_f64_lossy(xv) - m) / s.exp();
                    total = total - half * z * z - s - half_log_2pi;
                }
                Ok(total)
            }
            _ => Err(out_of_range()),
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Action {
        match self {
            ActionDist::Categorical { log_probs } => Action::Index(sample_categorical(log_probs, rng)),
            ActionDist::Factored { log_probs } => {
                Action::Indices(log_probs.iter().map(|lp| sample_categorical(lp, rng)).collect())
            }
            ActionDist::Gaussian { mean, log_std, .. } => Action::Reals(
                mean.iter()
                    .zip(log_std)
                    .map(|(&m, &s)| (m + s.exp() * F::standard_normal(rng)).to_f64_lossless())
                    .collect(),
            ),
        }
    }

    /// Accumulates `c_logp * d(log p(action)) + c_ent * dH` into the head-row
    /// and log-std gradients.
    pub fn backward(
        &self,
        action: &Action,
        c_logp: F,
        c_ent: F,
        head_grad: &mut [F],
        log_std_grad: &mut [F],
    ) -> Result<(), PolicyError> {
        let out_of_range = || PolicyError::OutOfRange(action.to_string());
        match (self, action) {
            (ActionDist::Categorical { log_probs }, Action::Index(i)) if *i < log_probs.len() => {
                categorical_backward(log_probs, Some(*i), c_logp, c_ent, head_grad);
            }
            (ActionDist::Factored { log_probs }, Action::Indices(idx)) if idx.len() == log_probs.len() => {
                let mut offset = 0;
                for (lp, &i) in log_probs.iter().zip(idx) {
                    if i >= lp.len() {
                        return Err(out_of_range());
                    }
                    let n = lp.len();
                    categorical_backward(lp, Some(i), c_logp, c_ent, &mut head_grad[offset..offset + n]);
                    offset += n;
                }
            }
            (ActionDist::Gaussian { mean, log_std, scale }, Action::Reals(x)) if x.len() == mean.len() => {
                for d in 0..mean.len() {
                    let inv_var = (-(log_std[d] + log_std[d])).exp();
                    let diff = F::from_f64_lossy(x[d]) - mean[d];
                    head_grad[d] = head_grad[d] + c_logp * scale[d] * diff * inv_var;
                    log_std_grad[d] = log_std_grad[d] + c_logp * (diff * diff * inv_var - F::one()) + c_ent;
                }
            }
            _ => return Err(out_of_range()),
        }
        Ok(())
    }
}

/// Draws an action and returns it with its log-probability and the
/// distribution's entropy.
pub fn sample_and_logprob<F: Scalar, R: Rng + ?Sized>(dist: &ActionDist<F>, rng: &mut R) -> (Action, F, F) {
    let action = dist.sample(rng);
    let lp = dist.log_prob(&action).expect("sampled action lies in its own distribution");
    (action, lp, dist.entropy())
}

pub fn evaluate_logprob<F: Scalar>(dist: &ActionDist<F>, action: &Action) -> Result<(F, F), PolicyError> {
    Ok((dist.log_prob(action)?, dist.entropy()))
}
