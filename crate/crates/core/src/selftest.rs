//! Quick built-in checks: gradients, combination counts, bandit learning.

use ndarray::array;

use crate::envs::EnvSpec;
use crate::policy::{finite_difference_error, random_check_problem};
use crate::ppo::{train, PpoConfig, PpoError};
use crate::shaping::{enumerate_combinations, MaxPressed};
use crate::spaces::{ActionSpace, Bound};

/// Budget within which the bandit must be solved.
pub const BANDIT_STEPS: u64 = 5_000;

/// Trainer settings for the two-armed bandit: default PPO with a short
/// rollout so the budget spans many updates.
pub fn bandit_config(seed: u64) -> PpoConfig {
    PpoConfig {
        n_steps: 16,
        total_timesteps: BANDIT_STEPS,
        seed,
        ..PpoConfig::default()
    }
}

/// Probability of the rewarding arm after training, and the entropy of the
/// policy per iteration.
pub fn bandit_run(seed: u64) -> Result<(f64, Vec<f64>, Vec<f64>), PpoError> {
    let outcome = train(&bandit_config(seed), &EnvSpec::Bandit, &[])?;
    let out = outcome.net.forward(array![[1.0f32]].view())?;
    let p = out.dist(0, None)?.probabilities()[1] as f64;
    let entropy = outcome.records.iter().map(|r| r.losses.entropy).collect();
    let returns = outcome.records.iter().map(|r| r.mean_return).collect();
    Ok((p, entropy, returns))
}

fn binomial(n: u128, k: u128) -> u128 {
    (0..k).fold(1, |acc, i| acc * (n - i) / (i + 1))
}

/// Counts of press-limited combinations against the binomial sum for
/// up to ten binary buttons.
pub fn combination_counts_hold() -> bool {
    (1..=10usize).all(|b| {
        let arities = vec![2; b];
        [MaxPressed::Limit(1), MaxPressed::Limit(2), MaxPressed::All].iter().all(|&m| {
            let limit = match m {
                MaxPressed::All => b,
                MaxPressed::Limit(n) => n.min(b),
            };
            let expected: u128 = (0..=limit as u128).map(|k| binomial(b as u128, k)).sum();
            enumerate_combinations(&arities, m).len() as u128 == expected
        })
    })
}

/// Worst relative gradient error over `count` random problems covering
/// categorical, factored and Gaussian heads.
pub fn gradient_check(count: u64) -> Result<f64, crate::error::PolicyError> {
    let spaces = [
        ActionSpace::Discrete(4),
        ActionSpace::MultiDiscrete(vec![2, 3]),
        ActionSpace::Continuous(vec![Bound { low: 0.0, high: 360.0 }]),
    ];
    let mut worst = 0.0f64;
    for i in 0..count {
        let space = &spaces[(i % 3) as usize];
        let (net, obs, obj) = random_check_problem(space, i % 2 == 1, 1_000 + i)?;
        worst = worst.max(finite_difference_error(&net, &obj, &obs, 1e-5)?);
    }
    Ok(worst)
}

pub struct CheckLine {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

pub fn run_all() -> Vec<CheckLine> {
    let mut lines = Vec::new();
    match gradient_check(24) {
        Ok(err) => lines.push(CheckLine {
            name: "gradient check",
            passed: err < 1e-4,
            detail: format!("max relative error {err:.3e} over 24 nets"),
        }),
        Err(e) => lines.push(CheckLine { name: "gradient check", passed: false, detail: e.to_string() }),
    }
    lines.push(CheckLine {
        name: "combination counts",
        passed: combination_counts_hold(),
        detail: "B <= 10, n in {1, 2, all}".into(),
    });
    let mut probs = Vec::new();
    let mut error = None;
    for seed in 0..5 {
        match bandit_run(seed) {
            Ok((p, _, _)) => probs.push(p),
            Err(e) => error = Some(e.to_string()),
        }
    }
    lines.push(CheckLine {
        name: "bandit convergence",
        passed: error.is_none() && probs.iter().all(|&p| p > 0.95),
        detail: error.unwrap_or_else(|| format!("P(best arm) per seed {probs:.4?}")),
    });
    lines
}
