//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit if any
//! criterion fails.

use std::collections::HashMap;
use std::time::Instant;

use actshape::envs::{ActionMode, BogusBase, ControlVariant, EnvSpec, EnvState, GetToGoalParams, step};
use actshape::harness::LearningCurve;
use actshape::policy::{finite_difference_error, random_check_problem};
use actshape::ppo::{compute_gae, train, PpoConfig};
use actshape::selftest::bandit_run;
use actshape::shaping::{enumerate_combinations, mask_probabilities, MaxPressed, Transform, TransformStack};
use actshape::spaces::{Action, ActionSpace, Bound};
use actshape::policy::Objective;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

const BUDGET: u64 = 250_000;
const ORDERING_SEEDS: u64 = 10;
const ORDERING_MIN_SEEDS: usize = 7;
const SOLVED_RETURN: f64 = 0.9;
const SOLVED_MIN_SEEDS: usize = 9;
const SWEEP_SEEDS: u64 = 5;
const GRAD_TOL: f64 = 1e-4;
const GRAD_NETS: u64 = 30;
const FD_STEP: f64 = 1e-5;
const GAE_TOL: f64 = 1e-10;
const BANDIT_P: f64 = 0.95;
const MASK_TOL: f64 = 1e-12;
const EQUIV_STATES: usize = 1000;

struct Outcome {
    passed: bool,
    detail: String,
}

fn run_variant(variant: ControlVariant, seeds: u64) -> Vec<LearningCurve> {
    (0..seeds)
        .into_par_iter()
        .map(|seed| {
            let config = PpoConfig { seed, total_timesteps: BUDGET, ..PpoConfig::default() };
            train(&config, &EnvSpec::get_to_goal(variant), &[]).expect("training run").curve
        })
        .collect()
}

struct Runs {
    cache: HashMap<String, Vec<LearningCurve>>,
}

impl Runs {
    fn get(&mut self, variant: ControlVariant, seeds: u64) -> &[LearningCurve] {
        let key = format!("{}#{seeds}", serde_json::to_string(&variant).unwrap());
        self.cache.entry(key).or_insert_with(|| run_variant(variant, seeds))
    }

    fn aucs(&mut self, variant: ControlVariant, seeds: u64) -> Vec<f64> {
        self.get(variant, seeds).iter().map(LearningCurve::auc).collect()
    }
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn wins(a: &[f64], b: &[f64]) -> usize {
    a.iter().zip(b).filter(|(x, y)| x > y).count()
}

fn fmt(xs: &[f64]) -> String {
    let v: Vec<String> = xs.iter().map(|x| format!("{x:.3}")).collect();
    format!("[{}]", v.join(" "))
}

fn tank(multi: bool, backward: bool, strafe: bool) -> ControlVariant {
    if multi {
        ControlVariant::TankMultidiscrete { allow_backward: backward, allow_strafe: strafe }
    } else {
        ControlVariant::TankDiscrete { allow_backward: backward, allow_strafe: strafe }
    }
}

fn criterion_1(runs: &mut Runs) -> Outcome {
    let d = runs.aucs(ControlVariant::DiscreteXy, ORDERING_SEEDS);
    let md = runs.aucs(ControlVariant::MultidiscreteXy, ORDERING_SEEDS);
    let tk = runs.aucs(tank(false, true, false), ORDERING_SEEDS);
    let c = runs.aucs(ControlVariant::ContinuousAngle, ORDERING_SEEDS);
    let strict = |a: &[f64], b: &[f64]| mean(a) > mean(b) && wins(a, b) >= ORDERING_MIN_SEEDS;
    let passed = strict(&d, &tk) && strict(&md, &tk) && strict(&d, &c);
    Outcome {
        passed,
        detail: format!(
            "mean AUC D {:.3} MD {:.3} TankD {:.3} Cont {:.3}; seeds D>Tank {}/10, MD>Tank {}/10, D>Cont {}/10; |D-MD| {:.3} (reported)",
            mean(&d),
            mean(&md),
            mean(&tk),
            mean(&c),
            wins(&d, &tk),
            wins(&md, &tk),
            wins(&d, &c),
            (mean(&d) - mean(&md)).abs()
        ),
    }
}

fn criterion_2(runs: &mut Runs) -> Outcome {
    let solved = |runs: &mut Runs, v| {
        runs.get(v, ORDERING_SEEDS).iter().filter(|c| c.final_return() >= SOLVED_RETURN).count()
    };
    let d = solved(runs, ControlVariant::DiscreteXy);
    let md = solved(runs, ControlVariant::MultidiscreteXy);
    Outcome {
        passed: d >= SOLVED_MIN_SEEDS && md >= SOLVED_MIN_SEEDS,
        detail: format!("final return >= {SOLVED_RETURN}: DiscreteXY {d}/10, MultiDiscreteXY {md}/10"),
    }
}

fn criterion_3(runs: &mut Runs) -> Outcome {
    let extra = |k, mode| ControlVariant::ExtraDirections { k, mode };
    let bogus = |k, base| ControlVariant::BogusActions { base, k };
    let e_d4 = mean(&runs.aucs(extra(4, ActionMode::Discrete), SWEEP_SEEDS));
    let e_d32 = mean(&runs.aucs(extra(32, ActionMode::Discrete), SWEEP_SEEDS));
    let e_m32 = mean(&runs.aucs(extra(32, ActionMode::MultiDiscrete), SWEEP_SEEDS));
    let b_d4 = mean(&runs.aucs(bogus(4, BogusBase::DiscreteXy), SWEEP_SEEDS));
    let b_d32 = mean(&runs.aucs(bogus(32, BogusBase::DiscreteXy), SWEEP_SEEDS));
    let b_m32 = mean(&runs.aucs(bogus(32, BogusBase::MultidiscreteXy), SWEEP_SEEDS));
    let passed = e_m32 >= e_d32 && b_m32 >= b_d32 && e_d32 < e_d4 && b_d32 < b_d4;
    Outcome {
        passed,
        detail: format!(
            "extra: MD32 {e_m32:.3} vs D32 {e_d32:.3}, D4 {e_d4:.3}; bogus: MD32 {b_m32:.3} vs D32 {b_d32:.3}, D4 {b_d4:.3}"
        ),
    }
}

fn criterion_4(runs: &mut Runs) -> Outcome {
    let mut parts = Vec::new();
    let mut passed = true;
    for (multi, label) in [(false, "Discrete"), (true, "MultiDiscrete")] {
        let full = runs.aucs(tank(multi, true, true), ORDERING_SEEDS);
        let minimal = runs.aucs(tank(multi, false, false), ORDERING_SEEDS);
        passed &= mean(&full) <= mean(&minimal);
        parts.push(format!(
            "{label}: backward+strafe {:.3} {} vs minimal {:.3} {}",
            mean(&full),
            fmt(&full),
            mean(&minimal),
            fmt(&minimal)
        ));
    }
    Outcome { passed, detail: parts.join("; ") }
}

fn criterion_5() -> Outcome {
    let spaces = [
        ActionSpace::Discrete(5),
        ActionSpace::MultiDiscrete(vec![2, 3, 2]),
        ActionSpace::Continuous(vec![Bound { low: 0.0, high: 360.0 }]),
    ];
    let mut worst = [0.0f64; 3];
    for i in 0..GRAD_NETS {
        let h = (i % 3) as usize;
        let (net, obs, obj) = random_check_problem(&spaces[h], i % 2 == 0, 50_000 + i).unwrap();
        worst[h] = worst[h].max(finite_difference_error(&net, &obj, &obs, FD_STEP).unwrap());
    }
    let max = worst.iter().cloned().fold(0.0, f64::max);
    Outcome {
        passed: max < GRAD_TOL,
        detail: format!(
            "{GRAD_NETS} nets, max relative error categorical {:.2e} factored {:.2e} gaussian {:.2e}",
            worst[0], worst[1], worst[2]
        ),
    }
}

fn odometer(arities: &[usize]) -> Vec<Vec<usize>> {
    let total: usize = arities.iter().product();
    (0..total)
        .map(|mut i| {
            let mut v = vec![0; arities.len()];
            for d in (0..arities.len()).rev() {
                v[d] = i % arities[d];
                i /= arities[d];
            }
            v
        })
        .collect()
}

fn criterion_6() -> Outcome {
    let mut count_ok = true;
    for b in 1..=10usize {
        let tuples = odometer(&vec![2; b]);
        for (m, limit) in [(MaxPressed::Limit(1), 1), (MaxPressed::Limit(2), 2), (MaxPressed::All, b)] {
            let brute = tuples.iter().filter(|t| t.iter().sum::<usize>() <= limit).count();
            count_ok &= enumerate_combinations(&vec![2; b], m).len() == brute;
        }
    }
    let mut shapes: Vec<Vec<usize>> = vec![vec![4096], vec![2; 12], vec![64, 64], vec![16, 16, 16], vec![3, 5, 7, 11]];
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    while shapes.len() < 200 {
        let dims = rng.random_range(1..=6);
        let v: Vec<usize> = (0..dims).map(|_| rng.random_range(2..=9)).collect();
        if v.iter().product::<usize>() <= 4096 {
            shapes.push(v);
        }
    }
    let mut bijective = true;
    for arities in &shapes {
        let stack = TransformStack::apply(
            ActionSpace::MultiDiscrete(arities.clone()),
            vec![Transform::Flatten { max_pressed: MaxPressed::All }],
        )
        .unwrap();
        let n: usize = arities.iter().product();
        bijective &= stack.shaped() == &ActionSpace::Discrete(n);
        let mut decoded: Vec<Vec<usize>> = (0..n)
            .map(|i| match stack.decode(&Action::Index(i)).unwrap() {
                Action::Indices(v) => v,
                _ => Vec::new(),
            })
            .collect();
        decoded.sort();
        bijective &= decoded == odometer(arities);
    }
    Outcome {
        passed: count_ok && bijective,
        detail: format!(
            "subset counts B<=10 n in {{1,2,all}}: {}; flatten bijection on {} arity vectors (product <= 4096): {}",
            if count_ok { "exact" } else { "MISMATCH" },
            shapes.len(),
            if bijective { "verified" } else { "BROKEN" }
        ),
    }
}

fn random_state(rng: &mut ChaCha8Rng) -> EnvState {
    EnvState {
        player: [rng.random_range(-1.0..=1.0), rng.random_range(-1.0..=1.0)],
        heading_deg: rng.random_range(0.0..360.0),
        goal: [rng.random_range(-1.0..=1.0), rng.random_range(-1.0..=1.0)],
        steps_elapsed: rng.random_range(0..100),
    }
}

fn same_step(a: &GetToGoalParams, x: &Action, b: &GetToGoalParams, y: &Action, s: &EnvState) -> bool {
    let (sa, ra) = step(s, a, x).unwrap();
    let (sb, rb) = step(s, b, y).unwrap();
    let bits = |t: &EnvState| [t.player[0], t.player[1], t.heading_deg].map(f64::to_bits);
    bits(&sa) == bits(&sb) && ra == rb && sa.steps_elapsed == sb.steps_elapsed
}

fn criterion_7() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let states: Vec<EnvState> = (0..EQUIV_STATES).map(|_| random_state(&mut rng)).collect();
    let cont = GetToGoalParams::new(ControlVariant::ContinuousAngle);
    let mut dc_cases = 0;
    let mut dc_ok = true;
    for k in [3usize, 5, 9, 17, 33, 65] {
        let half = 180.0 * (k - 1) as f64 / k as f64;
        let stack = TransformStack::apply(
            cont.action_space(),
            vec![Transform::Discretize { target: 0, bins: k, magnitude: half, center: half }],
        )
        .unwrap();
        let extra = GetToGoalParams::new(ControlVariant::ExtraDirections { k, mode: ActionMode::Discrete });
        for b in 0..k {
            let angle = stack.decode(&Action::Index(b)).unwrap();
            for s in &states {
                dc_ok &= same_step(&cont, &angle, &extra, &Action::Index(b), s);
                dc_cases += 1;
            }
        }
    }
    let md = GetToGoalParams::new(ControlVariant::MultidiscreteXy);
    let flat = TransformStack::apply(md.action_space(), vec![Transform::Flatten { max_pressed: MaxPressed::All }]).unwrap();
    let mut cmd_ok = true;
    let mut cmd_cases = 0;
    for combo in &odometer(&[2; 4]) {
        let idx = flat.combination_table().unwrap().iter().position(|c| c == combo).unwrap();
        let decoded = flat.decode(&Action::Index(idx)).unwrap();
        for s in &states {
            cmd_ok &= same_step(&md, &decoded, &md, &Action::Indices(combo.clone()), s);
            cmd_cases += 1;
        }
    }
    Outcome {
        passed: dc_ok && cmd_ok,
        detail: format!(
            "DC==ExtraDirections bitwise over {dc_cases} (bin, state) pairs: {dc_ok}; CMD==MultiDiscrete over {cmd_cases}: {cmd_ok}"
        ),
    }
}

fn criterion_8() -> Outcome {
    let probs: Vec<f64> = (0..5).map(|s| bandit_run(s).unwrap().0).collect();
    let bandit_ok = probs.iter().all(|&p| p > BANDIT_P);

    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut gae_err = 0.0f64;
    for _ in 0..1000 {
        let n = rng.random_range(1..10);
        let r: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let v: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let d: Vec<bool> = (0..n).map(|_| rng.random_bool(0.25)).collect();
        let boot = rng.random_range(-1.0..1.0);
        let (gamma, lambda) = (rng.random_range(0.8..1.0), rng.random_range(0.0..1.0));
        let (adv, _) = compute_gae(&r, &v, &d, &[boot], gamma, lambda);
        for t in 0..n {
            let mut sum = 0.0;
            let mut w = 1.0;
            for l in t..n {
                let next = if l + 1 == n { boot } else { v[l + 1] };
                let live = if d[l] { 0.0 } else { 1.0 };
                sum += w * (r[l] + gamma * next * live - v[l]);
                if d[l] {
                    break;
                }
                w *= gamma * lambda;
            }
            gae_err = gae_err.max((adv[t] - sum).abs());
        }
    }

    let config = PpoConfig { seed: 3, total_timesteps: 3 * 2048, ..PpoConfig::default() };
    let env = EnvSpec::get_to_goal(ControlVariant::DiscreteXy);
    let a = train(&config, &env, &[]).unwrap();
    let b = train(&config, &env, &[]).unwrap();
    let reproducible = a.curve == b.curve
        && a.net.params().iter().zip(b.net.params()).all(|(x, y)| x.to_bits() == y.to_bits());

    Outcome {
        passed: bandit_ok && gae_err < GAE_TOL && reproducible,
        detail: format!(
            "bandit P(best) {}; GAE max error {gae_err:.1e}; seeded train bitwise reproducible: {reproducible}",
            fmt(&probs)
        ),
    }
}

fn criterion_9() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut zero_ok = true;
    let mut norm_err = 0.0f64;
    for _ in 0..10_000 {
        let n = rng.random_range(1..20);
        let probs: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..1.0)).collect();
        let mut avail: Vec<bool> = (0..n).map(|_| rng.random_bool(0.5)).collect();
        avail[rng.random_range(0..n)] = true;
        let p = mask_probabilities(&probs, &avail).unwrap();
        zero_ok &= p.iter().zip(&avail).all(|(x, &a)| a || x.to_bits() == 0);
        norm_err = norm_err.max((p.iter().sum::<f64>() - 1.0).abs());
    }
    let mut grad_ok = true;
    for seed in 0..30 {
        for space in [ActionSpace::Discrete(7), ActionSpace::MultiDiscrete(vec![3, 4, 2])] {
            let (net, obs, obj) = random_check_problem(&space, true, 90_000 + seed).unwrap();
            let out = net.forward(obs.view()).unwrap();
            let (_, grad) = obj.evaluate(&out).unwrap();
            for (i, mask) in obj.masks.iter().enumerate() {
                for (j, &a) in mask.as_ref().unwrap().iter().enumerate() {
                    grad_ok &= a || grad.head[[i, j]].to_bits() == 0;
                }
            }
        }
    }
    Outcome {
        passed: zero_ok && norm_err <= MASK_TOL && grad_ok,
        detail: format!(
            "masked probabilities exactly zero: {zero_ok}; max |sum-1| {norm_err:.1e}; masked-logit gradients exactly zero: {grad_ok}"
        ),
    }
}

fn main() {
    let mut runs = Runs { cache: HashMap::new() };
    let criteria: Vec<(&str, Box<dyn FnOnce(&mut Runs) -> Outcome>)> = vec![
        ("5 gradient oracle", Box::new(|_| criterion_5())),
        ("6 combinatorics oracle", Box::new(|_| criterion_6())),
        ("7 equivalence suites", Box::new(|_| criterion_7())),
        ("8 trainer sanity", Box::new(|_| criterion_8())),
        ("9 masking", Box::new(|_| criterion_9())),
        ("1 learning ordering", Box::new(criterion_1)),
        ("2 solvability", Box::new(criterion_2)),
        ("3 robustness to extra actions", Box::new(criterion_3)),
        ("4 backward/strafe ablation", Box::new(criterion_4)),
    ];
    let mut results = Vec::new();
    for (name, check) in criteria {
        let t = Instant::now();
        let o = check(&mut runs);
        println!(
            "criterion {name}: {} ({:.0}s) {}",
            if o.passed { "PASS" } else { "FAIL" },
            t.elapsed().as_secs_f64(),
            o.detail
        );
        results.push((name, o.passed));
    }
    let failed: Vec<&str> = results.iter().filter(|(_, p)| !p).map(|(n, _)| *n).collect();
    if failed.is_empty() {
        println!("acceptance: all criteria passed");
    } else {
        println!("acceptance: FAILED {failed:?}");
        std::process::exit(1);
    }
}
