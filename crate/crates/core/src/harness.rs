//! Experiment configs, seeded sweeps, result files, comparisons and plots.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use crate::curve::{AggregatePoint, CurveError, CurvePoint, LearningCurve};
use crate::curve::{aggregate, write_aggregate_csv};
use crate::envs::{ActionMode, BogusBase, ControlVariant, EnvSpec};
use crate::error::CheckpointError;
use crate::policy::{save_checkpoint, HeadLayout};
use crate::ppo::{train, PpoConfig, PpoError};
use crate::shaping::{Transform, TransformStack};

/// Environment variable that replaces every config's seed list.
pub const SEED_ENV_VAR: &str = "ACTSHAPE_SEED";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    pub env: EnvSpec,
    #[serde(default)]
    pub transforms: Vec<Transform>,
    #[serde(default)]
    pub ppo: PpoConfig,
    pub seeds: Vec<u64>,
    pub total_timesteps: u64,
}

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("invalid config: {0}")]
    Invalid(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Curve(#[from] CurveError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error("seeds {failed:?} failed: {messages:?}")]
    PartialFailure { failed: Vec<u64>, messages: Vec<String> },
    #[error("experiments are not comparable: {0}")]
    IncomparableBudgets(String),
    #[error("nothing to plot")]
    EmptyInput,
}

impl HarnessError {
    /// Validation problems exit with 1, everything else with 2.
    pub fn is_validation(&self) -> bool {
        matches!(self, HarnessError::Invalid(_) | HarnessError::Json(_))
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self, HarnessError> {
        let config: Self = serde_json::from_str(text)?;
        config.validate()?;
        Ok(config)
    }

    /// Checks seeds, PPO settings, the environment and the whole transform
    /// stack before anything runs.
    pub fn validate(&self) -> Result<(), HarnessError> {
        let invalid = |m: String| HarnessError::Invalid(m);
        if self.name.is_empty() || self.name.contains(['/', '\\']) {
            return Err(invalid(format!("name {:?} cannot be used in file names", self.name)));
        }
        if self.seeds.is_empty() {
            return Err(invalid("at least one seed is required".into()));
        }
        self.ppo_config(0).validate().map_err(|e| invalid(e.to_string()))?;
        self.env.build().map_err(|e| invalid(e.to_string()))?;
        let stack = self.stack()?;
        HeadLayout::for_space(stack.shaped()).map_err(|e| invalid(e.to_string()))?;
        Ok(())
    }

    pub fn stack(&self) -> Result<TransformStack, HarnessError> {
        TransformStack::apply(self.env.action_space(), self.transforms.clone())
            .map_err(|e| HarnessError::Invalid(e.to_string()))
    }

    pub fn ppo_config(&self, seed: u64) -> PpoConfig {
        PpoConfig {
            seed,
            total_timesteps: self.total_timesteps,
            ..self.ppo.clone()
        }
    }

    /// Seeds after applying the environment override, if set.
    pub fn effective_seeds(&self) -> Result<Vec<u64>, HarnessError> {
        match std::env::var(SEED_ENV_VAR) {
            Ok(v) => parse_seed_list(&v),
            Err(_) => Ok(self.seeds.clone()),
        }
    }
}

/// Comma-separated seeds, e.g. `0,1,5`.
pub fn parse_seed_list(text: &str) -> Result<Vec<u64>, HarnessError> {
    let seeds = text
        .split(',')
        .map(|s| s.trim().parse::<u64>())
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| HarnessError::Invalid(format!("{SEED_ENV_VAR}={text:?}: {e}")))?;
    if seeds.is_empty() {
        return Err(HarnessError::Invalid(format!("{SEED_ENV_VAR} is empty")));
    }
    Ok(seeds)
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentResult {
    pub name: String,
    pub family: String,
    pub curves: Vec<LearningCurve>,
    pub aggregate: Vec<AggregatePoint>,
}

impl ExperimentResult {
    pub fn aucs(&self) -> Vec<f64> {
        self.curves.iter().map(LearningCurve::auc).collect()
    }

    pub fn final_returns(&self) -> Vec<f64> {
        self.curves.iter().map(LearningCurve::final_return).collect()
    }

    pub fn total_steps(&self) -> u64 {
        self.curves.first().map_or(0, LearningCurve::total_steps)
    }
}

pub fn curve_path(dir: &Path, name: &str, seed: u64) -> PathBuf {
    dir.join(format!("{name}_seed{seed}.csv"))
}

pub fn aggregate_path(dir: &Path, name: &str) -> PathBuf {
    dir.join(format!("{name}_agg.csv"))
}

/// Writes to a sibling temporary file, then renames over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)
}

fn persist_curve(dir: &Path, name: &str, curve: &LearningCurve) -> Result<(), HarnessError> {
    let mut buf = Vec::new();
    curve.write_csv(&mut buf)?;
    write_atomic(&curve_path(dir, name, curve.seed), &buf)?;
    Ok(())
}

/// Trains one seed and persists its curve and, when `dir` is given, its
/// checkpoint `<name>_seed<k>.bin`.
pub fn run_seed(config: &ExperimentConfig, seed: u64, dir: Option<&Path>) -> Result<LearningCurve, HarnessError> {
    let outcome = train(&config.ppo_config(seed), &config.env, &config.transforms)
        .map_err(|e: PpoError| HarnessError::PartialFailure { failed: vec![seed], messages: vec![e.to_string()] })?;
    if let Some(dir) = dir {
        fs::create_dir_all(dir)?;
        persist_curve(dir, &config.name, &outcome.curve)?;
        save_checkpoint(&outcome.net, &dir.join(format!("{}_seed{seed}.bin", config.name)))?;
    }
    Ok(outcome.curve)
}

/// One training run per seed (in parallel), then the pointwise aggregate.
/// Completed seeds are persisted even if others fail.
pub fn run_experiment(config: &ExperimentConfig, dir: Option<&Path>) -> Result<ExperimentResult, HarnessError> {
    config.validate()?;
    let seeds = config.effective_seeds()?;
    let results: Vec<(u64, Result<LearningCurve, HarnessError>)> = seeds
        .par_iter()
        .map(|&seed| (seed, run_seed(config, seed, dir)))
        .collect();
    let mut curves = Vec::new();
    let mut failed = Vec::new();
    let mut messages = Vec::new();
    for (seed, r) in results {
        match r {
            Ok(c) => curves.push(c),
            Err(e) => {
                failed.push(seed);
                messages.push(e.to_string());
            }
        }
    }
    if !failed.is_empty() {
        return Err(HarnessError::PartialFailure { failed, messages });
    }
    let agg = aggregate(&curves)?;
    if let Some(dir) = dir {
        let mut buf = Vec::new();
        write_aggregate_csv(&agg, &mut buf)?;
        write_atomic(&aggregate_path(dir, &config.name), &buf)?;
    }
    Ok(ExperimentResult {
        name: config.name.clone(),
        family: config.env.family().to_string(),
        curves,
        aggregate: agg,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Auc,
    FinalReturn,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Comparison {
    pub metric: Metric,
    pub a: String,
    pub b: String,
    pub a_values: Vec<f64>,
    pub b_values: Vec<f64>,
    pub a_mean: f64,
    pub a_std: f64,
    pub b_mean: f64,
    pub b_std: f64,
    /// `a_mean − b_mean`.
    pub difference: f64,
    /// Fraction of index-matched seed pairs with `a > b`.
    pub fraction_a_greater: f64,
}

impl std::fmt::Display for Comparison {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{:?}: {} {:.4} ± {:.4} vs {} {:.4} ± {:.4} (diff {:+.4}, a>b in {:.0}% of seed pairs)",
            self.metric,
            self.a,
            self.a_mean,
            self.a_std,
            self.b,
            self.b_mean,
            self.b_std,
            self.difference,
            100.0 * self.fraction_a_greater
        )
    }
}

pub fn compare(a: &ExperimentResult, b: &ExperimentResult, metric: Metric) -> Result<Comparison, HarnessError> {
    if a.family != b.family {
        return Err(HarnessError::IncomparableBudgets(format!("{} vs {}", a.family, b.family)));
    }
    if a.total_steps() != b.total_steps() {
        return Err(HarnessError::IncomparableBudgets(format!(
            "{} steps vs {} steps",
            a.total_steps(),
            b.total_steps()
        )));
    }
    let values = |r: &ExperimentResult| match metric {
        Metric::Auc => r.aucs(),
        Metric::FinalReturn => r.final_returns(),
    };
    let (av, bv) = (values(a), values(b));
    let (a_mean, a_std) = crate::ppo::mean_std(av.iter().copied());
    let (b_mean, b_std) = crate::ppo::mean_std(bv.iter().copied());
    let pairs = av.len().min(bv.len());
    let greater = av.iter().zip(&bv).filter(|(x, y)| x > y).count();
    Ok(Comparison {
        metric,
        a: a.name.clone(),
        b: b.name.clone(),
        a_mean,
        a_std,
        b_mean,
        b_std,
        difference: a_mean - b_mean,
        fraction_a_greater: if pairs == 0 { 0.0 } else { greater as f64 / pairs as f64 },
        a_values: av,
        b_values: bv,
    })
}

/// One labelled series for [`emit_plot`].
#[derive(Clone, Debug, PartialEq)]
pub struct PlotSeries {
    pub label: String,
    pub points: Vec<AggregatePoint>,
}

const PALETTE: [&str; 8] = ["#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f"];

/// Line chart of mean return against env steps with ±std bands, as a
/// self-contained SVG. The output depends only on the input.
pub fn render_svg(series: &[PlotSeries]) -> Result<String, HarnessError> {
    let all: Vec<&AggregatePoint> = series.iter().flat_map(|s| &s.points).collect();
    if all.is_empty() {
        return Err(HarnessError::EmptyInput);
    }
    let (w, h) = (640.0, 420.0);
    let (left, right, top, bottom) = (60.0, 170.0, 20.0, 50.0);
    let x_max = all.iter().map(|p| p.env_steps).max().unwrap_or(0).max(1) as f64;
    let x_min = all.iter().map(|p| p.env_steps).min().unwrap_or(0) as f64;
    let x_min = if x_max > x_min { x_min } else { 0.0 };
    let y_lo = all.iter().map(|p| p.mean - p.std).fold(0.0f64, f64::min);
    let y_hi = all.iter().map(|p| p.mean + p.std).fold(1.0f64, f64::max);
    let px = |x: f64| left + (x - x_min) / (x_max - x_min) * (w - left - right);
    let py = |y: f64| h - bottom - (y - y_lo) / (y_hi - y_lo) * (h - top - bottom);

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(svg, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let (x0, x1, y0, y1) = (px(x_min), px(x_max), py(y_lo), py(y_hi));
    let _ = writeln!(
        svg,
        r#"<path d="M{x0:.2},{y1:.2} L{x0:.2},{y0:.2} L{x1:.2},{y0:.2}" fill="none" stroke="black"/>"#
    );
    for i in 0..=4 {
        let fx = x_min + (x_max - x_min) * i as f64 / 4.0;
        let fy = y_lo + (y_hi - y_lo) * i as f64 / 4.0;
        let _ = writeln!(
            svg,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
            px(fx),
            y0 + 15.0,
            fx.round()
        );
        let _ = writeln!(
            svg,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{:.2}</text>"#,
            x0 - 5.0,
            py(fy) + 4.0,
            fy
        );
    }
    let _ = writeln!(
        svg,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">env steps</text>"#,
        (x0 + x1) / 2.0,
        h - 12.0
    );
    let _ = writeln!(
        svg,
        r#"<text x="14" y="{:.2}" text-anchor="middle" transform="rotate(-90 14 {:.2})">mean return</text>"#,
        (y0 + y1) / 2.0,
        (y0 + y1) / 2.0
    );
    for (i, s) in series.iter().enumerate() {
        if s.points.is_empty() {
            continue;
        }
        let color = PALETTE[i % PALETTE.len()];
        let upper = s.points.iter().map(|p| format!("{:.2},{:.2}", px(p.env_steps as f64), py(p.mean + p.std)));
        let lower = s.points.iter().rev().map(|p| format!("{:.2},{:.2}", px(p.env_steps as f64), py(p.mean - p.std)));
        let band: Vec<String> = upper.chain(lower).collect();
        let _ = writeln!(
            svg,
            r#"<polygon points="{}" fill="{color}" fill-opacity="0.2" stroke="none"/>"#,
            band.join(" ")
        );
        let line: Vec<String> = s
            .points
            .iter()
            .map(|p| format!("{:.2},{:.2}", px(p.env_steps as f64), py(p.mean)))
            .collect();
        let _ = writeln!(
            svg,
            r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="1.5"/>"#,
            line.join(" ")
        );
        let ly = top + 16.0 * i as f64 + 10.0;
        let _ = writeln!(
            svg,
            r#"<text x="{:.2}" y="{ly:.2}" fill="{color}">{}</text>"#,
            w - right + 10.0,
            xml_escape(&s.label)
        );
    }
    svg.push_str("</svg>\n");
    Ok(svg)
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

pub fn emit_plot(series: &[PlotSeries], out: &Path) -> Result<(), HarnessError> {
    let svg = render_svg(series)?;
    write_atomic(out, svg.as_bytes())?;
    Ok(())
}

/// Reads a per-seed curve CSV (std bands from `std_return`) or an aggregate
/// CSV (bands from the across-seed `std`), labelled by file stem.
pub fn load_plot_series(path: &Path) -> Result<PlotSeries, HarnessError> {
    let text = fs::read_to_string(path)?;
    let header = text.lines().next().unwrap_or("");
    let points = if header == "env_steps,mean,std" {
        crate::curve::read_aggregate_csv(text.as_bytes())?
    } else {
        LearningCurve::read_csv(0, text.as_bytes())?
            .points
            .into_iter()
            .map(|p| AggregatePoint {
                env_steps: p.env_steps,
                mean: p.mean_return,
                std: p.std_return,
            })
            .collect()
    };
    let label = path.file_stem().map_or_else(String::new, |s| s.to_string_lossy().into_owned());
    Ok(PlotSeries { label, points })
}

pub const DEFAULT_SEEDS: u64 = 10;
pub const DEFAULT_BUDGET: u64 = 250_000;
pub const PRESETS: [&str; 4] = ["variants", "tank-buttons", "extra-actions", "bogus-actions"];
pub const SWEEP_K: [usize; 5] = [4, 8, 16, 32, 64];

fn experiment(name: String, variant: ControlVariant) -> ExperimentConfig {
    ExperimentConfig {
        name,
        env: EnvSpec::get_to_goal(variant),
        transforms: Vec::new(),
        ppo: PpoConfig::default(),
        seeds: (0..DEFAULT_SEEDS).collect(),
        total_timesteps: DEFAULT_BUDGET,
    }
}

/// Built-in experiment groups: `variants`, `tank-buttons`,
/// `extra-actions` and `bogus-actions`.
pub fn preset(name: &str) -> Option<Vec<ExperimentConfig>> {
    let tank = |multi: bool, backward: bool, strafe: bool| {
        let variant = if multi {
            ControlVariant::TankMultidiscrete { allow_backward: backward, allow_strafe: strafe }
        } else {
            ControlVariant::TankDiscrete { allow_backward: backward, allow_strafe: strafe }
        };
        let mode = if multi { "multidiscrete" } else { "discrete" };
        let buttons = match (backward, strafe) {
            (false, false) => "minimal",
            (true, false) => "backward",
            (false, true) => "strafe",
            (true, true) => "backward_strafe",
        };
        experiment(format!("tank_{mode}_{buttons}"), variant)
    };
    let configs = match name {
        "variants" => vec![
            experiment("discrete".into(), ControlVariant::DiscreteXy),
            experiment("multidiscrete".into(), ControlVariant::MultidiscreteXy),
            experiment(
                "tank_discrete".into(),
                ControlVariant::TankDiscrete { allow_backward: true, allow_strafe: false },
            ),
            experiment(
                "tank_multidiscrete".into(),
                ControlVariant::TankMultidiscrete { allow_backward: true, allow_strafe: false },
            ),
            experiment("continuous".into(), ControlVariant::ContinuousAngle),
        ],
        "tank-buttons" => [false, true]
            .into_iter()
            .flat_map(|multi| [tank(multi, false, false), tank(multi, true, false), tank(multi, true, true)])
            .collect(),
        "extra-actions" => SWEEP_K
            .iter()
            .flat_map(|&k| {
                [ActionMode::Discrete, ActionMode::MultiDiscrete].map(|mode| {
                    let label = if mode == ActionMode::Discrete { "discrete" } else { "multidiscrete" };
                    experiment(format!("extra_{label}_k{k}"), ControlVariant::ExtraDirections { k, mode })
                })
            })
            .collect(),
        "bogus-actions" => SWEEP_K
            .iter()
            .flat_map(|&k| {
                [BogusBase::DiscreteXy, BogusBase::MultidiscreteXy].map(|base| {
                    let label = if base == BogusBase::DiscreteXy { "discrete" } else { "multidiscrete" };
                    experiment(format!("bogus_{label}_k{k}"), ControlVariant::BogusActions { base, k })
                })
            })
            .collect(),
        _ => return None,
    };
    Some(configs)
}
