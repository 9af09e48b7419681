use std::fmt::Write as _;
use std::fs;
use std::io::{self, Write as _};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use actshape::harness::{
    emit_plot, load_plot_series, preset, run_experiment, run_seed, ExperimentConfig, HarnessError, PlotSeries,
};
use actshape::selftest;

#[derive(Parser)]
#[command(name = "actshape", version, about = "Action-space shaping experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Show the original and shaped action spaces and the combination table.
    Enumerate { config: PathBuf },
    /// Train every seed of a config, or just one.
    Train {
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value = "results")]
        out: PathBuf,
    },
    /// Run a preset (variants, tank-buttons, extra-actions, bogus-actions) or a config file.
    Sweep {
        target: String,
        #[arg(long, default_value = "results")]
        out: PathBuf,
    },
    /// Plot curve or aggregate CSV files as an SVG.
    Plot {
        #[arg(required = true)]
        csv: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Gradient checks, enumeration laws and bandit convergence.
    Selftest,
}

enum Failure {
    Validation(String),
    Runtime(String),
}

impl From<HarnessError> for Failure {
    fn from(e: HarnessError) -> Self {
        if e.is_validation() {
            Failure::Validation(e.to_string())
        } else {
            Failure::Runtime(e.to_string())
        }
    }
}

fn load_config(path: &Path) -> Result<ExperimentConfig, Failure> {
    let text = fs::read_to_string(path).map_err(|e| Failure::Validation(format!("{}: {e}", path.display())))?;
    Ok(ExperimentConfig::from_json(&text)?)
}

fn enumerate(path: &Path) -> Result<(), Failure> {
    let config = load_config(path)?;
    let stack = config.stack()?;
    let mut text = String::new();
    let _ = writeln!(text, "original: {} ({} actions)", stack.original(), stack.original().cardinality());
    let _ = writeln!(text, "shaped:   {} ({} actions)", stack.shaped(), stack.shaped().cardinality());
    for (i, t) in stack.transforms().iter().enumerate() {
        let _ = writeln!(text, "transform {i}: {}", serde_json::to_string(t).unwrap_or_else(|_| t.op_name().into()));
    }
    if let Some(table) = stack.combination_table() {
        let _ = writeln!(text, "index\tcombination");
        for (i, combo) in table.iter().enumerate() {
            let _ = writeln!(text, "{i}\t{combo:?}");
        }
    }
    // a closed pipe (e.g. `| head`) is not an error
    let _ = io::stdout().lock().write_all(text.as_bytes());
    Ok(())
}

fn report(config: &ExperimentConfig, curves: &[actshape::harness::LearningCurve]) {
    for c in curves {
        println!(
            "{} seed {}: auc {:.4}, final return {:.4}",
            config.name,
            c.seed,
            c.auc(),
            c.final_return()
        );
    }
}

fn run_config(config: &ExperimentConfig, out: &Path) -> Result<PlotSeries, Failure> {
    let result = run_experiment(config, Some(out))?;
    report(config, &result.curves);
    let (mean, std) = mean_std(&result.aucs());
    println!("{}: auc {mean:.4} ± {std:.4} over {} seeds", config.name, result.curves.len());
    Ok(PlotSeries {
        label: config.name.clone(),
        points: result.aggregate,
    })
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len().max(1) as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

fn run(command: Command) -> Result<(), Failure> {
    match command {
        Command::Enumerate { config } => enumerate(&config),
        Command::Train { config, seed, out } => {
            let config = load_config(&config)?;
            match seed {
                Some(seed) => {
                    let curve = run_seed(&config, seed, Some(&out))?;
                    report(&config, &[curve]);
                }
                None => {
                    run_config(&config, &out)?;
                }
            }
            Ok(())
        }
        Command::Sweep { target, out } => {
            let (label, configs) = match preset(&target) {
                Some(configs) => (target.clone(), configs),
                None => {
                    let path = Path::new(&target);
                    if !path.exists() {
                        return Err(Failure::Validation(format!(
                            "{target:?} is neither a preset ({}) nor a config file",
                            actshape::harness::PRESETS.join(", ")
                        )));
                    }
                    let config = load_config(path)?;
                    (config.name.clone(), vec![config])
                }
            };
            for c in &configs {
                c.validate()?;
            }
            let mut series = Vec::new();
            for c in &configs {
                series.push(run_config(c, &out)?);
            }
            let svg = out.join(format!("{label}.svg"));
            emit_plot(&series, &svg)?;
            println!("plot: {}", svg.display());
            Ok(())
        }
        Command::Plot { csv, out } => {
            let series = csv
                .iter()
                .map(|p| load_plot_series(p))
                .collect::<Result<Vec<_>, _>>()
                .map_err(|e| match e {
                    HarnessError::Io(_) | HarnessError::Curve(_) => Failure::Validation(e.to_string()),
                    other => Failure::from(other),
                })?;
            emit_plot(&series, &out).map_err(|e| match e {
                HarnessError::EmptyInput => Failure::Validation(e.to_string()),
                other => Failure::from(other),
            })
        }
        Command::Selftest => {
            let lines = selftest::run_all();
            for l in &lines {
                println!("[{}] {}: {}", if l.passed { "PASS" } else { "FAIL" }, l.name, l.detail);
            }
            if lines.iter().all(|l| l.passed) {
                Ok(())
            } else {
                Err(Failure::Runtime("selftest failed".into()))
            }
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if e.use_stderr() => {
            let _ = e.print();
            return ExitCode::from(1);
        }
        Err(e) => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Validation(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}
