//! Learning curves, their CSV form and summary statistics.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub env_steps: u64,
    pub mean_return: f64,
    pub std_return: f64,
    pub episodes_completed: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LearningCurve {
    pub seed: u64,
    pub points: Vec<CurvePoint>,
}

/// Pointwise mean and standard deviation of several seeds' curves.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AggregatePoint {
    pub env_steps: u64,
    pub mean: f64,
    pub std: f64,
}

#[derive(Debug, thiserror::Error)]
pub enum CurveError {
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error("env_steps must be strictly increasing (row {row})")]
    NotIncreasing { row: usize },
    #[error("curves do not share iteration boundaries")]
    Misaligned,
    #[error("no curves given")]
    Empty,
}

/// Normalized trapezoidal area under `(x, y)`; a constant curve `c` gives `c`.
/// A single point gives its own value.
pub fn trapezoid_auc(xs: &[f64], ys: &[f64]) -> f64 {
    match xs.len() {
        0 => 0.0,
        1 => ys[0],
        n => {
            let area: f64 = (1..n).map(|i| 0.5 * (ys[i] + ys[i - 1]) * (xs[i] - xs[i - 1])).sum();
            area / (xs[n - 1] - xs[0])
        }
    }
}

impl LearningCurve {
    pub fn auc(&self) -> f64 {
        let xs: Vec<f64> = self.points.iter().map(|p| p.env_steps as f64).collect();
        let ys: Vec<f64> = self.points.iter().map(|p| p.mean_return).collect();
        trapezoid_auc(&xs, &ys)
    }

    pub fn final_return(&self) -> f64 {
        self.points.last().map_or(0.0, |p| p.mean_return)
    }

    pub fn total_steps(&self) -> u64 {
        self.points.last().map_or(0, |p| p.env_steps)
    }

    /// Header `env_steps,mean_return,std_return,episodes_completed`; floats
    /// are written in shortest round-trip form.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<(), CurveError> {
        let mut wtr = csv::Writer::from_writer(w);
        for p in &self.points {
            wtr.serialize(p)?;
        }
        if self.points.is_empty() {
            wtr.write_record(["env_steps", "mean_return", "std_return", "episodes_completed"])?;
        }
        wtr.flush().map_err(csv::Error::from)?;
        Ok(())
    }

    pub fn read_csv<R: Read>(seed: u64, r: R) -> Result<Self, CurveError> {
        let mut rdr = csv::Reader::from_reader(r);
        let points = rdr.deserialize().collect::<Result<Vec<CurvePoint>, _>>()?;
        let curve = Self { seed, points };
        curve.check_increasing()?;
        Ok(curve)
    }

    fn check_increasing(&self) -> Result<(), CurveError> {
        for (i, w) in self.points.windows(2).enumerate() {
            if w[1].env_steps <= w[0].env_steps {
                return Err(CurveError::NotIncreasing { row: i + 1 });
            }
        }
        Ok(())
    }
}

pub fn aggregate(curves: &[LearningCurve]) -> Result<Vec<AggregatePoint>, CurveError> {
    let first = curves.first().ok_or(CurveError::Empty)?;
    let aligned = curves.iter().all(|c| {
        c.points.len() == first.points.len()
            && c.points.iter().zip(&first.points).all(|(a, b)| a.env_steps == b.env_steps)
    });
    if !aligned {
        return Err(CurveError::Misaligned);
    }
    Ok((0..first.points.len())
        .map(|i| {
            let (mean, std) = crate::ppo::mean_std(curves.iter().map(|c| c.points[i].mean_return));
            AggregatePoint {
                env_steps: first.points[i].env_steps,
                mean,
                std,
            }
        })
        .collect())
}

pub fn write_aggregate_csv<W: Write>(points: &[AggregatePoint], w: W) -> Result<(), CurveError> {
    let mut wtr = csv::Writer::from_writer(w);
    for p in points {
        wtr.serialize(p)?;
    }
    if points.is_empty() {
        wtr.write_record(["env_steps", "mean", "std"])?;
    }
    wtr.flush().map_err(csv::Error::from)?;
    Ok(())
}

pub fn read_aggregate_csv<R: Read>(r: R) -> Result<Vec<AggregatePoint>, CurveError> {
    let mut rdr = csv::Reader::from_reader(r);
    Ok(rdr.deserialize().collect::<Result<Vec<AggregatePoint>, _>>()?)
}
