//! Rescaled-sigmoid regression:
//! `y = y_min + (y_max − y_min) · σ(w · z + b)` over z-scored channels,
//! fitted by damped Gauss–Newton on the squared error.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::{fit_columns, standardize, warn_if_out_of_range, Standardization};
use crate::lm::{self, LeastSquaresProblem, LmConfig};
use crate::metrics::{full_report, MetricsReport};
use crate::{ChannelSet, Dataset, Error, Result, SampleRecord};

pub const MIN_SAMPLES: usize = 10;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogisticModel {
    pub channels: ChannelSet,
    pub weights: Vec<f64>,
    pub bias: f64,
    pub y_min: f64,
    pub y_max: f64,
    pub standardization: Vec<Standardization>,
    /// False when the solver stopped on its iteration or damping limit.
    pub converged: bool,
    pub training_metrics: Option<MetricsReport>,
}

fn sigmoid(t: f64) -> f64 {
    1.0 / (1.0 + (-t).exp())
}

impl LogisticModel {
    pub fn predict(&self, x: &[f64]) -> Result<f64> {
        let z = standardize(x, &self.standardization)?;
        let t = self.bias + z.iter().zip(&self.weights).map(|(a, w)| a * w).sum::<f64>();
        Ok(self.y_min + (self.y_max - self.y_min) * sigmoid(t))
    }

    pub fn predict_volts(&self, volts: [f64; 3]) -> Result<f64> {
        let x = self.channels.select(volts);
        warn_if_out_of_range(self.channels, &x);
        self.predict(&x)
    }

    pub fn predict_record(&self, record: &SampleRecord) -> Result<f64> {
        self.predict_volts(record.volts())
    }
}

// Residuals on the unit interval: (y − y_min)/span − σ(w·z + b).
struct SigmoidProblem<'a> {
    z: &'a [Vec<f64>],
    unit_targets: Vec<f64>,
}

impl LeastSquaresProblem for SigmoidProblem<'_> {
    fn n_params(&self) -> usize {
        self.z[0].len() + 1
    }

    fn residuals(&self, p: &[f64]) -> Vec<f64> {
        let (w, b) = p.split_at(p.len() - 1);
        self.z
            .iter()
            .zip(&self.unit_targets)
            .map(|(z, t)| t - sigmoid(b[0] + z.iter().zip(w).map(|(a, c)| a * c).sum::<f64>()))
            .collect()
    }

    fn jacobian(&self, p: &[f64]) -> DMatrix<f64> {
        let (w, b) = p.split_at(p.len() - 1);
        let n = p.len();
        DMatrix::from_fn(self.z.len(), n, |i, j| {
            let z = &self.z[i];
            let s = sigmoid(b[0] + z.iter().zip(w).map(|(a, c)| a * c).sum::<f64>());
            let ds = s * (1.0 - s);
            if j + 1 == n {
                -ds
            } else {
                -ds * z[j]
            }
        })
    }
}

pub fn fit_logistic(train: &Dataset, channels: ChannelSet, cfg: &LmConfig) -> Result<LogisticModel> {
    if train.len() < MIN_SAMPLES {
        return Err(Error::TooFewSamples {
            needed: MIN_SAMPLES,
            got: train.len(),
        });
    }
    let inputs = train.inputs(channels);
    let targets = train.targets();
    let scaling = fit_columns(&inputs, channels.len())?;
    let z = inputs
        .iter()
        .map(|x| standardize(x, &scaling))
        .collect::<Result<Vec<_>>>()?;

    let lo = targets.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = targets.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let (y_min, y_max) = (0.9 * lo, 1.1 * hi);
    if !(y_max > y_min) {
        return Err(Error::InvalidInput("targets must be positive for the sigmoid range".into()));
    }
    let span = y_max - y_min;
    let problem = SigmoidProblem {
        z: &z,
        unit_targets: targets.iter().map(|y| (y - y_min) / span).collect(),
    };

    let mean_unit = problem.unit_targets.iter().sum::<f64>() / targets.len() as f64;
    let q = mean_unit.clamp(1e-6, 1.0 - 1e-6);
    let mut initial = vec![0.0; channels.len() + 1];
    initial[channels.len()] = (q / (1.0 - q)).ln();

    let outcome = lm::minimize(&problem, &initial, cfg)?;
    if !outcome.converged() {
        tracing::warn!(stop = ?outcome.stop, iterations = outcome.iterations, "logistic fit did not converge; keeping best iterate");
    }
    let (w, b) = outcome.params.split_at(channels.len());
    let mut model = LogisticModel {
        channels,
        weights: w.to_vec(),
        bias: b[0],
        y_min,
        y_max,
        standardization: scaling,
        converged: outcome.converged(),
        training_metrics: None,
    };
    let fitted = inputs
        .iter()
        .map(|x| model.predict(x))
        .collect::<Result<Vec<_>>>()?;
    model.training_metrics = full_report(&targets, &fitted).ok();
    Ok(model)
}
