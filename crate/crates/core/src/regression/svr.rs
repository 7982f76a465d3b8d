//! ε-insensitive support vector regression with an RBF kernel.
//!
//! The dual is solved by sequential minimal optimisation over the usual
//! 2n-variable form (`α` for the upper tube edge, `α*` for the lower),
//! using second-order working-set selection. Prediction is
//! `f(x) = Σ (α_i − α*_i) K(x_i, x) + bias`.

use serde::{Deserialize, Serialize};

use super::{fit_columns, standardize, warn_if_out_of_range, Standardization};
use crate::metrics::{full_report, MetricsReport};
use crate::{ChannelSet, Dataset, Error, Result, SampleRecord};

/// Stopping tolerance on the maximal KKT violation.
pub const KKT_TOL: f64 = 1e-3;
pub const MAX_SAMPLES: usize = 5000;
const TAU: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SvrParams {
    /// Box constraint.
    pub c: f64,
    /// Tube half-width in mg/dl.
    pub epsilon: f64,
    /// RBF width; `None` means `1 / n_channels`.
    pub gamma: Option<f64>,
    pub max_iter: usize,
}

impl Default for SvrParams {
    fn default() -> Self {
        SvrParams {
            c: 100.0,
            epsilon: 5.0,
            gamma: None,
            max_iter: 10_000_000,
        }
    }
}

impl SvrParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.c > 0.0 && self.c.is_finite()) {
            return Err(Error::InvalidArgument("svr C must be positive".into()));
        }
        if !(self.epsilon >= 0.0 && self.epsilon.is_finite()) {
            return Err(Error::InvalidArgument("svr epsilon must be non-negative".into()));
        }
        if let Some(g) = self.gamma {
            if !(g > 0.0 && g.is_finite()) {
                return Err(Error::InvalidArgument("svr gamma must be positive".into()));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SvrModel {
    pub channels: ChannelSet,
    pub standardization: Vec<Standardization>,
    /// Standardized inputs of the support vectors.
    pub support_vectors: Vec<Vec<f64>>,
    /// `α_i − α*_i`, each within `[−C, C]`.
    pub dual_coefficients: Vec<f64>,
    pub bias: f64,
    pub gamma: f64,
    pub c: f64,
    pub epsilon: f64,
    /// Maximal KKT violation when the solver stopped.
    pub kkt_violation: f64,
    pub converged: bool,
    pub training_metrics: Option<MetricsReport>,
}

fn rbf(a: &[f64], b: &[f64], gamma: f64) -> f64 {
    let d2: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
    (-gamma * d2).exp()
}

impl SvrModel {
    pub fn predict(&self, x: &[f64]) -> Result<f64> {
        let z = standardize(x, &self.standardization)?;
        Ok(self.decision(&z))
    }

    fn decision(&self, z: &[f64]) -> f64 {
        self.bias
            + self
                .support_vectors
                .iter()
                .zip(&self.dual_coefficients)
                .map(|(sv, beta)| beta * rbf(sv, z, self.gamma))
                .sum::<f64>()
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

struct Solution {
    beta: Vec<f64>,
    bias: f64,
    violation: f64,
    converged: bool,
}

/// SMO on the 2n-variable dual. `kernel` is the n×n Gram matrix, row-major.
fn solve_dual(kernel: &[f64], targets: &[f64], params: &SvrParams) -> Solution {
    let n = targets.len();
    let l = 2 * n;
    let c = params.c;
    let k = |i: usize, j: usize| kernel[(i % n) * n + (j % n)];
    let sign = |t: usize| if t < n { 1.0 } else { -1.0 };

    let mut alpha = vec![0.0; l];
    let mut grad: Vec<f64> = (0..l)
        .map(|t| {
            if t < n {
                params.epsilon - targets[t]
            } else {
                params.epsilon + targets[t - n]
            }
        })
        .collect();

    let mut violation = f64::INFINITY;
    let mut converged = false;
    for _ in 0..params.max_iter {
        // first index: maximal violating pair, upper side
        let mut gmax = f64::NEG_INFINITY;
        let mut i_sel = None;
        for t in 0..l {
            let v = if t < n {
                (alpha[t] < c).then(|| -grad[t])
            } else {
                (alpha[t] > 0.0).then_some(grad[t])
            };
            if let Some(v) = v {
                if v >= gmax {
                    gmax = v;
                    i_sel = Some(t);
                }
            }
        }
        let Some(i) = i_sel else {
            violation = 0.0;
            converged = true;
            break;
        };
        let yi = sign(i);

        // second index: largest second-order decrease
        let mut gmax2 = f64::NEG_INFINITY;
        let mut j_sel = None;
        let mut obj_min = f64::INFINITY;
        for t in 0..l {
            let yt = sign(t);
            let q_it = yi * yt * k(i, t);
            let (eligible, g_side, grad_diff, quad) = if t < n {
                (alpha[t] > 0.0, grad[t], gmax + grad[t], 2.0 - 2.0 * yi * q_it)
            } else {
                (alpha[t] < c, -grad[t], gmax - grad[t], 2.0 + 2.0 * yi * q_it)
            };
            if !eligible {
                continue;
            }
            gmax2 = gmax2.max(g_side);
            if grad_diff > 0.0 {
                let quad = if quad > 0.0 { quad } else { TAU };
                let obj = -(grad_diff * grad_diff) / quad;
                if obj <= obj_min {
                    obj_min = obj;
                    j_sel = Some(t);
                }
            }
        }
        violation = gmax + gmax2;
        let Some(j) = j_sel.filter(|_| violation >= KKT_TOL) else {
            converged = violation < KKT_TOL || j_sel.is_none();
            break;
        };

        let yj = sign(j);
        let q_ij = yi * yj * k(i, j);
        let (old_ai, old_aj) = (alpha[i], alpha[j]);
        if yi != yj {
            let quad = (2.0 + 2.0 * q_ij).max(TAU);
            let delta = (-grad[i] - grad[j]) / quad;
            let diff = alpha[i] - alpha[j];
            alpha[i] += delta;
            alpha[j] += delta;
            if diff > 0.0 {
                if alpha[j] < 0.0 {
                    alpha[j] = 0.0;
                    alpha[i] = diff;
                }
            } else if alpha[i] < 0.0 {
                alpha[i] = 0.0;
                alpha[j] = -diff;
            }
            if diff > 0.0 {
                if alpha[i] > c {
                    alpha[i] = c;
                    alpha[j] = c - diff;
                }
            } else if alpha[j] > c {
                alpha[j] = c;
                alpha[i] = c + diff;
            }
        } else {
            let quad = (2.0 - 2.0 * q_ij).max(TAU);
            let delta = (grad[i] - grad[j]) / quad;
            let sum = alpha[i] + alpha[j];
            alpha[i] -= delta;
            alpha[j] += delta;
            if sum > c {
                if alpha[i] > c {
                    alpha[i] = c;
                    alpha[j] = sum - c;
                }
            } else if alpha[j] < 0.0 {
                alpha[j] = 0.0;
                alpha[i] = sum;
            }
            if sum > c {
                if alpha[j] > c {
                    alpha[j] = c;
                    alpha[i] = sum - c;
                }
            } else if alpha[i] < 0.0 {
                alpha[i] = 0.0;
                alpha[j] = sum;
            }
        }

        let (di, dj) = (alpha[i] - old_ai, alpha[j] - old_aj);
        for t in 0..l {
            let yt = sign(t);
            grad[t] += yi * yt * k(i, t) * di + yj * yt * k(j, t) * dj;
        }
    }

    // offset from free variables, or the midpoint of the feasible interval
    let (mut ub, mut lb) = (f64::INFINITY, f64::NEG_INFINITY);
    let (mut free_sum, mut free_n) = (0.0, 0usize);
    for t in 0..l {
        let yt = sign(t);
        let yg = yt * grad[t];
        let at_upper = alpha[t] >= c;
        let at_lower = alpha[t] <= 0.0;
        if at_upper {
            if yt < 0.0 {
                ub = ub.min(yg);
            } else {
                lb = lb.max(yg);
            }
        } else if at_lower {
            if yt > 0.0 {
                ub = ub.min(yg);
            } else {
                lb = lb.max(yg);
            }
        } else {
            free_n += 1;
            free_sum += yg;
        }
    }
    let rho = if free_n > 0 {
        free_sum / free_n as f64
    } else {
        (ub + lb) / 2.0
    };

    Solution {
        beta: (0..n).map(|t| alpha[t] - alpha[t + n]).collect(),
        bias: -rho,
        violation,
        converged,
    }
}

pub fn fit_svr(train: &Dataset, channels: ChannelSet, params: &SvrParams) -> Result<SvrModel> {
    params.validate()?;
    if train.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if train.len() > MAX_SAMPLES {
        return Err(Error::InvalidInput(format!(
            "dense SVR solver limited to {MAX_SAMPLES} samples, got {}",
            train.len()
        )));
    }
    let inputs = train.inputs(channels);
    let targets = train.targets();
    let scaling = if inputs.len() == 1 {
        vec![Standardization::IDENTITY; channels.len()]
    } else {
        fit_columns(&inputs, channels.len())?
    };
    let z = inputs
        .iter()
        .map(|x| standardize(x, &scaling))
        .collect::<Result<Vec<_>>>()?;
    let gamma = params.gamma.unwrap_or(1.0 / channels.len() as f64);

    let n = z.len();
    let mut kernel = vec![0.0; n * n];
    for i in 0..n {
        for j in i..n {
            let v = rbf(&z[i], &z[j], gamma);
            kernel[i * n + j] = v;
            kernel[j * n + i] = v;
        }
    }
    let sol = solve_dual(&kernel, &targets, params);
    if !sol.converged {
        tracing::warn!(violation = sol.violation, "SVR solver stopped before reaching KKT tolerance");
    }

    let (support_vectors, dual_coefficients): (Vec<_>, Vec<_>) = z
        .into_iter()
        .zip(sol.beta)
        .filter(|(_, b)| *b != 0.0)
        .unzip();
    let mut model = SvrModel {
        channels,
        standardization: scaling,
        support_vectors,
        dual_coefficients,
        bias: sol.bias,
        gamma,
        c: params.c,
        epsilon: params.epsilon,
        kkt_violation: sol.violation,
        converged: sol.converged,
        training_metrics: None,
    };
    let fitted = inputs
        .iter()
        .map(|x| model.predict(x))
        .collect::<Result<Vec<_>>>()?;
    model.training_metrics = full_report(&targets, &fitted).ok();
    Ok(model)
}
