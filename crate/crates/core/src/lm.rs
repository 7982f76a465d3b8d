//! Levenberg–Marquardt minimisation of a sum of squared residuals.
//!
//! Each iteration solves the damped normal system `(JᵀJ + λI) δ = Jᵀr`
//! with a Cholesky factorisation and tries `θ − δ`. A step is accepted
//! only if the SSE strictly decreases, after which λ is divided by
//! `lambda_down`; otherwise λ is multiplied by `lambda_up` and the solve is
//! repeated. The loop ends when the gradient falls below `grad_tol`, after
//! `max_iters` accepted steps, or when λ exceeds [`LAMBDA_MAX`].

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub const LAMBDA_MAX: f64 = 1e10;

/// A residual vector `r(θ)` and its Jacobian `∂r/∂θ`.
pub trait LeastSquaresProblem {
    fn n_params(&self) -> usize;
    fn residuals(&self, params: &[f64]) -> Vec<f64>;
    /// Row `i` holds `∂r_i/∂θ`.
    fn jacobian(&self, params: &[f64]) -> DMatrix<f64>;
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LmConfig {
    pub lambda_init: f64,
    pub lambda_up: f64,
    pub lambda_down: f64,
    pub max_iters: usize,
    pub grad_tol: f64,
    pub seed: u64,
}

impl Default for LmConfig {
    fn default() -> Self {
        LmConfig {
            lambda_init: 1e-3,
            lambda_up: 10.0,
            lambda_down: 10.0,
            max_iters: 200,
            grad_tol: 1e-6,
            seed: 0,
        }
    }
}

impl LmConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda_init > 0.0 && self.lambda_init.is_finite()) {
            return Err(Error::InvalidArgument("lm lambda_init must be positive".into()));
        }
        if !(self.lambda_up > 1.0 && self.lambda_down > 1.0) {
            return Err(Error::InvalidArgument("lm damping factors must exceed 1".into()));
        }
        if !(self.grad_tol >= 0.0) {
            return Err(Error::InvalidArgument("lm grad_tol must be non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    GradientTolerance,
    ZeroResidual,
    MaxIterations,
    LambdaOverflow,
}

#[derive(Clone, Debug)]
pub struct LmOutcome {
    pub params: Vec<f64>,
    /// SSE at the start followed by the SSE after every accepted step.
    pub trace: Vec<f64>,
    pub iterations: usize,
    pub stop: StopReason,
}

impl LmOutcome {
    pub fn diverged(&self) -> bool {
        self.stop == StopReason::LambdaOverflow
    }

    pub fn converged(&self) -> bool {
        matches!(
            self.stop,
            StopReason::GradientTolerance | StopReason::ZeroResidual
        )
    }

    pub fn final_sse(&self) -> f64 {
        *self.trace.last().expect("trace holds the initial SSE")
    }
}

fn sse(r: &[f64]) -> f64 {
    r.iter().map(|v| v * v).sum()
}

pub fn minimize<P: LeastSquaresProblem + ?Sized>(
    problem: &P,
    initial: &[f64],
    cfg: &LmConfig,
) -> Result<LmOutcome> {
    cfg.validate()?;
    let n = problem.n_params();
    if initial.len() != n {
        return Err(Error::ArityMismatch {
            expected: n,
            got: initial.len(),
        });
    }
    let mut params = initial.to_vec();
    let mut residuals = problem.residuals(&params);
    let mut current = sse(&residuals);
    if !current.is_finite() {
        return Err(Error::Numeric("non-finite initial residuals".into()));
    }
    let mut trace = vec![current];
    let mut lambda = cfg.lambda_init;
    let mut iterations = 0;

    let stop = loop {
        if current == 0.0 {
            break StopReason::ZeroResidual;
        }
        if iterations >= cfg.max_iters {
            break StopReason::MaxIterations;
        }
        let jac = problem.jacobian(&params);
        let r = DVector::from_column_slice(&residuals);
        let grad = jac.tr_mul(&r);
        if grad.amax() < cfg.grad_tol {
            break StopReason::GradientTolerance;
        }
        let normal = jac.tr_mul(&jac);

        let accepted = loop {
            if lambda > LAMBDA_MAX {
                break false;
            }
            let mut damped = normal.clone();
            for i in 0..n {
                damped[(i, i)] += lambda;
            }
            let Some(chol) = damped.cholesky() else {
                lambda *= cfg.lambda_up;
                continue;
            };
            let step = chol.solve(&grad);
            let candidate: Vec<f64> = params.iter().zip(step.iter()).map(|(p, d)| p - d).collect();
            let cand_residuals = problem.residuals(&candidate);
            let cand_sse = sse(&cand_residuals);
            if cand_sse.is_finite() && cand_sse < current {
                params = candidate;
                residuals = cand_residuals;
                current = cand_sse;
                lambda = (lambda / cfg.lambda_down).max(f64::MIN_POSITIVE);
                break true;
            }
            lambda *= cfg.lambda_up;
        };
        if !accepted {
            break StopReason::LambdaOverflow;
        }
        iterations += 1;
        trace.push(current);
    };

    Ok(LmOutcome {
        params,
        trace,
        iterations,
        stop,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    // Himmelblau residuals: r1 = x² + y − 11, r2 = x + y² − 7
    struct Himmelblau;

    impl LeastSquaresProblem for Himmelblau {
        fn n_params(&self) -> usize {
            2
        }
        fn residuals(&self, p: &[f64]) -> Vec<f64> {
            vec![p[0] * p[0] + p[1] - 11.0, p[0] + p[1] * p[1] - 7.0]
        }
        fn jacobian(&self, p: &[f64]) -> DMatrix<f64> {
            DMatrix::from_row_slice(2, 2, &[2.0 * p[0], 1.0, 1.0, 2.0 * p[1]])
        }
    }

    #[test]
    fn finds_a_himmelblau_minimum() {
        let out = minimize(&Himmelblau, &[0.0, 0.0], &LmConfig::default()).unwrap();
        assert!(out.final_sse() < 1e-12, "{:?}", out.trace);
        assert!(out.trace.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn zero_iterations_returns_input() {
        let cfg = LmConfig {
            max_iters: 0,
            ..LmConfig::default()
        };
        let out = minimize(&Himmelblau, &[1.5, -0.5], &cfg).unwrap();
        assert_eq!(out.params, vec![1.5, -0.5]);
        assert_eq!(out.stop, StopReason::MaxIterations);
        assert_eq!(out.trace.len(), 1);
    }

    #[test]
    fn rejects_bad_config() {
        let cfg = LmConfig {
            lambda_up: 1.0,
            ..LmConfig::default()
        };
        assert!(minimize(&Himmelblau, &[0.0, 0.0], &cfg).is_err());
    }

    // r = (p − 1, p + 1) cannot reach zero; the minimum sits at p = 0.
    struct Floor;

    impl LeastSquaresProblem for Floor {
        fn n_params(&self) -> usize {
            1
        }
        fn residuals(&self, p: &[f64]) -> Vec<f64> {
            vec![p[0] - 1.0, p[0] + 1.0]
        }
        fn jacobian(&self, _: &[f64]) -> DMatrix<f64> {
            DMatrix::from_element(2, 1, 1.0)
        }
    }

    #[test]
    fn stops_on_gradient_tolerance() {
        let out = minimize(&Floor, &[0.8], &LmConfig::default()).unwrap();
        assert!(out.converged(), "{:?}", out.stop);
        assert_eq!(out.stop, StopReason::GradientTolerance);
        assert!(out.params[0].abs() < 1e-6);
        assert!((out.final_sse() - 2.0).abs() < 1e-12);
    }
}
