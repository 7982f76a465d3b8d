use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{fit_columns, standardize, warn_if_out_of_range, Standardization};
use crate::basis::{Exponents, MonomialBasis};
use crate::metrics::{full_report, MetricsReport};
use crate::{ChannelSet, Dataset, Error, Result, SampleRecord};

/// Design matrices with a larger singular-value ratio are refused.
pub const RANK_COND_LIMIT: f64 = 1e12;

/// Least-squares solution of `design · β ≈ target` via Householder QR.
///
/// Refuses rank-deficient problems, reporting the singular-value condition
/// estimate instead of regularising.
pub fn lstsq(design: &DMatrix<f64>, target: &DVector<f64>) -> Result<DVector<f64>> {
    let (m, n) = design.shape();
    if target.len() != m {
        return Err(Error::LengthMismatch {
            left: m,
            right: target.len(),
        });
    }
    if m < n {
        return Err(Error::TooFewSamples { needed: n, got: m });
    }
    let sv = design.singular_values();
    let (smax, smin) = (sv.max(), sv.min());
    let condition = if smin > 0.0 { smax / smin } else { f64::INFINITY };
    if !(condition <= RANK_COND_LIMIT) {
        return Err(Error::RankDeficient { condition });
    }
    let qr = design.clone().qr();
    let mut qtb = target.clone();
    qr.q_tr_mul(&mut qtb);
    let r = qr.r();
    r.solve_upper_triangular(&qtb.rows(0, n).into_owned())
        .ok_or(Error::RankDeficient { condition })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MprOptions {
    pub include_intercept: bool,
}

impl Default for MprOptions {
    fn default() -> Self {
        MprOptions {
            include_intercept: true,
        }
    }
}

/// Multiple polynomial regression over z-scored channel voltages:
/// `y = intercept + coefficients · expand(z)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(into = "MprRepr", try_from = "MprRepr")]
pub struct PolynomialModel {
    pub channels: ChannelSet,
    pub basis: MonomialBasis,
    pub coefficients: Vec<f64>,
    pub intercept: f64,
    pub standardization: Vec<Standardization>,
    /// Latest timestamp among training records.
    pub created_utc: i64,
    pub training_metrics: Option<MetricsReport>,
}

#[derive(Serialize, Deserialize)]
struct MprRepr {
    channels: ChannelSet,
    degree: u8,
    monomial_exponents: Vec<Exponents>,
    coefficients: Vec<f64>,
    intercept: f64,
    standardization: Vec<Standardization>,
    created_utc: i64,
    training_metrics: Option<MetricsReport>,
}

impl From<PolynomialModel> for MprRepr {
    fn from(m: PolynomialModel) -> Self {
        MprRepr {
            channels: m.channels,
            degree: m.basis.degree(),
            monomial_exponents: m.basis.monomials().to_vec(),
            coefficients: m.coefficients,
            intercept: m.intercept,
            standardization: m.standardization,
            created_utc: m.created_utc,
            training_metrics: m.training_metrics,
        }
    }
}

impl TryFrom<MprRepr> for PolynomialModel {
    type Error = Error;

    fn try_from(r: MprRepr) -> Result<Self> {
        let basis = MonomialBasis::from_exponents(r.channels.len(), r.degree, &r.monomial_exponents)?;
        if r.coefficients.len() != basis.monomials().len() {
            return Err(Error::InvalidInput(format!(
                "expected {} coefficients, got {}",
                basis.monomials().len(),
                r.coefficients.len()
            )));
        }
        if r.standardization.len() != r.channels.len() {
            return Err(Error::InvalidInput("standardization length mismatch".into()));
        }
        for s in &r.standardization {
            s.check()?;
        }
        Ok(PolynomialModel {
            channels: r.channels,
            basis,
            coefficients: r.coefficients,
            intercept: r.intercept,
            standardization: r.standardization,
            created_utc: r.created_utc,
            training_metrics: r.training_metrics,
        })
    }
}

impl PolynomialModel {
    /// Fits raw channel rows against targets.
    pub fn fit_xy(
        inputs: &[Vec<f64>],
        targets: &[f64],
        channels: ChannelSet,
        degree: u8,
        opts: MprOptions,
    ) -> Result<Self> {
        if inputs.len() != targets.len() {
            return Err(Error::LengthMismatch {
                left: inputs.len(),
                right: targets.len(),
            });
        }
        if inputs.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let basis = MonomialBasis::new(channels.len(), degree)?.with_intercept(opts.include_intercept);
        let needed = basis.monomials().len() + 1;
        if inputs.len() < needed {
            return Err(Error::TooFewSamples {
                needed,
                got: inputs.len(),
            });
        }
        if let Some(row) = inputs.iter().find(|r| r.len() != channels.len()) {
            return Err(Error::ArityMismatch {
                expected: channels.len(),
                got: row.len(),
            });
        }
        if inputs.iter().flatten().chain(targets).any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("non-finite calibration data".into()));
        }

        let scaling = fit_columns(inputs, channels.len())?;
        let p = basis.n_features();
        let mut flat = Vec::with_capacity(inputs.len() * p);
        for x in inputs {
            basis.expand_into(&standardize(x, &scaling)?, &mut flat)?;
        }
        let design = DMatrix::from_row_slice(inputs.len(), p, &flat);
        let beta = lstsq(&design, &DVector::from_column_slice(targets))?;

        let (intercept, coefficients) = if opts.include_intercept {
            (beta[0], beta.iter().skip(1).copied().collect())
        } else {
            (0.0, beta.iter().copied().collect())
        };
        let mut model = PolynomialModel {
            channels,
            basis,
            coefficients,
            intercept,
            standardization: scaling,
            created_utc: 0,
            training_metrics: None,
        };
        let fitted = inputs
            .iter()
            .map(|x| model.predict(x))
            .collect::<Result<Vec<_>>>()?;
        model.training_metrics = full_report(targets, &fitted).ok();
        Ok(model)
    }

    pub fn degree(&self) -> u8 {
        self.basis.degree()
    }

    /// Prediction from this model's channel voltages, in `channels` order.
    pub fn predict(&self, x: &[f64]) -> Result<f64> {
        let z = standardize(x, &self.standardization)?;
        let features = self.basis.expand(&z)?;
        let skip = usize::from(self.basis.include_intercept());
        Ok(self.intercept
            + features[skip..]
                .iter()
                .zip(&self.coefficients)
                .map(|(f, c)| f * c)
                .sum::<f64>())
    }

    pub fn predict_volts(&self, volts: [f64; 3]) -> Result<f64> {
        let x = self.channels.select(volts);
        warn_if_out_of_range(self.channels, &x);
        self.predict(&x)
    }

    pub fn predict_record(&self, record: &SampleRecord) -> Result<f64> {
        self.predict_volts(record.volts())
    }

    /// Largest forward-difference slope over single-channel steps of
    /// `step` volts at `x` (mg/dl per volt).
    pub fn local_sensitivity(&self, x: &[f64], step: f64) -> Result<f64> {
        let base = self.predict(x)?;
        let mut worst: f64 = 0.0;
        for i in 0..x.len() {
            let mut probe = x.to_vec();
            probe[i] += step;
            worst = worst.max((self.predict(&probe)? - base).abs() / step);
        }
        Ok(worst)
    }
}

pub fn fit_mpr(train: &Dataset, channels: ChannelSet, degree: u8) -> Result<PolynomialModel> {
    fit_mpr_with(train, channels, degree, MprOptions::default())
}

pub fn fit_mpr_with(
    train: &Dataset,
    channels: ChannelSet,
    degree: u8,
    opts: MprOptions,
) -> Result<PolynomialModel> {
    if train.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut model = PolynomialModel::fit_xy(&train.inputs(channels), &train.targets(), channels, degree, opts)?;
    model.created_utc = train.records.iter().map(|r| r.timestamp).max().unwrap_or(0);
    Ok(model)
}
