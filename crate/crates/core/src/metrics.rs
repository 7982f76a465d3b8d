//! Pointwise glucose error measures and correlation statistics.
//!
//! `mard` divides each absolute error by the reference value, `avge` by the
//! estimate. Both are reported in percent.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

fn check_pairs(reference: &[f64], estimate: &[f64]) -> Result<()> {
    if reference.len() != estimate.len() {
        return Err(Error::LengthMismatch {
            left: reference.len(),
            right: estimate.len(),
        });
    }
    if reference.is_empty() {
        return Err(Error::EmptyDataset);
    }
    Ok(())
}

/// Mean absolute deviation in mg/dl.
pub fn mad(reference: &[f64], estimate: &[f64]) -> Result<f64> {
    check_pairs(reference, estimate)?;
    let sum: f64 = reference
        .iter()
        .zip(estimate)
        .map(|(r, e)| (e - r).abs())
        .sum();
    Ok(sum / reference.len() as f64)
}

/// Mean absolute relative difference, percent of the reference.
pub fn mard(reference: &[f64], estimate: &[f64]) -> Result<f64> {
    check_pairs(reference, estimate)?;
    if reference.iter().any(|&r| r <= 0.0) {
        return Err(Error::InvalidInput("mARD requires positive reference values".into()));
    }
    let sum: f64 = reference
        .iter()
        .zip(estimate)
        .map(|(r, e)| ((e - r) / r).abs())
        .sum();
    Ok(100.0 * sum / reference.len() as f64)
}

pub fn rmse(reference: &[f64], estimate: &[f64]) -> Result<f64> {
    check_pairs(reference, estimate)?;
    let sse: f64 = reference
        .iter()
        .zip(estimate)
        .map(|(r, e)| (r - e) * (r - e))
        .sum();
    Ok((sse / reference.len() as f64).sqrt())
}

/// Average error, percent of the estimate.
pub fn avge(reference: &[f64], estimate: &[f64]) -> Result<f64> {
    check_pairs(reference, estimate)?;
    if estimate.iter().any(|&e| e <= 0.0) {
        return Err(Error::InvalidInput("AvgE requires positive estimates".into()));
    }
    let sum: f64 = reference
        .iter()
        .zip(estimate)
        .map(|(r, e)| ((e - r) / e).abs())
        .sum();
    Ok(100.0 * sum / reference.len() as f64)
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Sample Pearson correlation.
pub fn pearson_r(reference: &[f64], estimate: &[f64]) -> Result<f64> {
    check_pairs(reference, estimate)?;
    if reference.len() < 2 {
        return Err(Error::TooFewSamples {
            needed: 2,
            got: reference.len(),
        });
    }
    let (mr, me) = (mean(reference), mean(estimate));
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (r, e) in reference.iter().zip(estimate) {
        let (dr, de) = (r - mr, e - me);
        sxy += dr * de;
        sxx += dr * dr;
        syy += de * de;
    }
    if sxx == 0.0 {
        return Err(Error::ZeroVariance("reference"));
    }
    if syy == 0.0 {
        return Err(Error::ZeroVariance("estimate"));
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// Coefficient of determination `1 - SSE/SST` of the estimates against the
/// reference. This is not `pearson_r²` outside the fitted training set.
pub fn r_squared(reference: &[f64], estimate: &[f64]) -> Result<f64> {
    check_pairs(reference, estimate)?;
    let mr = mean(reference);
    let sst: f64 = reference.iter().map(|r| (r - mr) * (r - mr)).sum();
    if sst == 0.0 {
        return Err(Error::ZeroVariance("reference"));
    }
    let sse: f64 = reference
        .iter()
        .zip(estimate)
        .map(|(r, e)| (r - e) * (r - e))
        .sum();
    Ok(1.0 - sse / sst)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub n: usize,
    pub mad: f64,
    pub mard: f64,
    pub rmse: f64,
    pub avge: f64,
    /// `None` when undefined (fewer than two points or zero variance).
    pub pearson_r: Option<f64>,
    pub r_squared: Option<f64>,
}

pub fn full_report(reference: &[f64], estimate: &[f64]) -> Result<MetricsReport> {
    Ok(MetricsReport {
        n: reference.len(),
        mad: mad(reference, estimate)?,
        mard: mard(reference, estimate)?,
        rmse: rmse(reference, estimate)?,
        avge: avge(reference, estimate)?,
        pearson_r: pearson_r(reference, estimate).ok(),
        r_squared: r_squared(reference, estimate).ok(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    const REF: [f64; 2] = [100.0, 200.0];
    const EST: [f64; 2] = [110.0, 190.0];

    #[test]
    fn worked_pair() {
        assert_relative_eq!(mad(&REF, &EST).unwrap(), 10.0);
        assert_relative_eq!(mard(&REF, &EST).unwrap(), 7.5);
        assert_relative_eq!(rmse(&REF, &EST).unwrap(), 10.0);
        let expected_avge = (10.0 / 110.0 + 10.0 / 190.0) / 2.0 * 100.0;
        assert!((avge(&REF, &EST).unwrap() - expected_avge).abs() < 1e-12);
        assert!((avge(&REF, &EST).unwrap() - 7.177_033_492_822_966).abs() < 1e-9);
        assert!(avge(&REF, &EST).unwrap() != mard(&REF, &EST).unwrap());
    }

    #[test]
    fn identical_vectors_are_zero() {
        let v = [80.0, 120.0, 210.0, 330.0, 95.0];
        let r = full_report(&v, &v).unwrap();
        assert_eq!((r.mad, r.mard, r.rmse, r.avge), (0.0, 0.0, 0.0, 0.0));
        assert_relative_eq!(r.pearson_r.unwrap(), 1.0);
        assert_relative_eq!(r.r_squared.unwrap(), 1.0);
    }

    #[test]
    fn single_outlier() {
        assert_relative_eq!(rmse(&[100.0, 100.0], &[100.0, 120.0]).unwrap(), 200f64.sqrt());
    }

    #[test]
    fn mard_scale_invariant() {
        let s = 3.7;
        let r2: Vec<f64> = REF.iter().map(|r| r * s).collect();
        let e2: Vec<f64> = EST.iter().map(|e| e * s).collect();
        assert_relative_eq!(mard(&r2, &e2).unwrap(), 7.5, epsilon = 1e-12);
    }

    #[test]
    fn mad_permutation_invariant() {
        let r = [100.0, 150.0, 200.0];
        let e = [90.0, 170.0, 205.0];
        let a = mad(&r, &e).unwrap();
        let b = mad(&[200.0, 100.0, 150.0], &[205.0, 90.0, 170.0]).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn errors() {
        assert!(matches!(mad(&[1.0], &[1.0, 2.0]), Err(Error::LengthMismatch { .. })));
        assert!(matches!(mad(&[], &[]), Err(Error::EmptyDataset)));
        assert!(mard(&[0.0, 1.0], &[1.0, 1.0]).is_err());
        assert!(avge(&[1.0, 1.0], &[0.0, 1.0]).is_err());
    }

    #[test]
    fn correlation_edge_cases() {
        let r = [90.0, 140.0, 260.0, 310.0];
        let affine: Vec<f64> = r.iter().map(|x| 0.5 * x + 12.0).collect();
        assert_relative_eq!(pearson_r(&r, &affine).unwrap(), 1.0, epsilon = 1e-12);
        let m = r.iter().sum::<f64>() / 4.0;
        let constant = [m; 4];
        assert!(matches!(pearson_r(&r, &constant), Err(Error::ZeroVariance(_))));
        assert_relative_eq!(r_squared(&r, &constant).unwrap(), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn r_squared_equals_pearson_squared_for_own_ls_fit() {
        // simple linear least squares on its own training data
        let x = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        let y = [2.0, 4.5, 5.5, 8.5, 9.0, 12.5];
        let (mx, my) = (mean(&x), mean(&y));
        let sxy: f64 = x.iter().zip(&y).map(|(a, b)| (a - mx) * (b - my)).sum();
        let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
        let slope = sxy / sxx;
        let fit: Vec<f64> = x.iter().map(|a| my + slope * (a - mx)).collect();
        let r = pearson_r(&y, &fit).unwrap();
        assert_relative_eq!(r_squared(&y, &fit).unwrap(), r * r, epsilon = 1e-12);
    }

    #[test]
    fn rmse_dominates_mad_on_random_vectors() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        for _ in 0..1000 {
            let n = rng.random_range(1..50);
            let r: Vec<f64> = (0..n).map(|_| rng.random_range(40.0..450.0)).collect();
            let e: Vec<f64> = (0..n).map(|_| rng.random_range(40.0..450.0)).collect();
            let report = full_report(&r, &e).unwrap();
            // direct recomputation
            let direct_mad = r.iter().zip(&e).map(|(a, b)| (a - b).abs()).sum::<f64>() / n as f64;
            assert_relative_eq!(report.mad, direct_mad, max_relative = 1e-12);
            assert!(report.rmse >= report.mad * (1.0 - 1e-12));
        }
    }

    proptest! {
        #[test]
        fn relative_errors_nonnegative(
            pairs in prop::collection::vec((50.0f64..400.0, 50.0f64..400.0), 1..40)
        ) {
            let (r, e): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
            let m = mard(&r, &e).unwrap();
            let a = avge(&r, &e).unwrap();
            prop_assert!(m >= 0.0 && a >= 0.0);
            let equal = r.iter().zip(&e).all(|(x, y)| x == y);
            prop_assert_eq!(m == 0.0, equal);
        }

        #[test]
        fn pearson_invariant_under_positive_affine(
            pairs in prop::collection::vec((50.0f64..400.0, 50.0f64..400.0), 3..30),
            a in 0.1f64..10.0,
            b in -100.0f64..100.0,
        ) {
            let (r, e): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
            if let Ok(p) = pearson_r(&r, &e) {
                let mapped: Vec<f64> = e.iter().map(|x| a * x + b).collect();
                let q = pearson_r(&r, &mapped).unwrap();
                prop_assert!((p - q).abs() < 1e-9);
            }
        }
    }
}
