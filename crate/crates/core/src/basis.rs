//! Multivariate monomial bases for polynomial calibration kernels.
//!
//! The three-variable cubic basis follows a fixed published term order:
//!
//! ```text
//! x1³ x2³ x3³ x1²x2 x1²x3 x1x2² x1x3² x2²x3 x2x3² x1² x2² x3² x1x2x3 x1x2 x1x3 x2x3 x1 x2 x3
//! ```
//!
//! Every other supported (arity, degree) pair uses graded reverse-lex
//! order: total degree descending, then exponent tuples in descending
//! lexicographic order. The constant term is never part of the list; an
//! intercept column is prepended by [`MonomialBasis::expand`] when
//! `include_intercept` is set.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub type Exponents = Vec<u8>;

const CUBIC3_ORDER: [[u8; 3]; 19] = [
    [3, 0, 0],
    [0, 3, 0],
    [0, 0, 3],
    [2, 1, 0],
    [2, 0, 1],
    [1, 2, 0],
    [1, 0, 2],
    [0, 2, 1],
    [0, 1, 2],
    [2, 0, 0],
    [0, 2, 0],
    [0, 0, 2],
    [1, 1, 1],
    [1, 1, 0],
    [1, 0, 1],
    [0, 1, 1],
    [1, 0, 0],
    [0, 1, 0],
    [0, 0, 1],
];

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MonomialBasis {
    n_vars: usize,
    degree: u8,
    monomials: Vec<Exponents>,
    include_intercept: bool,
}

impl MonomialBasis {
    /// Builds the canonical basis. Only 2 or 3 variables and degree 3 or 4
    /// are supported.
    pub fn new(n_vars: usize, degree: u8) -> Result<Self> {
        if !(2..=3).contains(&n_vars) || !(3..=4).contains(&degree) {
            return Err(Error::InvalidArgument(format!(
                "unsupported basis: {n_vars} variables, degree {degree} (need 2|3 variables, degree 3|4)"
            )));
        }
        let monomials = if n_vars == 3 && degree == 3 {
            CUBIC3_ORDER.iter().map(|e| e.to_vec()).collect()
        } else {
            graded_order(n_vars, degree)
        };
        Ok(MonomialBasis {
            n_vars,
            degree,
            monomials,
            include_intercept: true,
        })
    }

    /// Rebuilds a basis from stored exponents, checking they match the
    /// canonical order for that arity and degree.
    pub fn from_exponents(n_vars: usize, degree: u8, exponents: &[Exponents]) -> Result<Self> {
        let basis = Self::new(n_vars, degree)?;
        if basis.monomials != exponents {
            return Err(Error::InvalidInput(
                "monomial exponents do not match the canonical basis order".into(),
            ));
        }
        Ok(basis)
    }

    pub fn with_intercept(mut self, include: bool) -> Self {
        self.include_intercept = include;
        self
    }

    pub fn n_vars(&self) -> usize {
        self.n_vars
    }

    pub fn degree(&self) -> u8 {
        self.degree
    }

    pub fn monomials(&self) -> &[Exponents] {
        &self.monomials
    }

    pub fn include_intercept(&self) -> bool {
        self.include_intercept
    }

    /// Number of expanded features, including the intercept column if any.
    pub fn n_features(&self) -> usize {
        self.monomials.len() + usize::from(self.include_intercept)
    }

    pub fn expand(&self, x: &[f64]) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(self.n_features());
        self.expand_into(x, &mut out)?;
        Ok(out)
    }

    /// Appends the expanded features of `x` to `out`.
    pub fn expand_into(&self, x: &[f64], out: &mut Vec<f64>) -> Result<()> {
        if x.len() != self.n_vars {
            return Err(Error::ArityMismatch {
                expected: self.n_vars,
                got: x.len(),
            });
        }
        // powers[i][p] = x_i^p
        let d = usize::from(self.degree);
        let mut powers = [[1.0f64; 5]; 3];
        for (i, &xi) in x.iter().enumerate() {
            for p in 1..=d {
                powers[i][p] = powers[i][p - 1] * xi;
            }
        }
        if self.include_intercept {
            out.push(1.0);
        }
        for mono in &self.monomials {
            let term = mono
                .iter()
                .enumerate()
                .map(|(i, &e)| powers[i][usize::from(e)])
                .product();
            out.push(term);
        }
        Ok(())
    }
}

fn graded_order(n_vars: usize, degree: u8) -> Vec<Exponents> {
    let mut out = Vec::new();
    for total in (1..=degree).rev() {
        let mut current = vec![0u8; n_vars];
        compositions(total, 0, &mut current, &mut out);
    }
    out
}

// Exponent tuples summing to `remaining` over positions `pos..`, in
// descending lexicographic order.
fn compositions(remaining: u8, pos: usize, current: &mut Exponents, out: &mut Vec<Exponents>) {
    if pos == current.len() - 1 {
        current[pos] = remaining;
        out.push(current.clone());
        return;
    }
    for e in (0..=remaining).rev() {
        current[pos] = e;
        compositions(remaining - e, pos + 1, current, out);
    }
    current[pos] = 0;
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    // Brute-force enumeration of every exponent tuple with 1 <= sum <= degree.
    fn brute_force(n_vars: usize, degree: u8) -> Vec<Exponents> {
        let mut all = Vec::new();
        let d = degree;
        for a in 0..=d {
            for b in 0..=d {
                let c_range = if n_vars == 3 { 0..=d } else { 0..=0 };
                for c in c_range {
                    let s = a + b + c;
                    if (1..=d).contains(&s) {
                        let mut e = vec![a, b];
                        if n_vars == 3 {
                            e.push(c);
                        }
                        all.push(e);
                    }
                }
            }
        }
        all.sort();
        all
    }

    fn binom(n: u64, k: u64) -> u64 {
        (1..=k).fold(1, |acc, i| acc * (n + 1 - i) / i)
    }

    #[test]
    fn counts_match_brute_force() {
        for (n, d, expected) in [(3, 3, 19), (3, 4, 34), (2, 3, 9), (2, 4, 14)] {
            let basis = MonomialBasis::new(n, d).unwrap();
            let mut got = basis.monomials().to_vec();
            assert_eq!(got.len(), expected);
            assert_eq!(got.len() as u64, binom(n as u64 + d as u64, d as u64) - 1);
            got.sort();
            assert_eq!(got, brute_force(n, d));
        }
    }

    #[test]
    fn cubic_three_follows_published_order() {
        let basis = MonomialBasis::new(3, 3).unwrap();
        assert_eq!(basis.monomials()[0], vec![3, 0, 0]);
        assert_eq!(basis.monomials()[12], vec![1, 1, 1]);
        assert_eq!(basis.monomials()[18], vec![0, 0, 1]);
    }

    #[test]
    fn graded_order_is_descending() {
        let basis = MonomialBasis::new(2, 3).unwrap();
        let expected: Vec<Exponents> = vec![
            vec![3, 0],
            vec![2, 1],
            vec![1, 2],
            vec![0, 3],
            vec![2, 0],
            vec![1, 1],
            vec![0, 2],
            vec![1, 0],
            vec![0, 1],
        ];
        assert_eq!(basis.monomials(), expected.as_slice());
        let quartic = MonomialBasis::new(3, 4).unwrap();
        assert_eq!(quartic.monomials()[0], vec![4, 0, 0]);
        assert_eq!(quartic.monomials()[33], vec![0, 0, 1]);
    }

    #[test]
    fn rejects_unsupported() {
        assert!(MonomialBasis::new(1, 3).is_err());
        assert!(MonomialBasis::new(3, 2).is_err());
        assert!(MonomialBasis::new(4, 3).is_err());
    }

    #[test]
    fn expand_ones_and_zeros() {
        let basis = MonomialBasis::new(3, 3).unwrap().with_intercept(false);
        assert!(basis.expand(&[1.0, 1.0, 1.0]).unwrap().iter().all(|&f| f == 1.0));
        assert!(basis.expand(&[0.0; 3]).unwrap().iter().all(|&f| f == 0.0));
        let with = MonomialBasis::new(3, 3).unwrap();
        let f = with.expand(&[0.0; 3]).unwrap();
        assert_eq!(f[0], 1.0);
        assert!(f[1..].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn expand_single_axis() {
        let basis = MonomialBasis::new(3, 3).unwrap().with_intercept(false);
        let f = basis.expand(&[2.0, 0.0, 0.0]).unwrap();
        // x1^3 at 0, x1^2 at 9, x1 at 16
        for (j, v) in f.iter().enumerate() {
            let expected = match j {
                0 => 8.0,
                9 => 4.0,
                16 => 2.0,
                _ => 0.0,
            };
            assert_eq!(*v, expected, "feature {j}");
        }
    }

    #[test]
    fn expand_arity_mismatch() {
        let basis = MonomialBasis::new(2, 3).unwrap();
        assert!(matches!(
            basis.expand(&[1.0, 2.0, 3.0]),
            Err(Error::ArityMismatch { expected: 2, got: 3 })
        ));
    }

    #[test]
    fn construction_is_pure() {
        assert_eq!(MonomialBasis::new(3, 4).unwrap(), MonomialBasis::new(3, 4).unwrap());
    }

    proptest! {
        #[test]
        fn homogeneous_per_monomial(
            x in prop::array::uniform3(-3.0f64..3.0),
            s in 0.2f64..3.0,
            axis in 0usize..3,
            degree in 3u8..=4,
        ) {
            let basis = MonomialBasis::new(3, degree).unwrap().with_intercept(false);
            let base = basis.expand(&x).unwrap();
            let mut scaled_x = x;
            scaled_x[axis] *= s;
            let scaled = basis.expand(&scaled_x).unwrap();
            for (j, mono) in basis.monomials().iter().enumerate() {
                let factor = s.powi(i32::from(mono[axis]));
                let expected = base[j] * factor;
                prop_assert!((scaled[j] - expected).abs() <= 1e-12 * expected.abs().max(1.0));
            }
        }

        #[test]
        fn dot_product_matches_nested_loops(
            x in prop::array::uniform3(-2.0f64..2.0),
            seed_coefs in prop::collection::vec(-5.0f64..5.0, 35),
        ) {
            let basis = MonomialBasis::new(3, 4).unwrap().with_intercept(false);
            let feats = basis.expand(&x).unwrap();
            let coefs = &seed_coefs[..feats.len()];
            let dot: f64 = feats.iter().zip(coefs).map(|(f, c)| f * c).sum();
            // direct evaluation: look up each exponent tuple's coefficient
            let mut direct = 0.0;
            for a in 0..=4u8 {
                for b in 0..=4u8 {
                    for c in 0..=4u8 {
                        let e = vec![a, b, c];
                        if let Some(j) = basis.monomials().iter().position(|m| *m == e) {
                            let mut term = coefs[j];
                            for _ in 0..a { term *= x[0]; }
                            for _ in 0..b { term *= x[1]; }
                            for _ in 0..c { term *= x[2]; }
                            direct += term;
                        }
                    }
                }
            }
            let scale = feats.iter().zip(coefs).map(|(f, c)| (f * c).abs()).sum::<f64>().max(1.0);
            prop_assert!((dot - direct).abs() <= 1e-12 * scale);
        }
    }
}
