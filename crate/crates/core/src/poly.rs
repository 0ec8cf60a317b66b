//! Polynomial helpers for coefficient lists in ascending powers of the
//! backward shift `q^-1`.
//!
//! A list `[a0, a1, ..., an]` denotes `a0 + a1 q^-1 + ... + an q^-n`. Its roots
//! in `z = q` are those of `a0 z^n + a1 z^(n-1) + ... + an`, which is what
//! [`roots`] returns.

use nalgebra::{DMatrix, Schur};
use num_complex::Complex64;

use crate::error::{Error, Result};

const SCHUR_MAX_ITER: usize = 10_000;

pub fn mul(a: &[f64], b: &[f64]) -> Vec<f64> {
    if a.is_empty() || b.is_empty() {
        return Vec::new();
    }
    let mut out = vec![0.0; a.len() + b.len() - 1];
    for (i, &ai) in a.iter().enumerate() {
        for (j, &bj) in b.iter().enumerate() {
            out[i + j] += ai * bj;
        }
    }
    out
}

pub fn add(a: &[f64], b: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; a.len().max(b.len())];
    for (i, &ai) in a.iter().enumerate() {
        out[i] += ai;
    }
    for (i, &bi) in b.iter().enumerate() {
        out[i] += bi;
    }
    out
}

/// Evaluates `sum c_k z^-k` at `z^-1 = zinv` by Horner's rule.
pub fn eval_backward(coeffs: &[f64], zinv: Complex64) -> Complex64 {
    coeffs
        .iter()
        .rev()
        .fold(Complex64::new(0.0, 0.0), |acc, &c| acc * zinv + c)
}

/// Roots in `z` of a backward-shift polynomial, via the eigenvalues of the
/// companion matrix of the monic forward-shift polynomial.
///
/// Trailing zero coefficients contribute roots at the origin. The leading
/// coefficient must be nonzero.
pub fn roots(coeffs: &[f64]) -> Result<Vec<Complex64>> {
    let lead = *coeffs
        .first()
        .ok_or(Error::EmptyInput("polynomial coefficients"))?;
    if lead == 0.0 {
        return Err(Error::InvalidArgument(
            "leading polynomial coefficient is zero".into(),
        ));
    }
    let trimmed_len = coeffs.iter().rposition(|&c| c != 0.0).map_or(0, |p| p + 1);
    let zeros_at_origin = coeffs.len() - trimmed_len;
    let active = &coeffs[..trimmed_len];
    let degree = active.len() - 1;

    let mut out = Vec::with_capacity(coeffs.len() - 1);
    match degree {
        0 => {}
        1 => out.push(Complex64::new(-active[1] / active[0], 0.0)),
        _ => {
            // z^n + c1 z^(n-1) + ... + cn, companion matrix with the
            // negated coefficients in the first row.
            let mut m = DMatrix::<f64>::zeros(degree, degree);
            for j in 0..degree {
                m[(0, j)] = -active[j + 1] / lead;
            }
            for i in 1..degree {
                m[(i, i - 1)] = 1.0;
            }
            let schur = Schur::try_new(m, f64::EPSILON, SCHUR_MAX_ITER)
                .ok_or(Error::RootFinding { degree })?;
            out.extend(schur.complex_eigenvalues().iter().copied());
        }
    }
    out.extend(std::iter::repeat_n(
        Complex64::new(0.0, 0.0),
        zeros_at_origin,
    ));
    Ok(out)
}

/// Largest root modulus, or 0 for a constant polynomial.
pub fn max_root_modulus(coeffs: &[f64]) -> Result<f64> {
    Ok(roots(coeffs)?.iter().map(|r| r.norm()).fold(0.0, f64::max))
}
