//! biLipschitz constants for `(R^n, D_{J_n})` self-maps.
//!
//! With `D(x, x') = e^t` and `D(Fx, Fx') = e^s`, the estimates take the form
//! `e^{s-t} <= K * sqrt(Q(e^{(t-s)N}))`, where `Q(M)` is the sum of squared
//! entries and `Q(e^{uN}) = sum_k (n-k) (u^k/k!)^2`. The returned bound is
//! `e^a` for the largest `a` satisfying the inequality with equality.

use crate::error::{Error, Result};

const SCAN_STEP: f64 = 1e-4;
const ROOT_TOL: f64 = 1e-12;

/// `Q(e^{uN})` for the `n x n` nilpotent shift.
pub fn q_exp_nilpotent(n: usize, u: f64) -> f64 {
    let mut term = 1.0;
    let mut sum = n as f64;
    for k in 1..n {
        term *= u / k as f64;
        sum += (n - k) as f64 * term * term;
    }
    sum
}

/// `Q(a_0 I + a_1 N + ... )` for coefficients of a polynomial in `N`.
pub fn q_poly(n: usize, coeffs: &[f64]) -> f64 {
    coeffs
        .iter()
        .take(n)
        .enumerate()
        .map(|(k, a)| (n - k) as f64 * a * a)
        .sum()
}

/// Largest `u >= 0` with `u <= ln_k + ln sqrt(Q(e^{uN}))`, or `0` if none.
fn largest_root(n: usize, ln_k: f64) -> f64 {
    let phi = |u: f64| u - ln_k - 0.5 * q_exp_nilpotent(n, u).ln();
    // phi is nondecreasing on [n-1, inf).
    let mut hi = (n as f64 - 1.0).max(1.0);
    while phi(hi) <= 0.0 {
        hi *= 2.0;
    }
    let steps = (hi / SCAN_STEP).ceil() as usize;
    let mut last_nonpos = None;
    for i in 0..=steps {
        let u = (i as f64 * SCAN_STEP).min(hi);
        if phi(u) <= 0.0 {
            last_nonpos = Some(u);
        }
    }
    let Some(lo) = last_nonpos else { return 0.0 };
    let (mut lo, mut hi) = (lo, (lo + SCAN_STEP).min(hi));
    while hi - lo > ROOT_TOL {
        let mid = 0.5 * (lo + hi);
        if phi(mid) <= 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Bound for `x -> x + (C(x_n), 0, ..., 0)` with `C` `L`-Lipschitz.
pub fn shear_bilip_bound(n: usize, lipschitz: f64) -> f64 {
    if n <= 1 {
        return 1.0;
    }
    largest_root(n, (1.0 + lipschitz.max(0.0)).ln()).exp()
}

/// Coefficients of `(a_0 I + a_1 N + ...)^{-1}` modulo `N^n`.
pub fn inverse_poly(n: usize, coeffs: &[f64]) -> Result<Vec<f64>> {
    let a0 = coeffs.first().copied().unwrap_or(0.0);
    if a0 == 0.0 || !a0.is_finite() {
        return Err(Error::invalid("a_0 must be nonzero"));
    }
    let a = |k: usize| coeffs.get(k).copied().unwrap_or(0.0);
    let mut inv = vec![0.0; n];
    inv[0] = 1.0 / a0;
    for k in 1..n {
        let s: f64 = (1..=k).map(|j| a(j) * inv[k - j]).sum();
        inv[k] = -s / a0;
    }
    Ok(inv)
}

/// Bound for `x -> (a_0 I + a_1 N + ... + a_{n-1} N^{n-1}) x`, covering the
/// map and its inverse.
pub fn poly_bilip_bound(n: usize, coeffs: &[f64]) -> Result<f64> {
    if coeffs.len() > n {
        return Err(Error::DimensionMismatch {
            expected: n,
            found: coeffs.len(),
        });
    }
    if coeffs.iter().any(|c| !c.is_finite()) {
        return Err(Error::invalid("coefficients must be finite"));
    }
    let inv = inverse_poly(n, coeffs)?;
    let forward = largest_root(n, 0.5 * q_poly(n, coeffs).ln());
    let backward = largest_root(n, 0.5 * q_poly(n, &inv).ln());
    Ok(forward.max(backward).exp())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bisect(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64) -> f64 {
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if f(lo) * f(mid) <= 0.0 {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        0.5 * (lo + hi)
    }

    #[test]
    fn q_of_exponential() {
        assert_eq!(q_exp_nilpotent(1, 3.0), 1.0);
        assert_eq!(q_exp_nilpotent(2, 3.0), 2.0 + 9.0);
        assert!((q_exp_nilpotent(3, 2.0) - (3.0 + 2.0 * 4.0 + 4.0)).abs() < 1e-15);
    }

    #[test]
    fn shear_n2_matches_scalar_equation() {
        let a = bisect(|u: f64| u.exp() - (2.0 + u * u).sqrt(), 0.1, 1.0);
        assert!((shear_bilip_bound(2, 0.0) - a.exp()).abs() < 1e-9);
        assert!((a - 0.385).abs() < 5e-3);
        let a = bisect(|u: f64| u.exp() - 2.0 * (2.0 + u * u).sqrt(), 0.5, 3.0);
        assert!((shear_bilip_bound(2, 1.0) - a.exp()).abs() < 1e-9);
    }

    #[test]
    fn shear_degenerate_dimension() {
        assert_eq!(shear_bilip_bound(1, 5.0), 1.0);
        for n in 2..6 {
            assert!(shear_bilip_bound(n, 0.0) >= 1.0);
        }
    }

    #[test]
    fn poly_examples() {
        let a = bisect(|u: f64| u.exp() - ((2.0 + u * u) * 8.0).sqrt(), 0.5, 5.0);
        assert!((poly_bilip_bound(2, &[2.0, 0.0]).unwrap() - a.exp()).abs() < 1e-9);
        // B = I reduces to Q(B) = n.
        let a = bisect(|u: f64| u.exp() - ((3.0 + 2.0 * u * u + u.powi(4) / 4.0) * 3.0).sqrt(), 0.5, 5.0);
        assert!((poly_bilip_bound(3, &[1.0, 0.0, 0.0]).unwrap() - a.exp()).abs() < 1e-9);
        assert!(poly_bilip_bound(2, &[0.0, 1.0]).is_err());
        assert!(poly_bilip_bound(3, &[0.01]).unwrap() >= 1.0);
    }

    #[test]
    fn inverse_series() {
        let inv = inverse_poly(4, &[2.0, 1.0, -0.5, 0.25]).unwrap();
        // (2 + N - N^2/2 + N^3/4)(inv) = 1 mod N^4.
        let a = [2.0, 1.0, -0.5, 0.25];
        for k in 0..4 {
            let s: f64 = (0..=k).map(|j| a[j] * inv[k - j]).sum();
            assert!((s - if k == 0 { 1.0 } else { 0.0 }).abs() < 1e-15);
        }
    }
}
