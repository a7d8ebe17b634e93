//! Explicit boundary self-maps of `(R^n, D_{J_n})`: the family
//! `F(x) = (a_0 I + a_1 N + ... + a_{n-2} N^{n-2}) x + v + (C(x_n), 0, ..., 0)`
//! and its building blocks, with biLipschitz bounds and empirical probes.
//!
//! `N` is the upper shift, `(N x)_i = x_{i+1}`.

mod bounds;
mod estimate;
mod piecewise;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;

pub use bounds::{inverse_poly, poly_bilip_bound, q_exp_nilpotent, q_poly, shear_bilip_bound};
pub use estimate::{
    conformal_probe, distortion_profile, empirical_bilip, qs_profile, transfer_check, ConformalProbe,
    ConformalRow, DistortionReport, DistortionRow, QSProfile,
};
pub use piecewise::PiecewiseLinear;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum QSMapSpec {
    Translation {
        v: Vec<f64>,
    },
    Linear {
        #[serde(rename = "M")]
        m: Matrix,
    },
    JordanFamily {
        n: usize,
        /// `a_0, ..., a_{n-2}`.
        a: Vec<f64>,
        v: Vec<f64>,
        #[serde(rename = "C")]
        c: PiecewiseLinear,
    },
    PolyNilpotent {
        n: usize,
        /// `a_0, ..., a_{n-1}`.
        coeffs: Vec<f64>,
    },
    Shear {
        n: usize,
        #[serde(rename = "C")]
        c: PiecewiseLinear,
    },
    /// Applied right to left.
    Composition {
        maps: Vec<QSMapSpec>,
    },
}

impl QSMapSpec {
    pub fn from_json_str(text: &str) -> Result<Self> {
        let spec: QSMapSpec =
            serde_json::from_str(text).map_err(|e| Error::Parse(format!("map file: {e}")))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn to_json_string(&self) -> String {
        serde_json::to_string(self).expect("map specs serialize")
    }

    pub fn identity(n: usize) -> Self {
        let mut a = vec![0.0; n.saturating_sub(1).max(1)];
        a[0] = 1.0;
        QSMapSpec::JordanFamily {
            n,
            a,
            v: vec![0.0; n],
            c: PiecewiseLinear::zero(),
        }
    }

    /// Dimension of the domain, `None` for an empty composition.
    pub fn dim(&self) -> Option<usize> {
        match self {
            QSMapSpec::Translation { v } => Some(v.len()),
            QSMapSpec::Linear { m } => Some(m.dim()),
            QSMapSpec::JordanFamily { n, .. }
            | QSMapSpec::PolyNilpotent { n, .. }
            | QSMapSpec::Shear { n, .. } => Some(*n),
            QSMapSpec::Composition { maps } => maps.iter().find_map(QSMapSpec::dim),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            QSMapSpec::Translation { v } => finite(v, "translation vector"),
            QSMapSpec::Linear { .. } => Ok(()),
            QSMapSpec::JordanFamily { n, a, v, .. } => {
                if *n < 2 {
                    return Err(Error::invalid("jordan_family needs n >= 2"));
                }
                if a.is_empty() || a.len() > n - 1 {
                    return Err(Error::invalid(format!(
                        "jordan_family with n = {n} takes 1 to {} coefficients a_0..a_{}, got {}",
                        n - 1,
                        n - 2,
                        a.len()
                    )));
                }
                if a[0] == 0.0 {
                    return Err(Error::invalid("jordan_family needs a_0 != 0"));
                }
                finite(a, "coefficients")?;
                finite(v, "translation vector")?;
                if v.len() != *n {
                    return Err(Error::DimensionMismatch {
                        expected: *n,
                        found: v.len(),
                    });
                }
                Ok(())
            }
            QSMapSpec::PolyNilpotent { n, coeffs } => {
                if *n == 0 || coeffs.is_empty() || coeffs.len() > *n {
                    return Err(Error::invalid(format!(
                        "poly_nilpotent with n = {n} takes 1 to {n} coefficients"
                    )));
                }
                if coeffs[0] == 0.0 {
                    return Err(Error::invalid("poly_nilpotent needs a_0 != 0"));
                }
                finite(coeffs, "coefficients")
            }
            QSMapSpec::Shear { n, .. } => {
                if *n < 2 {
                    return Err(Error::invalid("shear needs n >= 2"));
                }
                Ok(())
            }
            QSMapSpec::Composition { maps } => {
                let dim = self.dim();
                for m in maps {
                    m.validate()?;
                    if m.dim() != dim && m.dim().is_some() {
                        return Err(Error::DimensionMismatch {
                            expected: dim.unwrap_or(0),
                            found: m.dim().unwrap_or(0),
                        });
                    }
                }
                Ok(())
            }
        }
    }

    pub fn eval(&self, x: &[f64]) -> Result<Vec<f64>> {
        if let Some(n) = self.dim() {
            if x.len() != n {
                return Err(Error::DimensionMismatch {
                    expected: n,
                    found: x.len(),
                });
            }
        }
        Ok(match self {
            QSMapSpec::Translation { v } => x.iter().zip(v).map(|(a, b)| a + b).collect(),
            QSMapSpec::Linear { m } => m.apply(x),
            QSMapSpec::JordanFamily { a, v, c, .. } => {
                let mut y = poly_apply(a, x);
                y[0] += c.eval(x[x.len() - 1]);
                for (yi, vi) in y.iter_mut().zip(v) {
                    *yi += vi;
                }
                y
            }
            QSMapSpec::PolyNilpotent { coeffs, .. } => poly_apply(coeffs, x),
            QSMapSpec::Shear { c, .. } => {
                let mut y = x.to_vec();
                y[0] += c.eval(x[x.len() - 1]);
                y
            }
            QSMapSpec::Composition { maps } => {
                let mut y = x.to_vec();
                for m in maps.iter().rev() {
                    y = m.eval(&y)?;
                }
                y
            }
        })
    }

    /// Multiplicative biLipschitz bound for `D_{J_n}` when one is known:
    /// translations are isometries, and `F = T_v o S o B` splits a
    /// jordan_family map into a translation, a shear with Lipschitz constant
    /// `L(C)/|a_0|` and a polynomial in `N`.
    pub fn bilip_bound(&self) -> Option<f64> {
        match self {
            QSMapSpec::Translation { .. } => Some(1.0),
            QSMapSpec::Linear { .. } => None,
            QSMapSpec::JordanFamily { n, a, c, .. } => {
                let shear = shear_bilip_bound(*n, c.lipschitz() / a[0].abs());
                Some(shear * poly_bilip_bound(*n, a).ok()?)
            }
            QSMapSpec::PolyNilpotent { n, coeffs } => poly_bilip_bound(*n, coeffs).ok(),
            QSMapSpec::Shear { n, c } => Some(shear_bilip_bound(*n, c.lipschitz())),
            QSMapSpec::Composition { maps } => maps.iter().map(QSMapSpec::bilip_bound).product(),
        }
    }
}

fn finite(v: &[f64], what: &str) -> Result<()> {
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::invalid(format!("{what} must be finite")));
    }
    Ok(())
}

/// `(sum_k coeffs[k] N^k) x`.
fn poly_apply(coeffs: &[f64], x: &[f64]) -> Vec<f64> {
    let n = x.len();
    (0..n)
        .map(|i| {
            coeffs
                .iter()
                .enumerate()
                .take(n - i)
                .map(|(k, a)| a * x[i + k])
                .sum()
        })
        .collect()
}

/// `outer o inner` for two jordan_family maps of the same dimension,
/// written again as a jordan_family map. Polynomials in `N` multiply; the
/// `N^{n-1}` part of the product only touches the first coordinate through
/// `x_n`, so it moves into `C`.
pub fn compose_jordan(outer: &QSMapSpec, inner: &QSMapSpec) -> Result<QSMapSpec> {
    let (
        QSMapSpec::JordanFamily { n, a, v, c },
        QSMapSpec::JordanFamily {
            n: n2,
            a: a2,
            v: v2,
            c: c2,
        },
    ) = (outer, inner)
    else {
        return Err(Error::invalid("compose_jordan takes two jordan_family maps"));
    };
    outer.validate()?;
    inner.validate()?;
    let n = *n;
    if n != *n2 {
        return Err(Error::DimensionMismatch {
            expected: n,
            found: *n2,
        });
    }
    let coef = |s: &[f64], k: usize| s.get(k).copied().unwrap_or(0.0);
    let product: Vec<f64> = (0..n)
        .map(|k| (0..=k).map(|j| coef(a, j) * coef(a2, k - j)).sum())
        .collect();
    let top = product[n - 1];
    let a_new = product[..n - 1].to_vec();

    // C_new(y) = a_0 C'(y) + C(a'_0 y + v'_n) + top * y.
    let shifted = c.affine_reparam(1.0, a2[0], v2[n - 1], top)?;
    let scaled = c2.affine_reparam(a[0], 1.0, 0.0, 0.0)?;
    let c_new = shifted.add(&scaled);

    let mut v_new = poly_apply(a, v2);
    for (x, y) in v_new.iter_mut().zip(v) {
        *x += y;
    }
    Ok(QSMapSpec::JordanFamily {
        n,
        a: a_new,
        v: v_new,
        c: c_new,
    })
}
