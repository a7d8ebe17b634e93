//! Dense real linear algebra: the generator matrix type, the matrix
//! exponential, and the small set of norms and ranks the rest of the crate
//! leans on.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default bound on `|t| * ||A||` accepted by [`mat_exp`].
pub const DEFAULT_EXP_GUARD: f64 = 50.0;

/// Default relative threshold for [`numerical_rank`].
pub const DEFAULT_RANK_TOL: f64 = 1e-9;

/// A validated real square matrix with finite entries.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RowsRepr", into = "RowsRepr")]
pub struct Matrix {
    inner: DMatrix<f64>,
}

#[derive(Serialize, Deserialize)]
struct RowsRepr {
    rows: Vec<Vec<f64>>,
}

impl TryFrom<RowsRepr> for Matrix {
    type Error = Error;

    fn try_from(repr: RowsRepr) -> Result<Self> {
        Matrix::from_rows(&repr.rows)
    }
}

impl From<Matrix> for RowsRepr {
    fn from(m: Matrix) -> Self {
        RowsRepr { rows: m.rows() }
    }
}

impl Matrix {
    /// Builds an `n x n` matrix from row-major entries.
    pub fn new(n: usize, entries: Vec<f64>) -> Result<Self> {
        if n == 0 {
            return Err(Error::invalid("matrix dimension must be at least 1"));
        }
        if entries.len() != n * n {
            return Err(Error::DimensionMismatch {
                expected: n * n,
                found: entries.len(),
            });
        }
        Self::from_dmatrix(DMatrix::from_row_slice(n, n, &entries))
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        if n == 0 {
            return Err(Error::Parse("matrix has no rows".into()));
        }
        for (i, row) in rows.iter().enumerate() {
            if row.len() != n {
                return Err(Error::Parse(format!(
                    "row {} has {} entries, expected {} (matrix must be square)",
                    i + 1,
                    row.len(),
                    n
                )));
            }
        }
        let entries: Vec<f64> = rows.iter().flatten().copied().collect();
        Self::from_dmatrix(DMatrix::from_row_slice(n, n, &entries))
    }

    pub fn from_dmatrix(inner: DMatrix<f64>) -> Result<Self> {
        if inner.nrows() == 0 || inner.nrows() != inner.ncols() {
            return Err(Error::invalid(format!(
                "matrix must be square and non-empty, got {}x{}",
                inner.nrows(),
                inner.ncols()
            )));
        }
        for i in 0..inner.nrows() {
            for j in 0..inner.ncols() {
                if !inner[(i, j)].is_finite() {
                    return Err(Error::NonFinite { row: i + 1, col: j + 1 });
                }
            }
        }
        Ok(Matrix { inner })
    }

    /// Parses the `{"rows": [[...], ...]}` document. Errors name the
    /// offending row and column (1-based).
    pub fn from_json_str(text: &str) -> Result<Self> {
        let value: serde_json::Value =
            serde_json::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        let rows = value
            .get("rows")
            .and_then(|r| r.as_array())
            .ok_or_else(|| Error::Parse("expected an object with a \"rows\" array".into()))?;
        let mut parsed = Vec::with_capacity(rows.len());
        for (i, row) in rows.iter().enumerate() {
            let row = row
                .as_array()
                .ok_or_else(|| Error::Parse(format!("row {} is not an array", i + 1)))?;
            let mut out = Vec::with_capacity(row.len());
            for (j, entry) in row.iter().enumerate() {
                let x = entry.as_f64().ok_or_else(|| {
                    Error::Parse(format!("row {}, column {}: expected a number", i + 1, j + 1))
                })?;
                out.push(x);
            }
            parsed.push(out);
        }
        Self::from_rows(&parsed)
    }

    pub fn to_json_string(&self) -> String {
        serde_json::to_string(self).expect("matrix serializes")
    }

    pub fn identity(n: usize) -> Self {
        Matrix {
            inner: DMatrix::identity(n, n),
        }
    }

    pub fn diag(values: &[f64]) -> Result<Self> {
        Self::from_dmatrix(DMatrix::from_diagonal(&DVector::from_column_slice(values)))
    }

    /// The nilpotent shift `N`: ones on the superdiagonal.
    pub fn nilpotent_shift(n: usize) -> Self {
        let mut m = DMatrix::zeros(n, n);
        for i in 0..n.saturating_sub(1) {
            m[(i, i + 1)] = 1.0;
        }
        Matrix { inner: m }
    }

    /// `lambda * I_n + N`.
    pub fn jordan_block(lambda: f64, n: usize) -> Self {
        let mut m = Self::nilpotent_shift(n).inner;
        for i in 0..n {
            m[(i, i)] = lambda;
        }
        Matrix { inner: m }
    }

    pub fn block_diag(blocks: &[Matrix]) -> Self {
        let n: usize = blocks.iter().map(Matrix::dim).sum();
        let mut m = DMatrix::zeros(n, n);
        let mut off = 0;
        for b in blocks {
            let k = b.dim();
            m.view_mut((off, off), (k, k)).copy_from(&b.inner);
            off += k;
        }
        Matrix { inner: m }
    }

    pub fn dim(&self) -> usize {
        self.inner.nrows()
    }

    pub fn as_dmatrix(&self) -> &DMatrix<f64> {
        &self.inner
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.inner[(i, j)]
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        (0..self.dim())
            .map(|i| self.inner.row(i).iter().copied().collect())
            .collect()
    }

    pub fn scale(&self, s: f64) -> Matrix {
        Matrix {
            inner: &self.inner * s,
        }
    }

    pub fn mul(&self, other: &Matrix) -> Matrix {
        Matrix {
            inner: &self.inner * &other.inner,
        }
    }

    pub fn apply(&self, v: &[f64]) -> Vec<f64> {
        let out = &self.inner * DVector::from_column_slice(v);
        out.iter().copied().collect()
    }

    pub fn inverse(&self) -> Result<Matrix> {
        self.inner
            .clone()
            .try_inverse()
            .filter(|m| m.iter().all(|x| x.is_finite()))
            .map(|inner| Matrix { inner })
            .ok_or(Error::Singular)
    }

    pub fn trace(&self) -> f64 {
        self.inner.trace()
    }

    /// Operator 2-norm.
    pub fn op_norm(&self) -> f64 {
        op_norm(&self.inner)
    }
}

pub(crate) fn op_norm(m: &DMatrix<f64>) -> f64 {
    m.clone().singular_values().max()
}

fn one_norm(m: &DMatrix<f64>) -> f64 {
    m.column_iter()
        .map(|c| c.iter().map(|x| x.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// `e^{tA}`, rejecting arguments with `|t| * ||A|| > DEFAULT_EXP_GUARD`.
pub fn mat_exp(a: &Matrix, t: f64) -> Result<Matrix> {
    mat_exp_guarded(a, t, DEFAULT_EXP_GUARD)
}

pub fn mat_exp_guarded(a: &Matrix, t: f64, guard: f64) -> Result<Matrix> {
    if !t.is_finite() {
        return Err(Error::invalid("exponential time parameter must be finite"));
    }
    let value = t.abs() * a.op_norm();
    if value > guard {
        return Err(Error::ExpRange { value, guard });
    }
    let out = expm(&(&a.inner * t));
    Matrix::from_dmatrix(out).map_err(|_| Error::ExpRange { value, guard })
}

// Pade(13,13) numerator coefficients.
const PADE13: [f64; 14] = [
    64764752532480000.0,
    32382376266240000.0,
    7771770303897600.0,
    1187353796428800.0,
    129060195264000.0,
    10559470521600.0,
    670442572800.0,
    33522128640.0,
    1323241920.0,
    40840800.0,
    960960.0,
    16380.0,
    182.0,
    1.0,
];

const THETA13: f64 = 5.371920351148152;

/// Unguarded scaling-and-squaring exponential with a degree 13 Pade
/// approximant. The caller is responsible for overflow.
pub(crate) fn expm(a: &DMatrix<f64>) -> DMatrix<f64> {
    let n = a.nrows();
    if n == 1 {
        return DMatrix::from_element(1, 1, a[(0, 0)].exp());
    }
    let norm = one_norm(a);
    let squarings = if norm > THETA13 {
        (norm / THETA13).log2().ceil().max(0.0) as i32
    } else {
        0
    };
    let scaled = a * 2f64.powi(-squarings);

    let b = &PADE13;
    let ident = DMatrix::<f64>::identity(n, n);
    let a2 = &scaled * &scaled;
    let a4 = &a2 * &a2;
    let a6 = &a4 * &a2;
    let inner_u = &a6 * (&a6 * b[13] + &a4 * b[11] + &a2 * b[9]);
    let u = &scaled * (inner_u + &a6 * b[7] + &a4 * b[5] + &a2 * b[3] + &ident * b[1]);
    let inner_v = &a6 * (&a6 * b[12] + &a4 * b[10] + &a2 * b[8]);
    let v = inner_v + &a6 * b[6] + &a4 * b[4] + &a2 * b[2] + &ident * b[0];

    let numer = &v + &u;
    let denom = &v - &u;
    let mut r = denom
        .lu()
        .solve(&numer)
        .unwrap_or_else(|| DMatrix::from_element(n, n, f64::NAN));
    for _ in 0..squarings {
        r = &r * &r;
    }
    r
}

/// `e^{sA} v` by a Taylor series on the vector, split into substeps with
/// `|h| * ||A||_1 <= 0.5`.
pub fn exp_action(a: &DMatrix<f64>, s: f64, v: &DVector<f64>) -> DVector<f64> {
    let norm = one_norm(a);
    let substeps = ((s.abs() * norm) / 0.5).ceil().max(1.0) as usize;
    let h = s / substeps as f64;
    let mut acc = v.clone();
    for _ in 0..substeps {
        let mut term = acc.clone();
        let mut sum = acc.clone();
        for k in 1..=60 {
            term = (a * &term) * (h / k as f64);
            sum += &term;
            if term.amax() <= 1e-18 * sum.amax() {
                break;
            }
        }
        acc = sum;
    }
    acc
}

/// Closed form of `e^{tN}`: entry `(i, j)` is `t^(j-i) / (j-i)!` above the
/// diagonal. Each power is built by the same recurrence, so the result is
/// bitwise reproducible.
pub fn nilpotent_exp(n: usize, t: f64) -> Result<Matrix> {
    if n == 0 {
        return Err(Error::invalid("dimension must be at least 1"));
    }
    if !t.is_finite() {
        return Err(Error::invalid("t must be finite"));
    }
    let coeffs = taylor_coefficients(n, t);
    let mut m = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in i..n {
            m[(i, j)] = coeffs[j - i];
        }
    }
    Ok(Matrix { inner: m })
}

/// `[1, t, t^2/2!, ..., t^(n-1)/(n-1)!]`.
pub(crate) fn taylor_coefficients(n: usize, t: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(n);
    let mut term = 1.0;
    for k in 0..n {
        if k > 0 {
            term = term * t / k as f64;
        }
        out.push(term);
    }
    out
}

/// Sum of squared entries.
pub fn frob_sq(m: &Matrix) -> f64 {
    m.inner.iter().map(|x| x * x).sum()
}

/// Number of singular values above `tol` times the largest one.
pub fn numerical_rank(m: &Matrix, tol: f64) -> usize {
    let sv = m.inner.clone().singular_values();
    let largest = sv.max();
    if largest == 0.0 {
        return 0;
    }
    sv.iter().filter(|&&s| s > tol * largest).count()
}
