//! Q-variation of linear test functions over packings of a box by the
//! images `e^{tA}(z + [0,1)^n)` of integer unit cubes.
//!
//! A cell `z` belongs to the packing when its half-open cube meets the
//! closed preimage `e^{-tA}(box)`. Both are parallelotopes, so the test is
//! exact: they meet iff the center difference lies in the zonotope spanned
//! by all `2n` edge vectors, which is checked against every facet normal.

use std::fmt;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{mat_exp, Matrix};
use crate::spectral::{real_part_jordan_form, DEFAULT_CLUSTER_TOL};

pub const DEFAULT_MAX_CELLS: usize = 10_000_000;

/// Overrides [`DEFAULT_MAX_CELLS`] when set.
pub const MAX_CELLS_ENV: &str = "HEINTZE_MAX_CELLS";

/// Cells are `[z, z + 1 - CELL_EPS]^n`, standing in for `[z, z + 1)^n`.
const CELL_EPS: f64 = 1e-9;

/// The cap from `HEINTZE_MAX_CELLS`, or the default.
pub fn max_cells_from_env() -> Result<usize> {
    match std::env::var(MAX_CELLS_ENV) {
        Ok(s) => s
            .trim()
            .parse::<usize>()
            .ok()
            .filter(|&c| c > 0)
            .ok_or_else(|| Error::invalid(format!("{MAX_CELLS_ENV} must be a positive integer, got {s:?}"))),
        Err(_) => Ok(DEFAULT_MAX_CELLS),
    }
}

/// Closed axis-aligned box.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoxSpec {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl BoxSpec {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>) -> Result<Self> {
        if lo.len() != hi.len() || lo.is_empty() {
            return Err(Error::invalid("box corners must have the same positive dimension"));
        }
        if lo.iter().chain(&hi).any(|x| !x.is_finite()) {
            return Err(Error::invalid("box corners must be finite"));
        }
        if lo.iter().zip(&hi).any(|(a, b)| !(a < b)) {
            return Err(Error::invalid("box is degenerate: need lo < hi on every axis"));
        }
        Ok(BoxSpec { lo, hi })
    }

    /// Unit cube `[0, 1]^n`.
    pub fn unit(n: usize) -> Self {
        BoxSpec {
            lo: vec![0.0; n],
            hi: vec![1.0; n],
        }
    }

    /// Parses `"lo1,hi1;lo2,hi2;..."`.
    pub fn parse(text: &str) -> Result<Self> {
        let mut lo = Vec::new();
        let mut hi = Vec::new();
        for (i, part) in text.split(';').enumerate() {
            let ends: Vec<&str> = part.split(',').map(str::trim).collect();
            let bad = || Error::invalid(format!("box interval {} must be \"lo,hi\", got {part:?}", i + 1));
            if ends.len() != 2 {
                return Err(bad());
            }
            lo.push(ends[0].parse::<f64>().map_err(|_| bad())?);
            hi.push(ends[1].parse::<f64>().map_err(|_| bad())?);
        }
        BoxSpec::new(lo, hi)
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn volume(&self) -> f64 {
        self.lo.iter().zip(&self.hi).map(|(a, b)| b - a).product()
    }

    pub fn contains_box(&self, other: &BoxSpec) -> bool {
        self.lo.iter().zip(&other.lo).all(|(a, b)| a <= b)
            && self.hi.iter().zip(&other.hi).all(|(a, b)| a >= b)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PackingSpec {
    pub matrix: Matrix,
    pub t: f64,
    #[serde(rename = "box")]
    pub bx: BoxSpec,
    pub max_cells: usize,
}

impl PackingSpec {
    pub fn new(matrix: Matrix, t: f64, bx: BoxSpec) -> Self {
        PackingSpec {
            matrix,
            t,
            bx,
            max_cells: DEFAULT_MAX_CELLS,
        }
    }

    pub fn with_max_cells(mut self, max_cells: usize) -> Self {
        self.max_cells = max_cells;
        self
    }

    /// `e^{-t trace(A)} Vol(box)`, the expected number of cells.
    pub fn estimated_cells(&self) -> f64 {
        (-self.t * self.matrix.trace()).exp() * self.bx.volume()
    }
}

/// A linear test function `u(x) = l . x`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TestFunction {
    Linear(Vec<f64>),
    /// 0-based coordinate index.
    Coordinate(usize),
}

impl TestFunction {
    pub fn coefficients(&self, n: usize) -> Result<Vec<f64>> {
        match self {
            TestFunction::Coordinate(i) => {
                if *i >= n {
                    return Err(Error::invalid(format!(
                        "coordinate index {} out of range for dimension {n}",
                        i + 1
                    )));
                }
                let mut l = vec![0.0; n];
                l[*i] = 1.0;
                Ok(l)
            }
            TestFunction::Linear(l) => {
                if l.len() != n {
                    return Err(Error::DimensionMismatch {
                        expected: n,
                        found: l.len(),
                    });
                }
                if l.iter().any(|x| !x.is_finite()) || l.iter().all(|x| *x == 0.0) {
                    return Err(Error::invalid("test functional must be finite and nonzero"));
                }
                Ok(l.clone())
            }
        }
    }
}

/// Parallelotope geometry of one packing: the preimage of the box and the
/// facet normals of the difference zonotope.
struct Packing {
    n: usize,
    center: DVector<f64>,
    normals: Vec<(DVector<f64>, f64)>,
    ranges: Vec<(i64, i64)>,
}

impl Packing {
    fn new(spec: &PackingSpec) -> Result<Self> {
        let n = spec.matrix.dim();
        if spec.bx.dim() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                found: spec.bx.dim(),
            });
        }
        if !spec.t.is_finite() {
            return Err(Error::invalid("t must be finite"));
        }
        let estimate = spec.estimated_cells();
        if !(estimate <= spec.max_cells as f64) {
            return Err(Error::CapExceeded {
                estimate,
                cap: spec.max_cells,
            });
        }
        let back = mat_exp(&spec.matrix, -spec.t)?;
        let back = back.as_dmatrix();
        let lo = DVector::from_column_slice(&spec.bx.lo);
        let widths = DVector::from_iterator(n, spec.bx.lo.iter().zip(&spec.bx.hi).map(|(a, b)| b - a));
        let origin = back * &lo;
        let edges = back * DMatrix::from_diagonal(&widths);
        let center = &origin + &edges * DVector::from_element(n, 0.5);

        let side = 1.0 - CELL_EPS;
        let mut generators = edges.clone();
        generators = generators.insert_columns(n, n, 0.0);
        for i in 0..n {
            generators[(i, n + i)] = side;
        }
        let normals = facet_normals(&generators)
            .into_iter()
            .map(|nu| {
                let support = generators.column_iter().map(|g| nu.dot(&g).abs()).sum::<f64>() / 2.0;
                (nu, support)
            })
            .collect();

        let mut ranges = Vec::with_capacity(n);
        for i in 0..n {
            let row = edges.row(i);
            let neg: f64 = row.iter().filter(|x| **x < 0.0).sum();
            let pos: f64 = row.iter().filter(|x| **x > 0.0).sum();
            let (m, big) = (origin[i] + neg, origin[i] + pos);
            ranges.push((m.floor() as i64, big.floor() as i64));
        }
        Ok(Packing {
            n,
            center,
            normals,
            ranges,
        })
    }

    fn meets(&self, z: &[i64]) -> bool {
        let half = 0.5 * (1.0 - CELL_EPS);
        let diff = DVector::from_iterator(self.n, z.iter().enumerate().map(|(i, &zi)| zi as f64 + half - self.center[i]));
        self.normals.iter().all(|(nu, support)| {
            let slack = 1e-12 * (1.0 + support);
            nu.dot(&diff).abs() <= support + slack
        })
    }

    /// Visits candidate cells of the bounding box in lexicographic order.
    fn for_each_cell(&self, mut visit: impl FnMut(&[i64])) {
        let n = self.n;
        let mut z: Vec<i64> = self.ranges.iter().map(|r| r.0).collect();
        if self.ranges.iter().any(|r| r.0 > r.1) {
            return;
        }
        loop {
            if self.meets(&z) {
                visit(&z);
            }
            let mut axis = n;
            loop {
                if axis == 0 {
                    return;
                }
                axis -= 1;
                if z[axis] < self.ranges[axis].1 {
                    z[axis] += 1;
                    for (zl, range) in z.iter_mut().zip(&self.ranges).skip(axis + 1) {
                        *zl = range.0;
                    }
                    break;
                }
            }
        }
    }
}

/// Unit normals of the hyperplanes spanned by `(n-1)`-subsets of the
/// generator columns; degenerate subsets and duplicates are dropped.
fn facet_normals(generators: &DMatrix<f64>) -> Vec<DVector<f64>> {
    let n = generators.nrows();
    let m = generators.ncols();
    if n == 1 {
        return vec![DVector::from_element(1, 1.0)];
    }
    let mut out: Vec<DVector<f64>> = Vec::new();
    let mut subset: Vec<usize> = (0..n - 1).collect();
    loop {
        let cols = generators.select_columns(&subset);
        let nu = generalized_cross(&cols);
        let norm = nu.norm();
        let scale = cols.column_iter().map(|c| c.norm()).product::<f64>();
        if norm > 1e-12 * scale.max(f64::MIN_POSITIVE) {
            let nu = nu / norm;
            if !out.iter().any(|o| (o.dot(&nu).abs() - 1.0).abs() < 1e-12) {
                out.push(nu);
            }
        }
        // Next (n-1)-subset of 0..m.
        let k = n - 1;
        let mut i = k;
        loop {
            if i == 0 {
                return out;
            }
            i -= 1;
            if subset[i] < m - k + i {
                subset[i] += 1;
                for j in i + 1..k {
                    subset[j] = subset[j - 1] + 1;
                }
                break;
            }
        }
    }
}

/// Vector orthogonal to the `n-1` columns of `cols`, by cofactor expansion.
fn generalized_cross(cols: &DMatrix<f64>) -> DVector<f64> {
    let n = cols.nrows();
    DVector::from_iterator(
        n,
        (0..n).map(|i| {
            let minor = cols.clone().remove_row(i);
            let sign = if i % 2 == 0 { 1.0 } else { -1.0 };
            sign * minor.determinant()
        }),
    )
}

/// Lattice points `z` whose cell meets `e^{-tA}(box)`, lexicographically.
pub fn enumerate_packing(spec: &PackingSpec) -> Result<Vec<Vec<i64>>> {
    let packing = Packing::new(spec)?;
    let mut cells = Vec::new();
    packing.for_each_cell(|z| cells.push(z.to_vec()));
    Ok(cells)
}

/// Number of cells in [`enumerate_packing`] without materializing them.
pub fn count_packing(spec: &PackingSpec) -> Result<u64> {
    let packing = Packing::new(spec)?;
    let mut count = 0u64;
    packing.for_each_cell(|_| count += 1);
    Ok(count)
}

/// `osc(u|e^{tA}(z + cube)) = sum_i |(l^T e^{tA})_i|`, the same for every cell.
pub fn oscillation(a: &Matrix, t: f64, u: &TestFunction) -> Result<f64> {
    let l = DVector::from_vec(u.coefficients(a.dim())?);
    let e = mat_exp(a, t)?;
    let row = l.transpose() * e.as_dmatrix();
    Ok(row.iter().map(|x| x.abs()).sum())
}

/// `V_Q = sum over cells of osc^Q`.
pub fn variation_sum(spec: &PackingSpec, u: &TestFunction, q: f64) -> Result<f64> {
    check_q(q)?;
    let cells = count_packing(spec)?;
    let osc = oscillation(&spec.matrix, spec.t, u)?;
    Ok(cells as f64 * osc.powf(q))
}

fn check_q(q: f64) -> Result<()> {
    if !(q >= 1.0 && q.is_finite()) {
        return Err(Error::invalid(format!("Q must be a finite real >= 1, got {q}")));
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Classification {
    Diverging,
    Critical,
    Vanishing,
}

impl Classification {
    pub fn from_slope(slope: f64) -> Self {
        if slope < -0.1 {
            Classification::Diverging
        } else if slope > 0.1 {
            Classification::Vanishing
        } else {
            Classification::Critical
        }
    }
}

impl fmt::Display for Classification {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Classification::Diverging => "diverging",
            Classification::Critical => "critical",
            Classification::Vanishing => "vanishing",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VariationRow {
    pub t: f64,
    pub q: f64,
    pub cells: u64,
    pub v: f64,
    pub log_v: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExponentFit {
    pub q: f64,
    pub slope: f64,
    /// `Q lambda_k - sum_i d_i lambda_i`.
    pub predicted: f64,
    /// RMS residual of the regression of `ln V` on `t`.
    pub residual: f64,
    /// Exponent of the `|t|^{(1-n)Q}` factor left out of the regression.
    pub poly_exponent: f64,
    pub classification: Classification,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VariationReport {
    pub rows: Vec<VariationRow>,
    pub fits: Vec<ExponentFit>,
}

/// Runs the packing at every `t` and fits `ln V_Q` against `t` for each `Q`.
pub fn fit_exponents(
    a: &Matrix,
    u: &TestFunction,
    bx: &BoxSpec,
    t_grid: &[f64],
    qs: &[f64],
    max_cells: usize,
) -> Result<VariationReport> {
    if t_grid.len() < 3 {
        return Err(Error::invalid(format!(
            "need at least 3 t values to fit exponents, got {}",
            t_grid.len()
        )));
    }
    if t_grid.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(Error::invalid("t grid must be strictly increasing"));
    }
    if t_grid.iter().any(|t| !(*t < -1.0)) {
        return Err(Error::invalid("t grid values must all be below -1"));
    }
    if qs.is_empty() {
        return Err(Error::invalid("need at least one Q"));
    }
    for &q in qs {
        check_q(q)?;
    }
    u.coefficients(a.dim())?;
    let form = real_part_jordan_form(a, DEFAULT_CLUSTER_TOL)?;

    let per_t: Result<Vec<(u64, f64)>> = t_grid
        .par_iter()
        .map(|&t| {
            let spec = PackingSpec::new(a.clone(), t, bx.clone()).with_max_cells(max_cells);
            Ok((count_packing(&spec)?, oscillation(a, t, u)?))
        })
        .collect();
    let per_t = per_t?;

    let mut rows = Vec::with_capacity(t_grid.len() * qs.len());
    for (&t, &(cells, osc)) in t_grid.iter().zip(&per_t) {
        for &q in qs {
            let v = cells as f64 * osc.powf(q);
            rows.push(VariationRow {
                t,
                q,
                cells,
                v,
                log_v: v.ln(),
            });
        }
    }

    let n = a.dim() as f64;
    let fits = qs
        .iter()
        .map(|&q| {
            let points: Vec<(f64, f64)> = rows
                .iter()
                .filter(|r| r.q == q && r.log_v.is_finite())
                .map(|r| (r.t, r.log_v))
                .collect();
            if points.len() < 3 {
                return Err(Error::invalid(format!(
                    "fewer than 3 usable grid points for Q = {q}"
                )));
            }
            let (slope, residual) = least_squares(&points);
            Ok(ExponentFit {
                q,
                slope,
                predicted: q * form.lambda_max() - form.weighted_trace(),
                residual,
                poly_exponent: (1.0 - n) * q,
                classification: Classification::from_slope(slope),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(VariationReport { rows, fits })
}

/// Slope and RMS residual of the least-squares line through `points`.
fn least_squares(points: &[(f64, f64)]) -> (f64, f64) {
    let m = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / m;
    let my = points.iter().map(|p| p.1).sum::<f64>() / m;
    let sxx: f64 = points.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let slope = sxy / sxx;
    let rss: f64 = points
        .iter()
        .map(|p| (p.1 - my - slope * (p.0 - mx)).powi(2))
        .sum();
    (slope, (rss / m).sqrt())
}
