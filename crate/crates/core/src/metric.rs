//! The parabolic visual quasimetric `D_A` on `R^n`.
//!
//! `D_A(x, y) = e^{t*}` where `t*` is the smallest zero of
//! `g(t) = ln |e^{-tA}(y - x)|`. Because `A` has eigenvalues with positive
//! real parts, `g` is positive far to the left and tends to `-inf` on the
//! right, but it need not be monotone when `A` has Jordan blocks, so the
//! first crossing has to be located carefully:
//!
//! 1. a left endpoint is certified from the growth bound
//!    `|e^{-tA} v| >= |v| e^{-t lambda_min} / (C_A (1 + |t|)^(m - 1))`
//!    for `t <= 0`, with `C_A` sampled once per space;
//! 2. the scan moves right. While `g > scan_step * ||A||` it jumps by
//!    `g / ||A||`, which cannot skip a zero since `|g'| <= ||A||`; closer to
//!    the axis it takes `scan_step` strides and watches both for a sign
//!    change and for `g'` turning from negative to positive (a dip that may
//!    reach below zero between two samples);
//! 3. the bracket is bisected down to `t_tol`.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, exp_action, Matrix};
use crate::sampling;
use crate::spectral::{self, RealPartJordanForm, DEFAULT_CLUSTER_TOL};

/// Safety factor applied to the sampled growth constant `C_A`.
pub const GROWTH_SAFETY: f64 = 2.0;

const GROWTH_SAMPLES: usize = 5000;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub scan_step: f64,
    pub t_tol: f64,
    pub bracket_margin: f64,
    /// Hard cap on scan iterations before giving up.
    pub max_scan_steps: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            scan_step: 1e-2,
            t_tol: 1e-12,
            bracket_margin: 5.0,
            max_scan_steps: 1_000_000,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [self.scan_step, self.t_tol, self.bracket_margin]
            .iter()
            .all(|x| x.is_finite() && *x > 0.0);
        if !positive || self.max_scan_steps == 0 {
            return Err(Error::invalid("solver parameters must be positive"));
        }
        if self.t_tol >= self.scan_step {
            return Err(Error::invalid("t_tol must be smaller than scan_step"));
        }
        Ok(())
    }
}

/// `R^n` with the quasimetric `D_A`, plus the spectral data the solver needs.
#[derive(Clone, Debug)]
pub struct BoundarySpace {
    matrix: Matrix,
    form: RealPartJordanForm,
    lambda_min: f64,
    lambda_max: f64,
    max_block: usize,
    solver: SolverConfig,
    growth_const: f64,
    deriv_bound: f64,
    one_norm: f64,
}

impl BoundarySpace {
    pub fn new(matrix: Matrix) -> Result<Self> {
        Self::with_config(matrix, SolverConfig::default())
    }

    pub fn with_config(matrix: Matrix, solver: SolverConfig) -> Result<Self> {
        solver.validate()?;
        let form = spectral::real_part_jordan_form(&matrix, DEFAULT_CLUSTER_TOL)?;
        let lambda_min = form.lambda_min();
        let lambda_max = form.lambda_max();
        let max_block = form.max_block();
        let growth_const = growth_constant(&matrix, lambda_min, max_block, solver.bracket_margin);
        let deriv_bound = 1.01 * matrix.op_norm();
        let one_norm = matrix
            .as_dmatrix()
            .column_iter()
            .map(|c| c.iter().map(|x| x.abs()).sum::<f64>())
            .fold(0.0, f64::max);
        Ok(BoundarySpace {
            matrix,
            form,
            lambda_min,
            lambda_max,
            max_block,
            solver,
            growth_const,
            deriv_bound,
            one_norm,
        })
    }

    pub fn matrix(&self) -> &Matrix {
        &self.matrix
    }

    pub fn form(&self) -> &RealPartJordanForm {
        &self.form
    }

    pub fn dim(&self) -> usize {
        self.matrix.dim()
    }

    pub fn lambda_min(&self) -> f64 {
        self.lambda_min
    }

    pub fn lambda_max(&self) -> f64 {
        self.lambda_max
    }

    pub fn max_block(&self) -> usize {
        self.max_block
    }

    pub fn solver(&self) -> &SolverConfig {
        &self.solver
    }

    /// The sampled constant `C_A` (safety factor included).
    pub fn growth_constant(&self) -> f64 {
        self.growth_const
    }

    /// `D_A(x, y)`; zero when the points coincide.
    pub fn dist(&self, x: &[f64], y: &[f64]) -> Result<f64> {
        Ok(self.log_dist(x, y)?.exp())
    }

    /// `ln D_A(x, y)`, i.e. the smallest zero `t*`; `-inf` when `x == y`.
    pub fn log_dist(&self, x: &[f64], y: &[f64]) -> Result<f64> {
        let n = self.dim();
        for p in [x, y] {
            if p.len() != n {
                return Err(Error::DimensionMismatch {
                    expected: n,
                    found: p.len(),
                });
            }
        }
        let v = DVector::from_iterator(n, y.iter().zip(x).map(|(b, a)| b - a));
        self.smallest_zero(&v)
    }

    /// Smallest zero of `ln |e^{-tA} v|`.
    pub fn smallest_zero(&self, v: &DVector<f64>) -> Result<f64> {
        if v.iter().any(|c| !c.is_finite()) {
            return Err(Error::invalid("boundary points must be finite"));
        }
        let vnorm = v.norm();
        if vnorm == 0.0 {
            return Ok(f64::NEG_INFINITY);
        }
        let a = self.matrix.as_dmatrix();
        let cfg = &self.solver;

        let mut t = self.left_endpoint(vnorm);
        let mut w = self.propagate_from(v, t);
        let mut g = log_norm(&w);
        let mut retreats = 0;
        while !(g > 0.0) {
            // C_A was underestimated; back off until g is positive again.
            retreats += 1;
            if retreats > 200 {
                return Err(Error::Solver {
                    reason: "could not find a left endpoint with g > 0",
                    t,
                    g,
                    steps: 0,
                });
            }
            t -= 1.0 + t.abs();
            w = self.propagate_from(v, t);
            g = log_norm(&w);
        }
        let mut gp = slope(a, &w);

        for steps in 0..cfg.max_scan_steps {
            let certified = g / self.deriv_bound;
            let h = certified.max(cfg.scan_step);
            let w_next = self.advance(&w, h);
            let g_next = log_norm(&w_next);
            if !g_next.is_finite() && g_next != f64::NEG_INFINITY {
                return Err(Error::Solver {
                    reason: "non-finite value during scan",
                    t: t + h,
                    g: g_next,
                    steps,
                });
            }
            if g_next <= 0.0 {
                return Ok(self.bisect(t, &w, h));
            }
            let gp_next = slope(a, &w_next);
            if certified < cfg.scan_step && gp < 0.0 && gp_next > 0.0 {
                if let Some(s) = self.dip_below_zero(&w, h) {
                    return Ok(self.bisect(t, &w, s));
                }
            }
            t += h;
            w = w_next;
            g = g_next;
            gp = gp_next;
        }
        Err(Error::Solver {
            reason: "scan exhausted the step cap without a sign change",
            t,
            g,
            steps: cfg.max_scan_steps,
        })
    }

    /// Largest `t <= 0` such that the growth bound certifies `g > 0` on
    /// `(-inf, t]`.
    fn left_endpoint(&self, vnorm: f64) -> f64 {
        let lam = self.lambda_min;
        let m1 = (self.max_block - 1) as f64;
        let lc = self.growth_const.ln();
        let lv = vnorm.ln();
        let h = |tau: f64| lv + tau * lam - lc - m1 * (1.0 + tau).ln();
        // h is increasing beyond this point.
        let floor = (m1 / lam - 1.0).max(0.0);
        if h(floor) > 0.0 {
            return -floor;
        }
        let mut lo = floor;
        let mut hi = floor.max(1.0);
        while h(hi) <= 0.0 {
            lo = hi;
            hi *= 2.0;
        }
        for _ in 0..80 {
            let mid = 0.5 * (lo + hi);
            if h(mid) > 0.0 {
                hi = mid;
            } else {
                lo = mid;
            }
            if hi - lo < 1e-6 {
                break;
            }
        }
        -hi
    }

    /// `e^{-tA} v` computed from scratch.
    fn propagate_from(&self, v: &DVector<f64>, t: f64) -> DVector<f64> {
        linalg::expm(&(self.matrix.as_dmatrix() * (-t))) * v
    }

    /// `e^{-hA} w` for `h >= 0`.
    fn advance(&self, w: &DVector<f64>, h: f64) -> DVector<f64> {
        let a = self.matrix.as_dmatrix();
        if h * self.one_norm <= 2.0 {
            exp_action(a, -h, w)
        } else {
            linalg::expm(&(a * (-h))) * w
        }
    }

    /// `w0` is the state at the stride's left end, where `g' < 0`; `g' > 0`
    /// at offset `h`. Locates the local minimum and returns its offset if
    /// `g` reaches zero there.
    fn dip_below_zero(&self, w0: &DVector<f64>, h: f64) -> Option<f64> {
        let a = self.matrix.as_dmatrix();
        let (mut lo, mut hi) = (0.0, h);
        for _ in 0..100 {
            let mid = 0.5 * (lo + hi);
            if slope(a, &self.advance(w0, mid)) < 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
            if hi - lo <= self.solver.t_tol {
                break;
            }
        }
        let s = 0.5 * (lo + hi);
        (log_norm(&self.advance(w0, s)) <= 0.0).then_some(s)
    }

    /// Bisection on `[t, t + h]` with `g(t) > 0 >= g(t + h)`.
    fn bisect(&self, t: f64, w0: &DVector<f64>, h: f64) -> f64 {
        let (mut lo, mut hi) = (0.0, h);
        while hi - lo > self.solver.t_tol {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if log_norm(&self.advance(w0, mid)) > 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        // Newton polish to full precision, kept inside the bracket.
        let a = self.matrix.as_dmatrix();
        let mut s = 0.5 * (lo + hi);
        for _ in 0..3 {
            let w = self.advance(w0, s);
            let g = log_norm(&w);
            let gp = slope(a, &w);
            if g == 0.0 || gp >= 0.0 {
                break;
            }
            let next = s - g / gp;
            if !(next >= lo && next <= hi) || next == s {
                break;
            }
            s = next;
        }
        t + s
    }
}

fn log_norm(w: &DVector<f64>) -> f64 {
    w.norm().ln()
}

/// `g'(t) = -(w . Aw) / |w|^2` with `w = e^{-tA} v`.
fn slope(a: &DMatrix<f64>, w: &DVector<f64>) -> f64 {
    -w.dot(&(a * w)) / w.norm_squared()
}

/// `C_A = GROWTH_SAFETY * max ||e^{-tau (A - lambda_min I)}||_F (1 + tau)^(1 - m)`
/// over a dense grid of `tau in [0, 50 * margin]`.
fn growth_constant(a: &Matrix, lambda_min: f64, max_block: usize, margin: f64) -> f64 {
    let n = a.dim();
    let shifted = a.as_dmatrix() - DMatrix::<f64>::identity(n, n) * lambda_min;
    let tau_max = 50.0 * margin;
    let delta = tau_max / GROWTH_SAMPLES as f64;
    let step = linalg::expm(&(&shifted * (-delta)));
    let mut power = DMatrix::<f64>::identity(n, n);
    let mut best = power.norm();
    let m1 = 1.0 - max_block as f64;
    for k in 1..=GROWTH_SAMPLES {
        power = &power * &step;
        let tau = k as f64 * delta;
        best = best.max(power.norm() * (1.0 + tau).powf(m1));
    }
    GROWTH_SAFETY * best
}

/// Empirical lower bound for the quasimetric constant `M`: the largest
/// `D(x,z) / (D(x,y) + D(y,z))` over uniformly sampled triples, and never
/// below 1, the limit as `y -> x`.
pub fn quasimetric_constant(
    space: &BoundarySpace,
    samples: usize,
    seed: u64,
    box_radius: f64,
) -> Result<f64> {
    if samples == 0 {
        return Err(Error::invalid("samples must be at least 1"));
    }
    let n = space.dim();
    let mut rng = sampling::seeded(seed);
    let triples: Vec<[Vec<f64>; 3]> = (0..samples)
        .map(|_| {
            [
                sampling::uniform_box(&mut rng, n, box_radius),
                sampling::uniform_box(&mut rng, n, box_radius),
                sampling::uniform_box(&mut rng, n, box_radius),
            ]
        })
        .collect();
    let ratios: Result<Vec<f64>> = triples
        .par_iter()
        .map(|[x, y, z]| {
            let xz = space.dist(x, z)?;
            let denom = space.dist(x, y)? + space.dist(y, z)?;
            Ok(if denom > 0.0 { xz / denom } else { 0.0 })
        })
        .collect();
    Ok(ratios?.into_iter().fold(1.0, f64::max))
}

/// Coordinates of a single-eigenvalue canonical matrix
/// `[lambda I_{n0}, lambda I_{n1} + N, ..., lambda I_{nr} + N]`: the
/// projection `pi_A` keeps the 1x1 blocks and the last coordinate of each
/// Jordan block; the fiber coordinates are the remaining ones.
#[derive(Clone, Debug, PartialEq)]
pub struct FiberStructure {
    lambda: f64,
    /// Block sizes in matrix order.
    blocks: Vec<usize>,
}

impl FiberStructure {
    pub fn from_matrix(a: &Matrix) -> Result<Self> {
        let blocks = bidiagonal_blocks(a)?;
        let lambda = a.get(0, 0);
        if (0..a.dim()).any(|i| a.get(i, i) != lambda) {
            return Err(Error::invalid(
                "fiber structure needs a single eigenvalue on the diagonal",
            ));
        }
        if !(lambda > 0.0) {
            return Err(Error::Hypothesis {
                re: lambda,
                im: 0.0,
                tol: 0.0,
            });
        }
        Ok(FiberStructure { lambda, blocks })
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn dim(&self) -> usize {
        self.blocks.iter().sum()
    }

    /// `n0 + r`.
    pub fn base_dim(&self) -> usize {
        self.blocks.len()
    }

    pub fn fiber_dim(&self) -> usize {
        self.dim() - self.base_dim()
    }

    /// `pi_A(p)` written in base coordinates.
    pub fn project(&self, p: &[f64]) -> Vec<f64> {
        let mut off = 0;
        let mut out = Vec::with_capacity(self.base_dim());
        for &b in &self.blocks {
            out.push(p[off + b - 1]);
            off += b;
        }
        out
    }

    pub fn fiber_coords(&self, p: &[f64]) -> Vec<f64> {
        let mut off = 0;
        let mut out = Vec::with_capacity(self.fiber_dim());
        for &b in &self.blocks {
            out.extend_from_slice(&p[off..off + b - 1]);
            off += b;
        }
        out
    }

    /// Inverse of (`project`, `fiber_coords`).
    pub fn assemble(&self, base: &[f64], fiber: &[f64]) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.dim());
        let mut f = 0;
        for (i, &b) in self.blocks.iter().enumerate() {
            out.extend_from_slice(&fiber[f..f + b - 1]);
            out.push(base[i]);
            f += b - 1;
        }
        out
    }

    /// `A(1)`: each Jordan block loses one dimension, 1x1 blocks disappear.
    /// `None` when the fibers are points.
    pub fn reduced_matrix(&self) -> Option<Matrix> {
        let blocks: Vec<Matrix> = self
            .blocks
            .iter()
            .filter(|&&b| b >= 2)
            .map(|&b| Matrix::jordan_block(self.lambda, b - 1))
            .collect();
        (!blocks.is_empty()).then(|| Matrix::block_diag(&blocks))
    }

    /// `|y - y'|^(1/lambda)`, the Hausdorff distance between the fibers over
    /// `y` and `y'`.
    pub fn fiber_hausdorff(&self, y: &[f64], y2: &[f64]) -> f64 {
        euclid(y, y2).powf(1.0 / self.lambda)
    }
}

/// Splits an upper bidiagonal matrix with superdiagonal entries in `{0, 1}`
/// into its Jordan block sizes.
fn bidiagonal_blocks(a: &Matrix) -> Result<Vec<usize>> {
    let n = a.dim();
    for i in 0..n {
        for j in 0..n {
            let x = a.get(i, j);
            let ok = if j == i {
                true
            } else if j == i + 1 {
                x == 0.0 || (x == 1.0 && a.get(i, i) == a.get(j, j))
            } else {
                x == 0.0
            };
            if !ok {
                return Err(Error::invalid(
                    "matrix is not in canonical real Jordan form (upper bidiagonal, unit superdiagonal within blocks)",
                ));
            }
        }
    }
    let mut blocks = Vec::new();
    let mut size = 1;
    for i in 0..n - 1 {
        if a.get(i, i + 1) == 1.0 {
            size += 1;
        } else {
            blocks.push(size);
            size = 1;
        }
    }
    blocks.push(size);
    Ok(blocks)
}

fn euclid(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Evaluates `(D_A(p, p'), D_{A(1)}(x, x'))` for two points of one fiber of
/// `pi_A`, each side by its own solver.
pub fn fiber_restriction_check(space: &BoundarySpace, p: &[f64], p2: &[f64]) -> Result<(f64, f64)> {
    let fs = FiberStructure::from_matrix(space.matrix())?;
    if p.len() != fs.dim() || p2.len() != fs.dim() {
        return Err(Error::DimensionMismatch {
            expected: fs.dim(),
            found: p.len().max(p2.len()),
        });
    }
    if fs.project(p) != fs.project(p2) {
        return Err(Error::NotInFiber);
    }
    let full = space.dist(p, p2)?;
    let reduced = match fs.reduced_matrix() {
        Some(m) => {
            let sub = BoundarySpace::with_config(m, *space.solver())?;
            sub.dist(&fs.fiber_coords(p), &fs.fiber_coords(p2))?
        }
        None => 0.0,
    };
    Ok((full, reduced))
}

/// Sampled `min D_A(p, q)` over `q` in the fiber over `y2`, with fiber
/// coordinates of `q` uniform in a cube of half-width `radius` around those
/// of `p`. Bounded below by `|pi_A(p) - y2|^(1/lambda)`.
pub fn point_to_fiber(
    space: &BoundarySpace,
    p: &[f64],
    y2: &[f64],
    samples: usize,
    seed: u64,
    radius: f64,
) -> Result<f64> {
    let fs = FiberStructure::from_matrix(space.matrix())?;
    if y2.len() != fs.base_dim() {
        return Err(Error::DimensionMismatch {
            expected: fs.base_dim(),
            found: y2.len(),
        });
    }
    let x = fs.fiber_coords(p);
    let mut rng = sampling::seeded(seed);
    let count = if fs.fiber_dim() == 0 { 1 } else { samples.max(1) };
    let candidates: Vec<Vec<f64>> = (0..count)
        .map(|_| {
            let off = sampling::uniform_box(&mut rng, fs.fiber_dim(), radius);
            let xf: Vec<f64> = x.iter().zip(&off).map(|(a, b)| a + b).collect();
            fs.assemble(y2, &xf)
        })
        .collect();
    min_dist(space, p, &candidates)
}

fn min_dist(space: &BoundarySpace, p: &[f64], candidates: &[Vec<f64>]) -> Result<f64> {
    let d: Result<Vec<f64>> = candidates.par_iter().map(|q| space.dist(p, q)).collect();
    Ok(d?.into_iter().fold(f64::INFINITY, f64::min))
}

/// Eigenvalue-block layout of a block-diagonal canonical matrix with at
/// least two distinct eigenvalues. `top` holds the coordinates of `V_k`, the
/// generalized eigenspace of the largest eigenvalue.
#[derive(Clone, Debug)]
pub struct EigenBlocks {
    top: Vec<usize>,
    rest: Vec<usize>,
    top_matrix: Matrix,
}

impl EigenBlocks {
    pub fn from_matrix(a: &Matrix) -> Result<Self> {
        bidiagonal_blocks(a)?;
        let n = a.dim();
        let diag: Vec<f64> = (0..n).map(|i| a.get(i, i)).collect();
        let top_val = diag.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut distinct = diag.clone();
        distinct.sort_by(f64::total_cmp);
        distinct.dedup();
        if distinct.len() < 2 {
            return Err(Error::invalid(
                "slab distances need at least two distinct eigenvalues",
            ));
        }
        let top: Vec<usize> = (0..n).filter(|&i| diag[i] == top_val).collect();
        let rest: Vec<usize> = (0..n).filter(|&i| diag[i] != top_val).collect();
        let k = top.len();
        let mut entries = Vec::with_capacity(k * k);
        for &i in &top {
            for &j in &top {
                entries.push(a.get(i, j));
            }
        }
        Ok(EigenBlocks {
            top,
            rest,
            top_matrix: Matrix::new(k, entries)?,
        })
    }

    pub fn top_matrix(&self) -> &Matrix {
        &self.top_matrix
    }

    pub fn top_coords(&self, p: &[f64]) -> Vec<f64> {
        self.top.iter().map(|&i| p[i]).collect()
    }
}

/// `(sampled D_A(x, slab), D_{A_k}(x_k, y_k))` where the slab is
/// `V_1 x ... x V_{k-1} x {y_k}`. Slab points are sampled with their lower
/// coordinates uniform in a cube of half-width `radius` around those of `x`.
pub fn block_distance_check(
    space: &BoundarySpace,
    x: &[f64],
    y_top: &[f64],
    samples: usize,
    seed: u64,
    radius: f64,
) -> Result<(f64, f64)> {
    let eb = EigenBlocks::from_matrix(space.matrix())?;
    if y_top.len() != eb.top.len() || x.len() != space.dim() {
        return Err(Error::DimensionMismatch {
            expected: eb.top.len(),
            found: y_top.len(),
        });
    }
    let x_top = eb.top_coords(x);
    let top_space = BoundarySpace::with_config(eb.top_matrix.clone(), *space.solver())?;
    let closed = top_space.dist(&x_top, y_top)?;
    if x_top == y_top {
        // x itself lies in the slab.
        return Ok((0.0, closed));
    }
    let mut rng = sampling::seeded(seed);
    let candidates: Vec<Vec<f64>> = (0..samples.max(1))
        .map(|_| {
            let off = sampling::uniform_box(&mut rng, eb.rest.len(), radius);
            let mut q = x.to_vec();
            for (slot, &i) in eb.top.iter().enumerate() {
                q[i] = y_top[slot];
            }
            for (o, &i) in off.iter().zip(&eb.rest) {
                q[i] += o;
            }
            q
        })
        .collect();
    Ok((min_dist(space, x, &candidates)?, closed))
}
