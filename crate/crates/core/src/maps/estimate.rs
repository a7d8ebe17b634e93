//! Sampled distortion estimates. Every estimator draws all of its points
//! from the seed before evaluating distances, so output depends only on the
//! inputs and the seed.

use nalgebra::DVector;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::QSMapSpec;
use crate::error::{Error, Result};
use crate::linalg::{self, Matrix};
use crate::metric::BoundarySpace;
use crate::sampling;

fn check_dim(map: &QSMapSpec, space: &BoundarySpace) -> Result<()> {
    match map.dim() {
        Some(n) if n != space.dim() => Err(Error::DimensionMismatch {
            expected: space.dim(),
            found: n,
        }),
        _ => Ok(()),
    }
}

fn extremes(values: impl Iterator<Item = f64>) -> (f64, f64) {
    values.fold((f64::INFINITY, 0.0), |(lo, hi), r| (lo.min(r), hi.max(r)))
}

/// `(min, max)` of `D(Fx, Fy) / D(x, y)` over multiscale pairs in the box.
pub fn empirical_bilip(
    map: &QSMapSpec,
    space: &BoundarySpace,
    samples: usize,
    seed: u64,
    box_radius: f64,
) -> Result<(f64, f64)> {
    check_dim(map, space)?;
    let mut rng = sampling::seeded(seed);
    let pairs: Vec<_> = (0..samples)
        .map(|_| sampling::multiscale_pair(&mut rng, space.dim(), box_radius))
        .collect();
    let ratios: Result<Vec<Option<f64>>> = pairs
        .par_iter()
        .map(|(x, y)| {
            let d = space.dist(x, y)?;
            if d == 0.0 {
                return Ok(None);
            }
            Ok(Some(space.dist(&map.eval(x)?, &map.eval(y)?)? / d))
        })
        .collect();
    Ok(extremes(ratios?.into_iter().flatten()))
}

/// `(min, max)` of `D_B(Mx, My) / D_A(x, y)^s` over multiscale pairs in
/// `[-1, 1]^n`.
pub fn transfer_check(
    a: &Matrix,
    b: &Matrix,
    m: &Matrix,
    s: f64,
    samples: usize,
    seed: u64,
) -> Result<(f64, f64)> {
    m.inverse()?;
    if !(s > 0.0 && s.is_finite()) {
        return Err(Error::invalid("snowflake exponent must be positive"));
    }
    let space_a = BoundarySpace::new(a.clone())?;
    let space_b = BoundarySpace::new(b.clone())?;
    if space_a.dim() != space_b.dim() || m.dim() != space_a.dim() {
        return Err(Error::DimensionMismatch {
            expected: space_a.dim(),
            found: space_b.dim().max(m.dim()),
        });
    }
    let mut rng = sampling::seeded(seed);
    let pairs: Vec<_> = (0..samples)
        .map(|_| sampling::multiscale_pair(&mut rng, space_a.dim(), 1.0))
        .collect();
    let ratios: Result<Vec<Option<f64>>> = pairs
        .par_iter()
        .map(|(x, y)| {
            let d = space_a.log_dist(x, y)?;
            if d == f64::NEG_INFINITY {
                return Ok(None);
            }
            let db = space_b.log_dist(&m.apply(x), &m.apply(y))?;
            Ok(Some((db - s * d).exp()))
        })
        .collect();
    Ok(extremes(ratios?.into_iter().flatten()))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DistortionRow {
    pub r: f64,
    /// `L_F(x, r)`: max of `D(Fx, Fx')` over `D(x, x') in [0.9r, r]`.
    pub upper: Option<f64>,
    /// `l_F(x, r)`: min of `D(Fx, Fx')` over `D(x, x') in [r, 1.1r]`.
    pub lower: Option<f64>,
    pub upper_ratio: Option<f64>,
    pub lower_ratio: Option<f64>,
    pub upper_samples: usize,
    pub lower_samples: usize,
    /// Samples whose distance fell outside their annulus.
    pub misses: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DistortionReport {
    pub rows: Vec<DistortionRow>,
}

impl DistortionReport {
    /// `(L/r, l/r)` at the smallest radius that produced both values.
    pub fn smallest_radius_ratios(&self) -> Option<(f64, f64)> {
        self.rows
            .iter()
            .rev()
            .find_map(|r| Some((r.upper_ratio?, r.lower_ratio?)))
    }
}

/// Samples `x'` on exact `D_A`-spheres around `x`: for a unit direction `w`
/// with `d_0 = D(0, w)`, the point `x + e^{(ln rho - ln d_0) A} w` is at
/// distance `rho` by the similarity property of `e^{sA}`.
pub fn distortion_profile(
    map: &QSMapSpec,
    space: &BoundarySpace,
    x: &[f64],
    radii: &[f64],
    samples_per_radius: usize,
    seed: u64,
) -> Result<DistortionReport> {
    check_dim(map, space)?;
    if radii.is_empty() || radii.iter().any(|r| !(*r > 0.0 && r.is_finite())) {
        return Err(Error::invalid("radii must be positive"));
    }
    if radii.windows(2).any(|w| !(w[0] > w[1])) {
        return Err(Error::invalid("radii must be strictly decreasing"));
    }
    let n = space.dim();
    let a = space.matrix().as_dmatrix();
    let origin = vec![0.0; n];
    let fx = map.eval(x)?;
    let mut rng = sampling::seeded(seed);
    let mut rows = Vec::with_capacity(radii.len());
    for &r in radii {
        let mut draws = Vec::with_capacity(2 * samples_per_radius);
        for band in [(0.9 * r, r), (r, 1.1 * r)] {
            for _ in 0..samples_per_radius {
                let rho = rng.random_range(band.0..=band.1);
                draws.push((band, rho, sampling::unit_direction(&mut rng, n)));
            }
        }
        let evaluated: Result<Vec<(bool, bool, f64)>> = draws
            .par_iter()
            .map(|&(band, rho, ref w)| {
                let d0 = space.dist(&origin, w)?;
                let s = rho.ln() - d0.ln();
                let step = linalg::expm(&(a * s)) * DVector::from_column_slice(w);
                let xp: Vec<f64> = x.iter().zip(step.iter()).map(|(p, q)| p + q).collect();
                let d = space.dist(x, &xp)?;
                let slack = 1e-9 * r;
                let hit = d >= band.0 - slack && d <= band.1 + slack;
                let image = space.dist(&fx, &map.eval(&xp)?)?;
                Ok((band.1 == r, hit, image))
            })
            .collect();
        let mut row = DistortionRow {
            r,
            upper: None,
            lower: None,
            upper_ratio: None,
            lower_ratio: None,
            upper_samples: 0,
            lower_samples: 0,
            misses: 0,
        };
        for (inner, hit, image) in evaluated? {
            if !hit {
                row.misses += 1;
            } else if inner {
                row.upper_samples += 1;
                row.upper = Some(row.upper.map_or(image, |u: f64| u.max(image)));
            } else {
                row.lower_samples += 1;
                row.lower = Some(row.lower.map_or(image, |l: f64| l.min(image)));
            }
        }
        row.upper_ratio = row.upper.map(|u| u / r);
        row.lower_ratio = row.lower.map(|l| l / r);
        rows.push(row);
    }
    Ok(DistortionReport { rows })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConformalRow {
    pub t: f64,
    /// `|e^{-tA}(F(x) - F(x_0))|` with `D(x_0, x) = e^t`.
    pub probe_ratio: f64,
    /// `D(F x_0, F x) / D(x_0, x)`.
    pub metric_ratio: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConformalProbe {
    pub rows: Vec<ConformalRow>,
}

impl ConformalProbe {
    pub fn final_probe_ratio(&self) -> f64 {
        self.rows.last().map_or(f64::NAN, |r| r.probe_ratio)
    }

    pub fn final_metric_ratio(&self) -> f64 {
        self.rows.last().map_or(f64::NAN, |r| r.metric_ratio)
    }
}

/// Probes `F` at `x_0` along `x = x_0 + e^{tN}(0, ..., 0, e^{lambda t})`,
/// for which `e^{-tA}(x - x_0) = e_n` and so `D(x_0, x) = e^t`. For a shear
/// with `C'(0) = c` the probe ratio tends to `sqrt(1 + c^2)` as `t -> -inf`.
/// The space must be a single Jordan block `lambda I + N`.
pub fn conformal_probe(
    map: &QSMapSpec,
    space: &BoundarySpace,
    x0: &[f64],
    ts: &[f64],
) -> Result<ConformalProbe> {
    check_dim(map, space)?;
    let n = space.dim();
    if x0.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            found: x0.len(),
        });
    }
    let lambda = space.matrix().get(0, 0);
    if *space.matrix() != Matrix::jordan_block(lambda, n) {
        return Err(Error::invalid(
            "the conformality probe needs a single Jordan block lambda I + N",
        ));
    }
    let fx0 = map.eval(x0)?;
    let rows = ts
        .iter()
        .map(|&t| {
            // Last column of e^{tN}, scaled by e^{lambda t}.
            let coeffs = linalg::taylor_coefficients(n, t);
            let scale = (lambda * t).exp();
            let x: Vec<f64> = (0..n).map(|i| x0[i] + scale * coeffs[n - 1 - i]).collect();
            let fx = map.eval(&x)?;
            let diff = DVector::from_iterator(n, fx.iter().zip(&fx0).map(|(a, b)| a - b));
            let back = linalg::mat_exp(space.matrix(), -t)?;
            let probe_ratio = (back.as_dmatrix() * diff).norm();
            let metric_ratio = (space.log_dist(&fx0, &fx)? - t).exp();
            Ok(ConformalRow {
                t,
                probe_ratio,
                metric_ratio,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ConformalProbe { rows })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QSProfile {
    /// `(D(x,y)/D(x,z), D(Fx,Fy)/D(Fx,Fz))` per triple.
    pub pairs: Vec<(f64, f64)>,
    /// Running maximum of the output ratio, sorted by input ratio.
    pub envelope: Vec<(f64, f64)>,
    /// Triples skipped because two points coincided.
    pub degenerate: usize,
}

impl QSProfile {
    /// The envelope as a step function: largest observed output ratio among
    /// inputs `<= t`.
    pub fn eta(&self, t: f64) -> Option<f64> {
        let idx = self.envelope.partition_point(|p| p.0 <= t);
        (idx > 0).then(|| self.envelope[idx - 1].1)
    }
}

/// Sampled quasisymmetry profile over triples `x, y = x + r_1 u_1,
/// z = x + r_2 u_2` with `x` uniform in `[-1, 1]^n` and `r_i` log-uniform in
/// `[1e-3, 1]`.
pub fn qs_profile(map: &QSMapSpec, space: &BoundarySpace, triples: usize, seed: u64) -> Result<QSProfile> {
    check_dim(map, space)?;
    if triples == 0 {
        return Err(Error::invalid("need at least one triple"));
    }
    let n = space.dim();
    let mut rng = sampling::seeded(seed);
    let points: Vec<[Vec<f64>; 3]> = (0..triples)
        .map(|_| {
            let (x, y) = sampling::multiscale_pair(&mut rng, n, 1.0);
            let r = sampling::log_uniform(&mut rng, 1e-3, 1.0);
            let dir = sampling::unit_direction(&mut rng, n);
            let z = x.iter().zip(&dir).map(|(a, d)| a + r * d).collect();
            [x, y, z]
        })
        .collect();
    let evaluated: Result<Vec<Option<(f64, f64)>>> = points
        .par_iter()
        .map(|[x, y, z]| {
            let (dxy, dxz) = (space.dist(x, y)?, space.dist(x, z)?);
            let (fx, fy, fz) = (map.eval(x)?, map.eval(y)?, map.eval(z)?);
            let (fxy, fxz) = (space.dist(&fx, &fy)?, space.dist(&fx, &fz)?);
            let ok = [dxy, dxz, fxy, fxz].iter().all(|d| *d > 0.0 && d.is_finite());
            Ok(ok.then(|| (dxy / dxz, fxy / fxz)))
        })
        .collect();
    let evaluated = evaluated?;
    let degenerate = evaluated.iter().filter(|e| e.is_none()).count();
    let pairs: Vec<(f64, f64)> = evaluated.into_iter().flatten().collect();
    let mut sorted = pairs.clone();
    sorted.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    let mut running = 0.0f64;
    let envelope = sorted
        .into_iter()
        .map(|(i, o)| {
            running = running.max(o);
            (i, running)
        })
        .collect();
    Ok(QSProfile {
        pairs,
        envelope,
        degenerate,
    })
}
