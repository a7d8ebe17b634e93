use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Piecewise-linear `C: R -> R` through a sorted knot list, continued
/// linearly with the slope of the end segments. A single knot is a constant.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "KnotsRepr", into = "KnotsRepr")]
pub struct PiecewiseLinear {
    knots: Vec<[f64; 2]>,
}

#[derive(Serialize, Deserialize)]
struct KnotsRepr {
    knots: Vec<[f64; 2]>,
}

impl TryFrom<KnotsRepr> for PiecewiseLinear {
    type Error = Error;

    fn try_from(r: KnotsRepr) -> Result<Self> {
        PiecewiseLinear::new(r.knots)
    }
}

impl From<PiecewiseLinear> for KnotsRepr {
    fn from(p: PiecewiseLinear) -> Self {
        KnotsRepr { knots: p.knots }
    }
}

impl PiecewiseLinear {
    pub fn new(knots: Vec<[f64; 2]>) -> Result<Self> {
        if knots.is_empty() {
            return Err(Error::invalid("C needs at least one knot"));
        }
        if knots.iter().flatten().any(|x| !x.is_finite()) {
            return Err(Error::invalid("C knots must be finite"));
        }
        if knots.windows(2).any(|w| !(w[0][0] < w[1][0])) {
            return Err(Error::invalid("C knots must have strictly increasing abscissae"));
        }
        Ok(PiecewiseLinear { knots })
    }

    pub fn zero() -> Self {
        PiecewiseLinear {
            knots: vec![[0.0, 0.0]],
        }
    }

    /// `y -> c * y`.
    pub fn linear(c: f64) -> Self {
        PiecewiseLinear {
            knots: vec![[0.0, 0.0], [1.0, c]],
        }
    }

    pub fn constant(value: f64) -> Self {
        PiecewiseLinear {
            knots: vec![[0.0, value]],
        }
    }

    pub fn knots(&self) -> &[[f64; 2]] {
        &self.knots
    }

    pub fn eval(&self, y: f64) -> f64 {
        let k = &self.knots;
        if k.len() == 1 {
            return k[0][1];
        }
        // Segment index: the last knot with abscissa <= y, clamped to a valid segment.
        let i = k.partition_point(|p| p[0] <= y).saturating_sub(1).min(k.len() - 2);
        let ([x0, y0], [x1, y1]) = (k[i], k[i + 1]);
        y0 + (y1 - y0) * (y - x0) / (x1 - x0)
    }

    /// `max |slope|` over the segments; exact Lipschitz constant.
    pub fn lipschitz(&self) -> f64 {
        self.knots
            .windows(2)
            .map(|w| ((w[1][1] - w[0][1]) / (w[1][0] - w[0][0])).abs())
            .fold(0.0, f64::max)
    }

    /// `a * C(alpha * y + beta) + c * y`, tracked knot by knot.
    pub fn affine_reparam(&self, a: f64, alpha: f64, beta: f64, c: f64) -> Result<Self> {
        if alpha == 0.0 {
            return Err(Error::invalid("reparametrization slope must be nonzero"));
        }
        let xs: Vec<f64> = self.knots.iter().map(|k| (k[0] - beta) / alpha).collect();
        let g = |y: f64| a * self.eval(alpha * y + beta) + c * y;
        Ok(Self::sample(xs, g))
    }

    /// Pointwise sum, exact since both summands are linear between the
    /// union of their knots.
    pub fn add(&self, other: &PiecewiseLinear) -> Self {
        let xs = self.knots.iter().chain(&other.knots).map(|k| k[0]).collect();
        Self::sample(xs, |y| self.eval(y) + other.eval(y))
    }

    /// Interpolant of `g` at the given abscissae. `g` must be linear outside
    /// their range; a second knot is added when only one remains so the
    /// end slope survives.
    fn sample(mut xs: Vec<f64>, g: impl Fn(f64) -> f64) -> Self {
        xs.sort_by(f64::total_cmp);
        xs.dedup_by(|b, a| (*b - *a).abs() <= 1e-14 * (1.0 + a.abs()));
        if xs.len() == 1 {
            xs.push(xs[0] + 1.0);
        }
        PiecewiseLinear {
            knots: xs.into_iter().map(|x| [x, g(x)]).collect(),
        }
    }
}
