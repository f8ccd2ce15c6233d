//! Discretized functions on strictly increasing grids.
//!
//! Everything downstream — alignment, warp geometry, emulation, calibration —
//! consumes the three types defined here: [`Grid`], [`GridFunction`], and the
//! square-root velocity transform [`Srvf`]. Operations are pure; values are
//! immutable after construction.

mod interp;

use crate::{Error, Result};
use interp::MonotoneCubic;
use serde::{Deserialize, Serialize};

/// Relative spacing deviation below which a grid is treated as uniform.
const UNIFORM_REL_TOL: f64 = 1e-8;

/// Strictly increasing sample points on a compact interval.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    points: Vec<f64>,
}

impl Grid {
    /// Build a grid from raw points. Requires at least 3 finite, strictly
    /// increasing values (3 is the minimum every stencil here supports).
    pub fn new(points: Vec<f64>) -> Result<Self> {
        if points.len() < 3 {
            return Err(Error::InvalidGrid(format!(
                "need at least 3 points, got {}",
                points.len()
            )));
        }
        if points.iter().any(|p| !p.is_finite()) {
            return Err(Error::InvalidGrid("non-finite grid point".into()));
        }
        if points.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidGrid("points not strictly increasing".into()));
        }
        Ok(Grid { points })
    }

    /// `n` equally spaced points covering `[lo, hi]`.
    pub fn uniform(n: usize, lo: f64, hi: f64) -> Result<Self> {
        if n < 3 {
            return Err(Error::InvalidGrid(format!("need at least 3 points, got {n}")));
        }
        if !(lo.is_finite() && hi.is_finite() && hi > lo) {
            return Err(Error::InvalidGrid(format!("bad interval [{lo}, {hi}]")));
        }
        let step = (hi - lo) / (n - 1) as f64;
        let mut points: Vec<f64> = (0..n).map(|i| lo + step * i as f64).collect();
        // Pin the last point so the interval is covered exactly.
        points[n - 1] = hi;
        Ok(Grid { points })
    }

    #[inline]
    pub fn points(&self) -> &[f64] {
        &self.points
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.points.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        false // invariant: at least 3 points
    }

    #[inline]
    pub fn lo(&self) -> f64 {
        self.points[0]
    }

    #[inline]
    pub fn hi(&self) -> f64 {
        *self.points.last().unwrap()
    }

    #[inline]
    pub fn span(&self) -> f64 {
        self.hi() - self.lo()
    }

    /// Whether spacing is uniform to within a tight relative tolerance.
    pub fn is_uniform(&self) -> bool {
        let h = self.span() / (self.len() - 1) as f64;
        self.points
            .windows(2)
            .all(|w| ((w[1] - w[0]) - h).abs() <= UNIFORM_REL_TOL * h)
    }

    /// Affinely map the grid onto [0, 1], returning the new grid and the
    /// original window so callers can restore it later.
    pub fn rescaled_to_unit(&self) -> (Grid, (f64, f64)) {
        let (lo, hi) = (self.lo(), self.hi());
        let span = hi - lo;
        let mut pts: Vec<f64> = self.points.iter().map(|&t| (t - lo) / span).collect();
        pts[0] = 0.0;
        let n = pts.len();
        pts[n - 1] = 1.0;
        (Grid { points: pts }, (lo, hi))
    }

    /// Trapezoidal quadrature weights for this grid.
    pub fn trapezoid_weights(&self) -> Vec<f64> {
        let t = &self.points;
        let n = t.len();
        let mut w = vec![0.0; n];
        for i in 0..n - 1 {
            let h = t[i + 1] - t[i];
            w[i] += 0.5 * h;
            w[i + 1] += 0.5 * h;
        }
        w
    }
}

/// Trapezoidal integral of `values` over `grid`.
pub fn trapezoid(grid: &Grid, values: &[f64]) -> f64 {
    let t = grid.points();
    let mut acc = 0.0;
    for i in 0..t.len() - 1 {
        acc += 0.5 * (t[i + 1] - t[i]) * (values[i] + values[i + 1]);
    }
    acc
}

/// Cumulative trapezoidal integral; entry `i` approximates the integral from
/// the left endpoint to `t_i` (entry 0 is exactly 0).
pub fn cumulative_trapezoid(grid: &Grid, values: &[f64]) -> Vec<f64> {
    let t = grid.points();
    let mut out = vec![0.0; t.len()];
    for i in 1..t.len() {
        out[i] = out[i - 1] + 0.5 * (t[i] - t[i - 1]) * (values[i] + values[i - 1]);
    }
    out
}

/// Finite-difference derivative of raw samples (shared by [`GridFunction`] and
/// the interpolation engine). Fourth-order centered stencils in the interior
/// of uniform grids, second-order three-point formulas otherwise, one-sided
/// second-order at the boundaries.
pub(crate) fn fd_derivative(grid: &Grid, f: &[f64]) -> Vec<f64> {
    let t = grid.points();
    let n = t.len();
    let mut d = vec![0.0; n];
    if grid.is_uniform() {
        let h = grid.span() / (n - 1) as f64;
        d[0] = (-3.0 * f[0] + 4.0 * f[1] - f[2]) / (2.0 * h);
        d[n - 1] = (3.0 * f[n - 1] - 4.0 * f[n - 2] + f[n - 3]) / (2.0 * h);
        if n > 3 {
            d[1] = (f[2] - f[0]) / (2.0 * h);
            d[n - 2] = (f[n - 1] - f[n - 3]) / (2.0 * h);
        } else {
            d[1] = (f[2] - f[0]) / (2.0 * h);
        }
        for i in 2..n.saturating_sub(2) {
            d[i] = (f[i - 2] - 8.0 * f[i - 1] + 8.0 * f[i + 1] - f[i + 2]) / (12.0 * h);
        }
    } else {
        for i in 1..n - 1 {
            let hl = t[i] - t[i - 1];
            let hr = t[i + 1] - t[i];
            d[i] = -hr / (hl * (hl + hr)) * f[i - 1] + (hr - hl) / (hl * hr) * f[i]
                + hl / (hr * (hl + hr)) * f[i + 1];
        }
        let (h1, h2) = (t[1] - t[0], t[2] - t[1]);
        d[0] = -(2.0 * h1 + h2) / (h1 * (h1 + h2)) * f[0] + (h1 + h2) / (h1 * h2) * f[1]
            - h1 / (h2 * (h1 + h2)) * f[2];
        let (g1, g2) = (t[n - 1] - t[n - 2], t[n - 2] - t[n - 3]);
        d[n - 1] = (2.0 * g1 + g2) / (g1 * (g1 + g2)) * f[n - 1]
            - (g1 + g2) / (g1 * g2) * f[n - 2]
            + g1 / (g2 * (g1 + g2)) * f[n - 3];
    }
    d
}

/// A function sampled on a [`Grid`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridFunction {
    pub grid: Grid,
    values: Vec<f64>,
}

impl GridFunction {
    pub fn new(grid: Grid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} values on a {}-point grid",
                values.len(),
                grid.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Data("non-finite function value".into()));
        }
        Ok(GridFunction { grid, values })
    }

    /// Sample a closure on a grid.
    pub fn from_fn(grid: Grid, f: impl Fn(f64) -> f64) -> Result<Self> {
        let values: Vec<f64> = grid.points().iter().map(|&t| f(t)).collect();
        GridFunction::new(grid, values)
    }

    #[inline]
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Interpolate onto another grid with the monotone cubic scheme.
    /// The target must lie inside this function's domain.
    pub fn resample(&self, g: &Grid) -> Result<GridFunction> {
        let slack = 1e-12 * self.grid.span().max(1.0);
        if g.lo() < self.grid.lo() - slack || g.hi() > self.grid.hi() + slack {
            return Err(Error::OutOfDomain {
                point: if g.lo() < self.grid.lo() { g.lo() } else { g.hi() },
                lo: self.grid.lo(),
                hi: self.grid.hi(),
            });
        }
        let interp = MonotoneCubic::new(&self.grid, &self.values);
        let values: Vec<f64> = g
            .points()
            .iter()
            .map(|&x| interp.eval(x.clamp(self.grid.lo(), self.grid.hi())))
            .collect();
        GridFunction::new(g.clone(), values)
    }

    /// Evaluate at arbitrary in-domain points (same interpolant as `resample`).
    pub fn eval_at(&self, xs: &[f64]) -> Result<Vec<f64>> {
        let slack = 1e-9 * self.grid.span().max(1.0);
        let interp = MonotoneCubic::new(&self.grid, &self.values);
        xs.iter()
            .map(|&x| {
                if x < self.grid.lo() - slack || x > self.grid.hi() + slack {
                    return Err(Error::OutOfDomain {
                        point: x,
                        lo: self.grid.lo(),
                        hi: self.grid.hi(),
                    });
                }
                Ok(interp.eval(x.clamp(self.grid.lo(), self.grid.hi())))
            })
            .collect()
    }

    /// Finite-difference derivative on the same grid (see [`fd_derivative`]).
    pub fn derivative(&self) -> GridFunction {
        let d = fd_derivative(&self.grid, &self.values);
        GridFunction {
            grid: self.grid.clone(),
            values: d,
        }
    }

    /// Discrete Gaussian smoothing with standard deviation `bandwidth` (in
    /// grid units). Off by default in every pipeline; provided for noisy
    /// inputs. Kernel weights renormalize near the boundaries.
    pub fn smooth_gaussian(&self, bandwidth: f64) -> Result<GridFunction> {
        if !(bandwidth > 0.0) || !bandwidth.is_finite() {
            return Err(Error::Config(format!("bad smoothing bandwidth {bandwidth}")));
        }
        let t = self.grid.points();
        let n = t.len();
        let cutoff = 4.0 * bandwidth;
        let mut out = vec![0.0; n];
        for i in 0..n {
            let mut num = 0.0;
            let mut den = 0.0;
            for j in 0..n {
                let d = t[j] - t[i];
                if d.abs() > cutoff {
                    continue;
                }
                let w = (-0.5 * (d / bandwidth).powi(2)).exp();
                num += w * self.values[j];
                den += w;
            }
            out[i] = num / den;
        }
        GridFunction::new(self.grid.clone(), out)
    }

    /// Trapezoidal L² inner product with another function on the same grid.
    pub fn inner_product(&self, other: &GridFunction) -> Result<f64> {
        if self.grid != other.grid {
            return Err(Error::ShapeMismatch("inner product across different grids".into()));
        }
        let prod: Vec<f64> = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| a * b)
            .collect();
        Ok(trapezoid(&self.grid, &prod))
    }

    /// Trapezoidal L² norm.
    pub fn norm(&self) -> f64 {
        self.inner_product(self).unwrap().max(0.0).sqrt()
    }
}

/// Square-root velocity transform of a curve: q = sign(f') · sqrt(|f'|),
/// sampled on the curve's grid rescaled to [0, 1]. Together with the anchor
/// value f(t_min) and the original window it determines the curve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Srvf {
    pub grid: Grid,
    values: Vec<f64>,
    pub anchor: f64,
    pub window: (f64, f64),
}

impl Srvf {
    /// Wrap raw q samples living on a [0,1] grid.
    pub fn new(grid: Grid, values: Vec<f64>, anchor: f64) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} values on a {}-point grid",
                values.len(),
                grid.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) || !anchor.is_finite() {
            return Err(Error::Data("non-finite SRVF value".into()));
        }
        if grid.lo() != 0.0 || grid.hi() != 1.0 {
            return Err(Error::InvalidGrid("SRVF grid must cover [0, 1]".into()));
        }
        Ok(Srvf {
            grid,
            values,
            anchor,
            window: (0.0, 1.0),
        })
    }

    #[inline]
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn inner_product(&self, other: &Srvf) -> Result<f64> {
        if self.grid != other.grid {
            return Err(Error::ShapeMismatch("inner product across different grids".into()));
        }
        let prod: Vec<f64> = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| a * b)
            .collect();
        Ok(trapezoid(&self.grid, &prod))
    }

    pub fn norm(&self) -> f64 {
        self.inner_product(self).unwrap().max(0.0).sqrt()
    }
}

/// Transform a curve to its square-root velocity representation. The grid is
/// rescaled to [0,1] first; q picks up the corresponding affine derivative
/// factor, and [`from_srvf`] undoes both.
pub fn to_srvf(f: &GridFunction) -> Srvf {
    let (unit_grid, window) = f.grid.rescaled_to_unit();
    let scaled = GridFunction {
        grid: unit_grid,
        values: f.values.clone(),
    };
    let d = scaled.derivative();
    let values: Vec<f64> = d
        .values()
        .iter()
        .map(|&v| v.signum() * v.abs().sqrt())
        .collect();
    Srvf {
        grid: scaled.grid,
        values,
        anchor: f.values[0],
        window,
    }
}

/// Invert the square-root velocity transform: f(t) = anchor + cumulative
/// trapezoid of q·|q|, mapped back onto the original time window.
pub fn from_srvf(q: &Srvf) -> GridFunction {
    let integrand: Vec<f64> = q.values.iter().map(|&v| v * v.abs()).collect();
    let values: Vec<f64> = cumulative_trapezoid(&q.grid, &integrand)
        .into_iter()
        .map(|c| q.anchor + c)
        .collect();
    let (lo, hi) = q.window;
    let span = hi - lo;
    let mut pts: Vec<f64> = q.grid.points().iter().map(|&s| lo + span * s).collect();
    pts[0] = lo;
    let n = pts.len();
    pts[n - 1] = hi;
    GridFunction {
        grid: Grid { points: pts },
        values,
    }
}
