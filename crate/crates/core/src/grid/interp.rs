//! Shape-preserving cubic interpolation.
//!
//! Hermite interpolation with node slopes taken from high-order finite
//! differences and then passed through a monotonicity limiter (slopes are
//! clamped into the Fritsch–Carlson region, and zeroed at local extrema of the
//! data). Where the data are monotone and well resolved the limiter is
//! inactive and the accuracy of the underlying slope estimates is kept; near
//! extrema and jumps the interpolant cannot overshoot the data.

use crate::grid::Grid;

/// A monotone piecewise-cubic interpolant of fixed samples.
pub(crate) struct MonotoneCubic<'a> {
    grid: &'a Grid,
    values: &'a [f64],
    slopes: Vec<f64>,
}

impl<'a> MonotoneCubic<'a> {
    pub(crate) fn new(grid: &'a Grid, values: &'a [f64]) -> Self {
        let slopes = limited_slopes(grid, values);
        MonotoneCubic { grid, values, slopes }
    }

    /// Evaluate at `x`, which must lie within the grid span (callers check).
    pub(crate) fn eval(&self, x: f64) -> f64 {
        let t = self.grid.points();
        let n = t.len();
        // Cell lookup: rightmost i with t[i] <= x, capped to the last cell.
        let i = match t.binary_search_by(|p| p.partial_cmp(&x).unwrap()) {
            Ok(k) => k.min(n - 2),
            Err(k) => k.saturating_sub(1).min(n - 2),
        };
        let h = t[i + 1] - t[i];
        let s = (x - t[i]) / h;
        let (s2, s3) = (s * s, s * s * s);
        let h00 = 2.0 * s3 - 3.0 * s2 + 1.0;
        let h10 = s3 - 2.0 * s2 + s;
        let h01 = -2.0 * s3 + 3.0 * s2;
        let h11 = s3 - s2;
        h00 * self.values[i]
            + h10 * h * self.slopes[i]
            + h01 * self.values[i + 1]
            + h11 * h * self.slopes[i + 1]
    }
}

/// Node slopes: finite-difference estimates clamped so every cubic piece is
/// monotone between its endpoints (and therefore bounded by the data range).
fn limited_slopes(grid: &Grid, values: &[f64]) -> Vec<f64> {
    let t = grid.points();
    let n = t.len();
    let mut m = crate::grid::fd_derivative(grid, values);
    let secant = |i: usize| (values[i + 1] - values[i]) / (t[i + 1] - t[i]);
    for i in 0..n {
        let (dl, dr) = match i {
            0 => (secant(0), secant(0)),
            _ if i == n - 1 => (secant(n - 2), secant(n - 2)),
            _ => (secant(i - 1), secant(i)),
        };
        if dl * dr <= 0.0 {
            // Local extremum or flat spot in the data: flatten the slope.
            m[i] = 0.0;
        } else {
            let lim = 3.0 * dl.abs().min(dr.abs());
            let sign = dl.signum();
            // Same sign as the data trend, magnitude inside the
            // Fritsch–Carlson box.
            m[i] = sign * (sign * m[i]).clamp(0.0, lim);
        }
    }
    m
}
