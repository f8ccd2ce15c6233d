//! Chain and distribution diagnostics: effective sample size, goodness-of-fit
//! statistics, and bivariate density summaries for credible regions.

use crate::{Error, Result};
use serde::{Deserialize, Serialize};

/// Effective sample size of a scalar chain via the initial-positive-sequence
/// truncation of the autocovariance sum.
///
/// Returns a value in `[1, n]`; short or constant chains report their length.
pub fn effective_sample_size(chain: &[f64]) -> f64 {
    let n = chain.len();
    if n < 4 {
        return n as f64;
    }
    let mean = chain.iter().sum::<f64>() / n as f64;
    let centered: Vec<f64> = chain.iter().map(|v| v - mean).collect();
    let gamma = |k: usize| -> f64 {
        centered[..n - k]
            .iter()
            .zip(&centered[k..])
            .map(|(a, b)| a * b)
            .sum::<f64>()
            / n as f64
    };
    let g0 = gamma(0);
    if g0 <= 0.0 {
        return n as f64;
    }
    // Sum paired autocovariances while the pairs stay positive and
    // nonincreasing; both truncations guard against noise in the tail.
    let mut asym = -g0;
    let mut prev = f64::INFINITY;
    let mut m = 0usize;
    while 2 * m + 1 < n {
        let pair = gamma(2 * m) + gamma(2 * m + 1);
        if pair <= 0.0 {
            break;
        }
        asym += 2.0 * pair.min(prev);
        prev = pair.min(prev);
        m += 1;
    }
    if asym <= 0.0 {
        return n as f64;
    }
    (n as f64 * g0 / asym).clamp(1.0, n as f64)
}

/// Kolmogorov–Smirnov statistic of `samples` against a reference CDF.
pub fn ks_statistic(samples: &[f64], cdf: impl Fn(f64) -> f64) -> f64 {
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    let mut d: f64 = 0.0;
    for (i, x) in sorted.iter().enumerate() {
        let f = cdf(*x);
        d = d.max((f - i as f64 / n).abs());
        d = d.max(((i + 1) as f64 / n - f).abs());
    }
    d
}

/// Bivariate kernel density estimate on a regular grid.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Density2d {
    pub xs: Vec<f64>,
    pub ys: Vec<f64>,
    /// Row-major `ys.len() × xs.len()` density values.
    pub values: Vec<f64>,
}

impl Density2d {
    fn cell_area(&self) -> f64 {
        (self.xs[1] - self.xs[0]) * (self.ys[1] - self.ys[0])
    }

    fn at(&self, ix: usize, iy: usize) -> f64 {
        self.values[iy * self.xs.len() + ix]
    }

    /// Density threshold whose superlevel set holds `mass` of the total.
    pub fn level_for_mass(&self, mass: f64) -> f64 {
        let total: f64 = self.values.iter().sum();
        if total <= 0.0 {
            return 0.0;
        }
        let mut sorted = self.values.clone();
        sorted.sort_by(|a, b| b.total_cmp(a));
        let mut acc = 0.0;
        for v in &sorted {
            acc += v;
            if acc >= mass * total {
                return *v;
            }
        }
        0.0
    }

    /// Area of the superlevel set holding `mass` of the total density.
    pub fn hpd_area(&self, mass: f64) -> f64 {
        let level = self.level_for_mass(mass);
        if level <= 0.0 {
            return 0.0;
        }
        let count = self.values.iter().filter(|v| **v >= level).count();
        count as f64 * self.cell_area()
    }

    /// Closed contour polylines at a density level, via marching squares on a
    /// zero-padded copy of the grid so every loop closes.
    pub fn contours(&self, level: f64) -> Vec<Vec<(f64, f64)>> {
        let nx = self.xs.len();
        let ny = self.ys.len();
        let dx = self.xs[1] - self.xs[0];
        let dy = self.ys[1] - self.ys[0];
        // Padded lookup: one ring of zeros around the grid.
        let val = |ix: isize, iy: isize| -> f64 {
            if ix < 0 || iy < 0 || ix >= nx as isize || iy >= ny as isize {
                0.0
            } else {
                self.at(ix as usize, iy as usize)
            }
        };
        let coord = |ix: isize, iy: isize| -> (f64, f64) {
            (self.xs[0] + ix as f64 * dx, self.ys[0] + iy as f64 * dy)
        };
        // Interpolated crossing on the edge between two padded-grid nodes.
        let cross = |a: (isize, isize), b: (isize, isize)| -> (f64, f64) {
            let va = val(a.0, a.1);
            let vb = val(b.0, b.1);
            let t = if (vb - va).abs() < 1e-300 { 0.5 } else { (level - va) / (vb - va) };
            let t = t.clamp(0.0, 1.0);
            let pa = coord(a.0, a.1);
            let pb = coord(b.0, b.1);
            (pa.0 + t * (pb.0 - pa.0), pa.1 + t * (pb.1 - pa.1))
        };

        let mut segments: Vec<((f64, f64), (f64, f64))> = Vec::new();
        for iy in -1..ny as isize {
            for ix in -1..nx as isize {
                let corners = [
                    (ix, iy),
                    (ix + 1, iy),
                    (ix + 1, iy + 1),
                    (ix, iy + 1),
                ];
                let above: Vec<bool> = corners.iter().map(|&(x, y)| val(x, y) >= level).collect();
                let idx = (above[0] as usize)
                    | (above[1] as usize) << 1
                    | (above[2] as usize) << 2
                    | (above[3] as usize) << 3;
                // Edges: 0 bottom (c0-c1), 1 right (c1-c2), 2 top (c3-c2), 3 left (c0-c3).
                let e = |k: usize| -> (f64, f64) {
                    match k {
                        0 => cross(corners[0], corners[1]),
                        1 => cross(corners[1], corners[2]),
                        2 => cross(corners[3], corners[2]),
                        _ => cross(corners[0], corners[3]),
                    }
                };
                let pairs: &[(usize, usize)] = match idx {
                    1 | 14 => &[(3, 0)],
                    2 | 13 => &[(0, 1)],
                    3 | 12 => &[(3, 1)],
                    4 | 11 => &[(1, 2)],
                    6 | 9 => &[(0, 2)],
                    7 | 8 => &[(3, 2)],
                    5 => &[(3, 0), (1, 2)],
                    10 => &[(0, 1), (3, 2)],
                    _ => &[],
                };
                for &(a, b) in pairs {
                    segments.push((e(a), e(b)));
                }
            }
        }

        // Chain segments into loops, matching either endpoint on a quantized
        // key so segment orientation does not matter.
        let quant = |p: (f64, f64)| -> (i64, i64) {
            ((p.0 / dx * 1e6).round() as i64, (p.1 / dy * 1e6).round() as i64)
        };
        use std::collections::HashMap;
        let mut at_point: HashMap<(i64, i64), Vec<usize>> = HashMap::new();
        for (i, seg) in segments.iter().enumerate() {
            at_point.entry(quant(seg.0)).or_default().push(i);
            at_point.entry(quant(seg.1)).or_default().push(i);
        }
        let mut used = vec![false; segments.len()];
        let mut loops = Vec::new();
        for i in 0..segments.len() {
            if used[i] {
                continue;
            }
            used[i] = true;
            let mut path = vec![segments[i].0, segments[i].1];
            loop {
                let tail = quant(*path.last().unwrap());
                let Some(candidates) = at_point.get(&tail) else { break };
                let Some(&next) = candidates.iter().find(|&&j| !used[j]) else { break };
                used[next] = true;
                let (a, b) = segments[next];
                path.push(if quant(a) == tail { b } else { a });
                if quant(path[0]) == quant(*path.last().unwrap()) {
                    break;
                }
            }
            // Keep genuinely closed polygons, snapping the endpoint exactly.
            if path.len() > 3 && quant(path[0]) == quant(*path.last().unwrap()) {
                let first = path[0];
                *path.last_mut().unwrap() = first;
                loops.push(path);
            }
        }
        loops
    }
}

/// Gaussian-kernel density estimate of a bivariate sample on a `grid_n`-square
/// grid, bandwidths by Scott's rule.
pub fn kde2d(x: &[f64], y: &[f64], grid_n: usize) -> Result<Density2d> {
    if x.len() != y.len() || x.len() < 2 {
        return Err(Error::Data(format!(
            "bivariate density needs matched samples of length >= 2, got {} and {}",
            x.len(),
            y.len()
        )));
    }
    if grid_n < 4 {
        return Err(Error::Config(format!("density grid needs >= 4 points, got {grid_n}")));
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(Error::Data("non-finite sample in density estimate".into()));
    }
    let n = x.len() as f64;
    let sd = |v: &[f64]| -> f64 {
        let m = v.iter().sum::<f64>() / n;
        (v.iter().map(|a| (a - m).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    };
    let range = |v: &[f64]| -> (f64, f64) {
        v.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &a| (lo.min(a), hi.max(a)))
    };
    let (xlo, xhi) = range(x);
    let (ylo, yhi) = range(y);
    let hx = (sd(x) * n.powf(-1.0 / 6.0)).max(1e-9 * (xhi - xlo).max(1e-12));
    let hy = (sd(y) * n.powf(-1.0 / 6.0)).max(1e-9 * (yhi - ylo).max(1e-12));

    let pad = 3.0;
    let xs: Vec<f64> = (0..grid_n)
        .map(|i| {
            let lo = xlo - pad * hx;
            let hi = xhi + pad * hx;
            lo + (hi - lo) * i as f64 / (grid_n - 1) as f64
        })
        .collect();
    let ys: Vec<f64> = (0..grid_n)
        .map(|i| {
            let lo = ylo - pad * hy;
            let hi = yhi + pad * hy;
            lo + (hi - lo) * i as f64 / (grid_n - 1) as f64
        })
        .collect();

    let norm = 1.0 / (n * 2.0 * std::f64::consts::PI * hx * hy);
    let mut values = vec![0.0; grid_n * grid_n];
    for (xi, yi) in x.iter().zip(y) {
        for (iy, gy) in ys.iter().enumerate() {
            let dy = (gy - yi) / hy;
            if dy.abs() > 6.0 {
                continue;
            }
            let ey = (-0.5 * dy * dy).exp();
            for (ix, gx) in xs.iter().enumerate() {
                let dx = (gx - xi) / hx;
                if dx.abs() > 6.0 {
                    continue;
                }
                values[iy * grid_n + ix] += norm * ey * (-0.5 * dx * dx).exp();
            }
        }
    }
    Ok(Density2d { xs, ys, values })
}
