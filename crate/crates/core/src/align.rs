//! Elastic alignment of curves by dynamic programming over warping functions.
//!
//! Alignment happens in square-root velocity space, where warping acts by
//! isometry: `group_action` applies a warp to a transformed curve, `dp_align`
//! finds the warp minimizing the elastic misfit on a monotone lattice, and
//! `decompose_ensemble` splits every curve of an ensemble into an aligned
//! (amplitude) part and a warp (phase) part expressed as a shooting vector.

use crate::grid::{fd_derivative, trapezoid, Grid, GridFunction, Srvf};
use crate::sphere::{gamma_to_shooting, ShootingVector};
use crate::{Error, Result};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// Strict-increase step used by the monotonicity repair.
const REPAIR_EPS: f64 = 1e-8;

/// Lattice slope steps (Δref, Δmov): coprime pairs with entries in 1..=4.
pub const DP_STEPS: [(usize, usize); 11] = [
    (1, 1),
    (1, 2),
    (1, 3),
    (1, 4),
    (2, 1),
    (3, 1),
    (4, 1),
    (2, 3),
    (3, 2),
    (3, 4),
    (4, 3),
];

/// Monotone reparameterization of [0, 1]: γ(0) = 0, γ(1) = 1, strictly
/// increasing (enforced by an ε-repair on construction).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WarpingFunction {
    pub grid: Grid,
    values: Vec<f64>,
}

impl WarpingFunction {
    /// Validate and repair raw warp samples. Input must be nondecreasing up
    /// to rounding; ties are ε-separated and the result renormalized so the
    /// endpoints are exactly 0 and 1.
    pub fn new(grid: Grid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} values on a {}-point grid",
                values.len(),
                grid.len()
            )));
        }
        if grid.lo() != 0.0 || grid.hi() != 1.0 {
            return Err(Error::InvalidGrid("warp grid must cover [0, 1]".into()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Data("non-finite warp value".into()));
        }
        if values.windows(2).any(|w| w[1] < w[0] - 1e-9) {
            return Err(Error::NotMonotone("warp values decrease".into()));
        }
        let n = values.len();
        let mut v: Vec<f64> = values;
        let span = v[n - 1] - v[0];
        if !(span > 0.0) {
            return Err(Error::NotMonotone("warp has zero total increase".into()));
        }
        let lo = v[0];
        for x in v.iter_mut() {
            *x = ((*x - lo) / span).clamp(0.0, 1.0);
        }
        for i in 1..n {
            if v[i] <= v[i - 1] {
                v[i] = v[i - 1] + REPAIR_EPS;
            }
        }
        let last = v[n - 1];
        if last > 1.0 {
            for x in v.iter_mut() {
                *x /= last;
            }
        }
        v[0] = 0.0;
        v[n - 1] = 1.0;
        Ok(WarpingFunction { grid, values: v })
    }

    /// The identity warp on a [0, 1] grid.
    pub fn identity(grid: Grid) -> WarpingFunction {
        let values = grid.points().to_vec();
        WarpingFunction { grid, values }
    }

    #[inline]
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Evaluate the warp at arbitrary points of [0, 1].
    pub fn eval_at(&self, xs: &[f64]) -> Result<Vec<f64>> {
        let f = GridFunction::new(self.grid.clone(), self.values.clone())?;
        f.eval_at(xs)
    }

    /// Inverse warp on the same grid (monotone interpolation of the swapped
    /// graph).
    pub fn invert(&self) -> Result<WarpingFunction> {
        let swapped_grid = Grid::new(self.values.clone())?;
        let f = GridFunction::new(swapped_grid, self.grid.points().to_vec())?;
        let values = f.eval_at(self.grid.points())?;
        WarpingFunction::new(self.grid.clone(), values)
    }

    /// Composition self ∘ inner.
    pub fn compose(&self, inner: &WarpingFunction) -> Result<WarpingFunction> {
        if self.grid != inner.grid {
            return Err(Error::ShapeMismatch("composing warps on different grids".into()));
        }
        let values = self.eval_at(inner.values())?;
        WarpingFunction::new(self.grid.clone(), values)
    }

    /// Largest deviation from the identity warp.
    pub fn sup_distance_to_identity(&self) -> f64 {
        self.grid
            .points()
            .iter()
            .zip(&self.values)
            .map(|(&t, &v)| (v - t).abs())
            .fold(0.0, f64::max)
    }
}

/// One pairwise alignment: the warp, the warped curve, and the residual
/// elastic misfit.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AlignmentResult {
    pub gamma: WarpingFunction,
    pub aligned: GridFunction,
    pub amplitude_dist: f64,
    pub penalty_lambda: f64,
}

/// An ensemble split into amplitude and phase parts. `warps[j]` carries the
/// aligned curve back to the raw one (aligned ∘ warp ≈ curve), and
/// `shooting_vectors[j]` is that warp's tangent representation.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DecomposedEnsemble {
    pub reference: GridFunction,
    pub aligned_curves: Vec<GridFunction>,
    pub warps: Vec<WarpingFunction>,
    pub shooting_vectors: Vec<ShootingVector>,
    pub inputs: Vec<Vec<f64>>,
}

/// Apply a warp to a transformed curve: (q ∘ γ) · sqrt(γ̇). The grid, anchor,
/// and window carry over unchanged.
pub fn group_action(q: &Srvf, gamma: &WarpingFunction) -> Result<Srvf> {
    if q.grid != gamma.grid {
        return Err(Error::ShapeMismatch("group action across different grids".into()));
    }
    let slope = fd_derivative(&gamma.grid, gamma.values());
    let qf = GridFunction::new(q.grid.clone(), q.values().to_vec())?;
    let composed = qf.eval_at(gamma.values())?;
    let values: Vec<f64> = composed
        .iter()
        .zip(&slope)
        .map(|(&qv, &s)| qv * s.max(0.0).sqrt())
        .collect();
    let mut out = Srvf::new(q.grid.clone(), values, q.anchor)?;
    out.window = q.window;
    Ok(out)
}

/// Linear interpolation of tabulated values at a single point (used inside
/// the DP cost, where the lattice visits off-node positions).
fn lerp_at(ts: &[f64], vs: &[f64], x: f64) -> f64 {
    let n = ts.len();
    if x <= ts[0] {
        return vs[0];
    }
    if x >= ts[n - 1] {
        return vs[n - 1];
    }
    let idx = ts.partition_point(|&t| t <= x).min(n - 1);
    let (i0, i1) = (idx - 1, idx);
    let w = (x - ts[i0]) / (ts[i1] - ts[i0]);
    vs[i0] + w * (vs[i1] - vs[i0])
}

/// Cost of one lattice segment from node (i, j) to (i+p, j+q): trapezoidal
/// misfit over the spanned reference nodes plus the slope penalty.
fn segment_cost(
    t: &[f64],
    q_ref: &[f64],
    q_mov: &[f64],
    i: usize,
    j: usize,
    p: usize,
    q: usize,
    lambda: f64,
) -> f64 {
    let dtr = t[i + p] - t[i];
    let dtm = t[j + q] - t[j];
    let slope = dtm / dtr;
    let sq = slope.sqrt();
    let mut acc = 0.0;
    let mut prev = {
        let gm = lerp_at(t, q_mov, t[j]);
        let r = q_ref[i] - gm * sq;
        r * r
    };
    for k in 1..=p {
        let tk = t[i + k];
        let gk = t[j] + slope * (tk - t[i]);
        let gm = lerp_at(t, q_mov, gk);
        let r = q_ref[i + k] - gm * sq;
        let cur = r * r;
        acc += 0.5 * (tk - t[i + k - 1]) * (prev + cur);
        prev = cur;
    }
    acc + lambda * (sq - 1.0) * (sq - 1.0) * dtr
}

/// Run the lattice DP; returns the optimal path nodes and its total cost.
fn dp_solve(t: &[f64], q_ref: &[f64], q_mov: &[f64], lambda: f64) -> (Vec<(usize, usize)>, f64) {
    let n = t.len();
    let mut cost = vec![f64::INFINITY; n * n];
    let mut parent = vec![u8::MAX; n * n];
    cost[0] = 0.0;
    for i in 0..n {
        for j in 0..n {
            let c = cost[i * n + j];
            if !c.is_finite() {
                continue;
            }
            for (step_idx, &(p, q)) in DP_STEPS.iter().enumerate() {
                let (ni, nj) = (i + p, j + q);
                if ni >= n || nj >= n {
                    continue;
                }
                let nc = c + segment_cost(t, q_ref, q_mov, i, j, p, q, lambda);
                if nc < cost[ni * n + nj] {
                    cost[ni * n + nj] = nc;
                    parent[ni * n + nj] = step_idx as u8;
                }
            }
        }
    }
    let mut path = vec![(n - 1, n - 1)];
    let (mut i, mut j) = (n - 1, n - 1);
    while i > 0 || j > 0 {
        let (p, q) = DP_STEPS[parent[i * n + j] as usize];
        i -= p;
        j -= q;
        path.push((i, j));
    }
    path.reverse();
    (path, cost[n * n - 1])
}

fn check_alignment_inputs(q_ref: &Srvf, q_mov: &Srvf, lambda: f64) -> Result<()> {
    if q_ref.grid != q_mov.grid {
        return Err(Error::ShapeMismatch("aligning across different grids".into()));
    }
    if !(lambda >= 0.0) {
        return Err(Error::Config(format!("negative alignment penalty {lambda}")));
    }
    Ok(())
}

/// The exact optimum of the lattice search, before any smoothing.
#[derive(Debug, Clone)]
pub struct LatticeAlignment {
    /// Piecewise-linear warp through the optimal path's nodes.
    pub warp: WarpingFunction,
    /// Visited lattice nodes as (reference index, moving index).
    pub path: Vec<(usize, usize)>,
    /// Total cost of the optimal path.
    pub cost: f64,
}

/// Run the lattice dynamic program and return its exact solution: the
/// optimal path, the piecewise-linear warp through it, and the cost.
pub fn dp_align_lattice(q_ref: &Srvf, q_mov: &Srvf, lambda: f64) -> Result<LatticeAlignment> {
    check_alignment_inputs(q_ref, q_mov, lambda)?;
    let t = q_ref.grid.points();
    let (path, cost) = dp_solve(t, q_ref.values(), q_mov.values(), lambda);
    // Piecewise-linear interpolation of the lattice path onto the full grid.
    let path_t: Vec<f64> = path.iter().map(|&(i, _)| t[i]).collect();
    let path_g: Vec<f64> = path.iter().map(|&(_, j)| t[j]).collect();
    let gamma: Vec<f64> = t.iter().map(|&x| lerp_at(&path_t, &path_g, x)).collect();
    let warp = WarpingFunction::new(q_ref.grid.clone(), gamma)?;
    Ok(LatticeAlignment { warp, path, cost })
}

/// Cost of a caller-supplied lattice path under the same functional the
/// dynamic program minimizes, accumulated in path order. The path must run
/// corner to corner using admissible steps only.
pub fn lattice_path_cost(
    q_ref: &Srvf,
    q_mov: &Srvf,
    lambda: f64,
    path: &[(usize, usize)],
) -> Result<f64> {
    check_alignment_inputs(q_ref, q_mov, lambda)?;
    let t = q_ref.grid.points();
    let n = t.len();
    if path.first() != Some(&(0, 0)) || path.last() != Some(&(n - 1, n - 1)) {
        return Err(Error::Config("path must run corner to corner".into()));
    }
    let mut acc = 0.0;
    for w in path.windows(2) {
        let (i, j) = w[0];
        let (ni, nj) = w[1];
        let step = (ni.wrapping_sub(i), nj.wrapping_sub(j));
        if !DP_STEPS.contains(&step) {
            return Err(Error::Config(format!(
                "step ({i},{j}) -> ({ni},{nj}) outside the admissible set"
            )));
        }
        acc += segment_cost(t, q_ref.values(), q_mov.values(), i, j, step.0, step.1, lambda);
    }
    Ok(acc)
}

/// Find the warp γ minimizing ‖q_ref − (q_mov ∘ γ)√γ̇‖² + λ‖√γ̇ − 1‖² over a
/// monotone lattice with bounded slopes, then lightly smooth and repair it.
pub fn dp_align(q_ref: &Srvf, q_mov: &Srvf, lambda: f64) -> Result<WarpingFunction> {
    let lattice = dp_align_lattice(q_ref, q_mov, lambda)?;
    let gamma = lattice.warp.values();
    // One smoothing pass, endpoints pinned, preserves monotonicity.
    let n = gamma.len();
    let mut smoothed = gamma.to_vec();
    for i in 1..n - 1 {
        smoothed[i] = 0.25 * (gamma[i - 1] + 2.0 * gamma[i] + gamma[i + 1]);
    }
    WarpingFunction::new(q_ref.grid.clone(), smoothed)
}

/// Squared elastic distance after optimal alignment:
/// ‖q_ref − (q_mov ∘ γ*)√γ̇*‖².
pub fn amplitude_distance(q_ref: &Srvf, q_mov: &Srvf, lambda: f64) -> Result<f64> {
    let gamma = dp_align(q_ref, q_mov, lambda)?;
    let warped = group_action(q_mov, &gamma)?;
    let diff: Vec<f64> = q_ref
        .values()
        .iter()
        .zip(warped.values())
        .map(|(a, b)| (a - b) * (a - b))
        .collect();
    Ok(trapezoid(&q_ref.grid, &diff))
}

/// Apply a warp to a curve in its original time window:
/// returns t ↦ f(w(γ(s(t)))) sampled on f's grid, where s rescales the window
/// to [0, 1] and w maps back.
pub fn apply_warp(f: &GridFunction, gamma: &WarpingFunction) -> Result<GridFunction> {
    let (unit, (lo, hi)) = f.grid.rescaled_to_unit();
    let gvals: Vec<f64> = if gamma.grid.len() == unit.len()
        && gamma
            .grid
            .points()
            .iter()
            .zip(unit.points())
            .all(|(&a, &b)| (a - b).abs() < 1e-9)
    {
        gamma.values().to_vec()
    } else {
        gamma.eval_at(unit.points())?
    };
    let span = hi - lo;
    let targets: Vec<f64> = gvals
        .iter()
        .map(|&g| lo + span * g.clamp(0.0, 1.0))
        .collect();
    let values = f.eval_at(&targets)?;
    GridFunction::new(f.grid.clone(), values)
}

/// Align one curve to a reference sharing its grid.
pub fn align_pair(
    reference: &GridFunction,
    curve: &GridFunction,
    lambda: f64,
) -> Result<AlignmentResult> {
    if reference.grid != curve.grid {
        return Err(Error::ShapeMismatch("aligning curves on different grids".into()));
    }
    let q_ref = crate::grid::to_srvf(reference);
    let q_mov = crate::grid::to_srvf(curve);
    let gamma = dp_align(&q_ref, &q_mov, lambda)?;
    let warped = group_action(&q_mov, &gamma)?;
    let diff: Vec<f64> = q_ref
        .values()
        .iter()
        .zip(warped.values())
        .map(|(a, b)| (a - b) * (a - b))
        .collect();
    let amplitude_dist = trapezoid(&q_ref.grid, &diff);
    let aligned = apply_warp(curve, &gamma)?;
    Ok(AlignmentResult {
        gamma,
        aligned,
        amplitude_dist,
        penalty_lambda: lambda,
    })
}

/// Decompose an ensemble of curves against a shared reference: align each
/// curve, then express its phase as the shooting vector of the warp that
/// carries the aligned curve back to the raw one.
pub fn decompose_ensemble(
    reference: &GridFunction,
    curves: &[GridFunction],
    inputs: &[Vec<f64>],
    lambda: f64,
) -> Result<DecomposedEnsemble> {
    if curves.is_empty() {
        return Err(Error::Data("empty ensemble".into()));
    }
    if inputs.len() != curves.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} input rows for {} curves",
            inputs.len(),
            curves.len()
        )));
    }
    let width = inputs[0].len();
    if inputs.iter().any(|row| row.len() != width) {
        return Err(Error::ShapeMismatch("ragged input matrix".into()));
    }
    if curves.iter().any(|c| c.grid != reference.grid) {
        return Err(Error::ShapeMismatch("ensemble curves on different grids".into()));
    }
    let parts: Vec<(GridFunction, WarpingFunction, ShootingVector)> = curves
        .par_iter()
        .map(|curve| {
            let res = align_pair(reference, curve, lambda)?;
            let back_warp = res.gamma.invert()?;
            let shooting = gamma_to_shooting(&back_warp)?;
            Ok((res.aligned, back_warp, shooting))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut aligned_curves = Vec::with_capacity(parts.len());
    let mut warps = Vec::with_capacity(parts.len());
    let mut shooting_vectors = Vec::with_capacity(parts.len());
    for (a, w, v) in parts {
        aligned_curves.push(a);
        warps.push(w);
        shooting_vectors.push(v);
    }
    Ok(DecomposedEnsemble {
        reference: reference.clone(),
        aligned_curves,
        warps,
        shooting_vectors,
        inputs: inputs.to_vec(),
    })
}
