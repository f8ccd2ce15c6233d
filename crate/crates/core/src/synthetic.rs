//! Ground-truth generators for the simulated studies, an analytic
//! pressure-density curve, and reproducible design sampling.

use crate::grid::{Grid, GridFunction};
use crate::seed::stream_rng;
use crate::{Error, Result};
use rand::Rng;
use serde::{Deserialize, Serialize};

/// Shared bump width for both simulated studies.
const BUMP_SIGMA: f64 = 0.05;

/// Number of model runs in the first simulated study.
pub const EXAMPLE1_RUNS: usize = 100;
/// Number of model runs in the second simulated study.
pub const EXAMPLE2_RUNS: usize = 300;
/// True calibration inputs for the first study.
pub const EXAMPLE1_TRUTH: [f64; 3] = [0.1028, 0.5930, 0.0];
/// True calibration inputs for the second study.
pub const EXAMPLE2_TRUTH: [f64; 2] = [0.3, 0.2];

/// Gaussian bump with unit-mass pdf scaling: height·N(t; center, σ²).
fn gauss_bump(t: f64, center: f64, height: f64) -> f64 {
    height / (BUMP_SIGMA * (2.0 * std::f64::consts::PI).sqrt())
        * (-0.5 * ((t - center) / BUMP_SIGMA).powi(2)).exp()
}

/// Default evaluation grid for the simulated studies: 101 points on [0, 1].
pub fn default_grid() -> Grid {
    Grid::uniform(101, 0.0, 1.0).unwrap()
}

/// First-study model curve. `u` has three entries in the unit cube: the
/// first moves the bump center through sin(2πu₀²)/4 − u₀/10 + 1/2, the
/// second scales the height, and the third is inert.
pub fn example1_curve(grid: &Grid, u: &[f64]) -> Result<GridFunction> {
    if u.len() != 3 {
        return Err(Error::ShapeMismatch(format!(
            "expected 3 inputs, got {}",
            u.len()
        )));
    }
    let center = (2.0 * std::f64::consts::PI * u[0] * u[0]).sin() / 4.0 - u[0] / 10.0 + 0.5;
    GridFunction::from_fn(grid.clone(), |t| gauss_bump(t, center, u[1]))
}

/// Second-study model curve: bump centered at u₀ + 0.1 with height u₁.
pub fn example2_curve(grid: &Grid, u: &[f64]) -> Result<GridFunction> {
    if u.len() < 2 {
        return Err(Error::ShapeMismatch(format!(
            "expected at least 2 inputs, got {}",
            u.len()
        )));
    }
    GridFunction::from_fn(grid.clone(), |t| gauss_bump(t, u[0] + 0.1, u[1]))
}

/// Second-study observation: the truth curve with its center offset by 0.3
/// instead of the model's 0.1, leaving a 0.2 timing discrepancy.
pub fn example2_observation(grid: &Grid) -> GridFunction {
    let [u0, u1] = EXAMPLE2_TRUTH;
    GridFunction::from_fn(grid.clone(), |t| gauss_bump(t, u0 + 0.3, u1)).unwrap()
}

/// Vinet pressure-density relation:
/// P(ρ) = 3B₀ (1−η)/η² · exp(1.5(B₀′−1)(1−η)) with η = (ρ₀/ρ)^(1/3).
pub fn vinet_pressure(rho: f64, rho0: f64, b0: f64, b0_prime: f64) -> Result<f64> {
    if !(rho > 0.0) || !(rho0 > 0.0) {
        return Err(Error::Data(format!(
            "nonpositive density (rho {rho}, rho0 {rho0})"
        )));
    }
    let eta = (rho0 / rho).cbrt();
    Ok(3.0 * b0 * (1.0 - eta) / (eta * eta) * (1.5 * (b0_prime - 1.0) * (1.0 - eta)).exp())
}

/// How design points fill the cube.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DesignKind {
    /// Independent uniform draws per dimension.
    Uniform,
    /// Latin hypercube: each 1-D stratum occupied exactly once.
    LatinHypercube,
}

/// A seeded design matrix with every entry inside the unit cube.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SyntheticDesign {
    pub inputs: Vec<Vec<f64>>,
    pub seed: u64,
}

/// Draw `n` design points with per-dimension ranges (each within [0, 1]),
/// reproducibly from the seed.
pub fn sample_design(
    n: usize,
    ranges: &[(f64, f64)],
    kind: DesignKind,
    seed: u64,
) -> Result<SyntheticDesign> {
    if n == 0 || ranges.is_empty() {
        return Err(Error::Config("design needs n ≥ 1 and p ≥ 1".into()));
    }
    for &(lo, hi) in ranges {
        if !(0.0..=1.0).contains(&lo) || !(0.0..=1.0).contains(&hi) || hi <= lo {
            return Err(Error::Config(format!(
                "design range [{lo}, {hi}] must sit inside the unit interval"
            )));
        }
    }
    let mut rng = stream_rng(seed, "design");
    let p = ranges.len();
    let mut inputs = vec![vec![0.0; p]; n];
    match kind {
        DesignKind::Uniform => {
            for row in inputs.iter_mut() {
                for (x, &(lo, hi)) in row.iter_mut().zip(ranges) {
                    *x = lo + (hi - lo) * rng.gen::<f64>();
                }
            }
        }
        DesignKind::LatinHypercube => {
            for (d, &(lo, hi)) in ranges.iter().enumerate() {
                let mut strata: Vec<usize> = (0..n).collect();
                // Fisher-Yates shuffle driven by the same stream.
                for i in (1..n).rev() {
                    let j = rng.gen_range(0..=i);
                    strata.swap(i, j);
                }
                for (row, &s) in inputs.iter_mut().zip(&strata) {
                    let frac = (s as f64 + rng.gen::<f64>()) / n as f64;
                    row[d] = lo + (hi - lo) * frac;
                }
            }
        }
    }
    Ok(SyntheticDesign { inputs, seed })
}

/// Everything the first simulated study needs: design, model runs, and the
/// noiseless observation generated at the true inputs.
pub fn example1_ensemble(
    grid: &Grid,
    seed: u64,
) -> Result<(SyntheticDesign, Vec<GridFunction>, GridFunction)> {
    let ranges = [(0.0, 1.0); 3];
    let design = sample_design(EXAMPLE1_RUNS, &ranges, DesignKind::Uniform, seed)?;
    let curves: Vec<GridFunction> = design
        .inputs
        .iter()
        .map(|u| example1_curve(grid, u))
        .collect::<Result<_>>()?;
    let observation = example1_curve(grid, &EXAMPLE1_TRUTH)?;
    Ok((design, curves, observation))
}

/// Everything the second simulated study needs. The design carries two
/// active columns drawn U[0, 0.3] plus one inert U[0, 1] column.
pub fn example2_ensemble(
    grid: &Grid,
    seed: u64,
) -> Result<(SyntheticDesign, Vec<GridFunction>, GridFunction)> {
    let ranges = [(0.0, 0.3), (0.0, 0.3), (0.0, 1.0)];
    let design = sample_design(EXAMPLE2_RUNS, &ranges, DesignKind::Uniform, seed)?;
    let curves: Vec<GridFunction> = design
        .inputs
        .iter()
        .map(|u| example2_curve(grid, &u[..2]))
        .collect::<Result<_>>()?;
    Ok((design, curves, example2_observation(grid)))
}
