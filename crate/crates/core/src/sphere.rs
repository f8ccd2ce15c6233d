//! Geometry of warping functions on the unit Hilbert sphere.
//!
//! A warp γ is represented by the square root of its slope, ψ = sqrt(γ̇),
//! which lives on the positive orthant of the unit sphere in L². Distances
//! are arc lengths, and the exponential map at the identity (ψ ≡ 1) carries
//! tangent "shooting" vectors to warps and back. Calibration works in the
//! flat tangent space and maps to warps only when curves are reconstructed.

use crate::align::WarpingFunction;
use crate::grid::{cumulative_trapezoid, fd_derivative, trapezoid, Grid};
use crate::{Error, Result};
use serde::{Deserialize, Serialize};

/// Threshold below which trig ratios switch to series expansions.
const SERIES_CUTOFF: f64 = 1e-4;
/// Slack kept away from the antipode at distance π.
const ANTIPODE_MARGIN: f64 = 1e-6;

/// Square root of a warp's slope, renormalized onto the unit sphere.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SrsfPsi {
    pub grid: Grid,
    values: Vec<f64>,
}

impl SrsfPsi {
    /// Wrap raw ψ samples: negatives are clamped to zero (the positive
    /// orthant) and the result is renormalized to unit L² norm.
    pub fn new(grid: Grid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} values on a {}-point grid",
                values.len(),
                grid.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Data("non-finite psi value".into()));
        }
        let clamped: Vec<f64> = values.iter().map(|&v| v.max(0.0)).collect();
        let sq: Vec<f64> = clamped.iter().map(|&v| v * v).collect();
        let norm2 = trapezoid(&grid, &sq);
        if !(norm2 > 0.0) {
            return Err(Error::Numerical("psi has zero norm".into()));
        }
        let scale = norm2.sqrt();
        if (scale - 1.0).abs() > 1e-10 {
            log::debug!("renormalizing psi by factor {:.3e}", 1.0 / scale);
        }
        Ok(SrsfPsi {
            grid,
            values: clamped.iter().map(|&v| v / scale).collect(),
        })
    }

    #[inline]
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Trapezoidal inner product with another ψ on the same grid.
    pub fn inner_product(&self, other: &SrsfPsi) -> Result<f64> {
        if self.grid != other.grid {
            return Err(Error::ShapeMismatch("psi grids differ".into()));
        }
        let prod: Vec<f64> = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| a * b)
            .collect();
        Ok(trapezoid(&self.grid, &prod))
    }
}

/// Tangent vector at the identity warp: mean-free and shorter than the
/// injectivity radius π.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShootingVector {
    pub grid: Grid,
    values: Vec<f64>,
}

impl ShootingVector {
    /// Wrap raw tangent samples, enforcing tangency (∫v dt = 0 within 1e-6)
    /// and the injectivity bound ‖v‖ < π.
    pub fn new(grid: Grid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} values on a {}-point grid",
                values.len(),
                grid.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Data("non-finite shooting-vector value".into()));
        }
        let mean = trapezoid(&grid, &values);
        if mean.abs() > 1e-6 {
            return Err(Error::NotTangent(format!(
                "shooting vector integrates to {mean:.3e}, not 0"
            )));
        }
        let sq: Vec<f64> = values.iter().map(|&v| v * v).collect();
        let norm = trapezoid(&grid, &sq).max(0.0).sqrt();
        if norm >= std::f64::consts::PI {
            return Err(Error::InjectivityRadius(format!(
                "shooting vector norm {norm:.4} ≥ π"
            )));
        }
        Ok(ShootingVector { grid, values })
    }

    /// Project arbitrary samples onto the tangent space (subtract the mean)
    /// before wrapping; still enforces the norm bound.
    pub fn projected(grid: Grid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} values on a {}-point grid",
                values.len(),
                grid.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Data("non-finite shooting-vector value".into()));
        }
        let mean = trapezoid(&grid, &values) / grid.span();
        let centered: Vec<f64> = values.iter().map(|&v| v - mean).collect();
        ShootingVector::new(grid, centered)
    }

    #[inline]
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Trapezoidal L² norm.
    pub fn norm(&self) -> f64 {
        let sq: Vec<f64> = self.values.iter().map(|&v| v * v).collect();
        trapezoid(&self.grid, &sq).max(0.0).sqrt()
    }
}

/// ψ = sqrt(γ̇), renormalized to the unit sphere.
///
/// The warp's constructor guarantees increasing values, so a negative slope
/// estimate can only be stencil overshoot at a kink of a piecewise-linear
/// warp (bounded below by -max_slope/6 there); it is clamped, not rejected.
pub fn gamma_to_psi(gamma: &WarpingFunction) -> Result<SrsfPsi> {
    let slope = fd_derivative(&gamma.grid, gamma.values());
    let values: Vec<f64> = slope.iter().map(|&s| s.max(0.0).sqrt()).collect();
    SrsfPsi::new(gamma.grid.clone(), values)
}

/// γ(t) = ∫₀ᵗ ψ² ds, renormalized so γ(1) = 1 exactly.
pub fn psi_to_gamma(psi: &SrsfPsi) -> Result<WarpingFunction> {
    let sq: Vec<f64> = psi.values.iter().map(|&v| v * v).collect();
    let cum = cumulative_trapezoid(&psi.grid, &sq);
    let total = *cum.last().unwrap();
    if !(total > 0.0) {
        return Err(Error::Numerical("psi squares integrate to zero".into()));
    }
    let values: Vec<f64> = cum.iter().map(|&c| (c / total).clamp(0.0, 1.0)).collect();
    WarpingFunction::new(psi.grid.clone(), values)
}

/// Arc-length distance between two warps: arccos⟨ψ₁, ψ₂⟩ ∈ [0, π].
pub fn phase_distance(g1: &WarpingFunction, g2: &WarpingFunction) -> Result<f64> {
    let p1 = gamma_to_psi(g1)?;
    let p2 = gamma_to_psi(g2)?;
    let ip = p1.inner_product(&p2)?;
    Ok(ip.clamp(-1.0, 1.0).acos())
}

/// sin(x)/x with a series fallback for small arguments.
fn sinc(x: f64) -> f64 {
    if x.abs() < SERIES_CUTOFF {
        let x2 = x * x;
        1.0 - x2 / 6.0 + x2 * x2 / 120.0
    } else {
        x.sin() / x
    }
}

/// x/sin(x) with a series fallback for small arguments.
fn inv_sinc(x: f64) -> f64 {
    if x.abs() < SERIES_CUTOFF {
        let x2 = x * x;
        1.0 + x2 / 6.0 + 7.0 * x2 * x2 / 360.0
    } else {
        x / x.sin()
    }
}

/// Exponential map at the identity: v ↦ cos(‖v‖)·1 + sin(‖v‖)·v/‖v‖.
pub fn exp_map_identity(v: &ShootingVector) -> Result<SrsfPsi> {
    let kappa = v.norm();
    if kappa >= std::f64::consts::PI {
        return Err(Error::InjectivityRadius(format!(
            "shooting vector norm {kappa:.4} ≥ π"
        )));
    }
    let c = kappa.cos();
    let s = sinc(kappa);
    let values: Vec<f64> = v.values.iter().map(|&vi| c + s * vi).collect();
    SrsfPsi::new(v.grid.clone(), values)
}

/// Inverse exponential map at the identity:
/// ψ ↦ (κ/sin κ)(ψ − cos(κ)·1) with κ = arccos⟨1, ψ⟩.
pub fn inv_exp_map(psi: &SrsfPsi) -> Result<ShootingVector> {
    let ip = trapezoid(&psi.grid, &psi.values).clamp(-1.0, 1.0);
    let kappa = ip.acos();
    if kappa >= std::f64::consts::PI - ANTIPODE_MARGIN {
        return Err(Error::InjectivityRadius(format!(
            "psi is within {ANTIPODE_MARGIN:.0e} of the antipode (distance {kappa:.6})"
        )));
    }
    let factor = inv_sinc(kappa);
    let values: Vec<f64> = psi.values.iter().map(|&p| factor * (p - ip)).collect();
    ShootingVector::new(psi.grid.clone(), values)
}

/// Full transform warp → tangent vector at the identity.
pub fn gamma_to_shooting(gamma: &WarpingFunction) -> Result<ShootingVector> {
    inv_exp_map(&gamma_to_psi(gamma)?)
}

/// Full transform tangent vector → warp.
pub fn shooting_to_gamma(v: &ShootingVector) -> Result<WarpingFunction> {
    psi_to_gamma(&exp_map_identity(v)?)
}
