//! Bayesian calibration against aligned curves and shooting vectors: the
//! two-block Gaussian likelihood, discrepancy bases, priors, an adaptive
//! Metropolis-within-Gibbs sampler, and posterior prediction in data space.

use crate::align::apply_warp;
use crate::emulator::Emulator;
use crate::grid::{Grid, GridFunction};
use crate::sphere::{shooting_to_gamma, ShootingVector};
use crate::{Error, Result};
use nalgebra::{Cholesky, DMatrix, DVector};
use rand::Rng;
use rand_distr::Distribution;
use serde::{Deserialize, Serialize};
use std::sync::Arc;

/// Consecutive rejected draws after which sampling aborts.
pub const STALL_LIMIT: usize = 1000;

// ---------------------------------------------------------------------------
// Priors
// ---------------------------------------------------------------------------

/// Scalar prior distribution for calibration and noise parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Prior {
    Uniform { lo: f64, hi: f64 },
    Normal { mean: f64, sd: f64 },
    InverseGamma { shape: f64, scale: f64 },
}

impl Prior {
    pub fn uniform(lo: f64, hi: f64) -> Result<Prior> {
        if !(lo.is_finite() && hi.is_finite() && lo < hi) {
            return Err(Error::Config(format!("uniform prior needs lo < hi, got [{lo}, {hi}]")));
        }
        Ok(Prior::Uniform { lo, hi })
    }

    pub fn normal(mean: f64, sd: f64) -> Result<Prior> {
        if !(mean.is_finite() && sd.is_finite() && sd > 0.0) {
            return Err(Error::Config(format!("normal prior needs sd > 0, got {sd}")));
        }
        Ok(Prior::Normal { mean, sd })
    }

    pub fn inverse_gamma(shape: f64, scale: f64) -> Result<Prior> {
        if !(shape.is_finite() && scale.is_finite() && shape > 0.0 && scale > 0.0) {
            return Err(Error::Config(format!(
                "inverse-gamma prior needs positive shape and scale, got ({shape}, {scale})"
            )));
        }
        Ok(Prior::InverseGamma { shape, scale })
    }

    /// Natural-log density at `x`; `-inf` outside the support.
    pub fn log_pdf(&self, x: f64) -> f64 {
        match *self {
            Prior::Uniform { lo, hi } => {
                if x < lo || x > hi {
                    f64::NEG_INFINITY
                } else {
                    -(hi - lo).ln()
                }
            }
            Prior::Normal { mean, sd } => {
                let z = (x - mean) / sd;
                -0.5 * z * z - sd.ln() - 0.5 * (2.0 * std::f64::consts::PI).ln()
            }
            Prior::InverseGamma { shape, scale } => {
                if x <= 0.0 {
                    f64::NEG_INFINITY
                } else {
                    shape * scale.ln() - libm::lgamma(shape) - (shape + 1.0) * x.ln() - scale / x
                }
            }
        }
    }

    pub fn in_support(&self, x: f64) -> bool {
        self.log_pdf(x).is_finite()
    }

    pub fn sample(&self, rng: &mut impl Rng) -> f64 {
        match *self {
            Prior::Uniform { lo, hi } => lo + (hi - lo) * rng.gen::<f64>(),
            Prior::Normal { mean, sd } => {
                let z: f64 = rand_distr::StandardNormal.sample(rng);
                mean + sd * z
            }
            Prior::InverseGamma { shape, scale } => {
                let g = rand_distr::Gamma::new(shape, 1.0).expect("validated shape");
                scale / g.sample(rng)
            }
        }
    }

    /// Deterministic starting point: midpoint, mean, or mode.
    pub fn initial_point(&self) -> f64 {
        match *self {
            Prior::Uniform { lo, hi } => 0.5 * (lo + hi),
            Prior::Normal { mean, .. } => mean,
            Prior::InverseGamma { shape, scale } => scale / (shape + 1.0),
        }
    }

    /// Characteristic width used to seed the proposal covariance.
    fn width(&self) -> f64 {
        match *self {
            Prior::Uniform { lo, hi } => hi - lo,
            Prior::Normal { sd, .. } => 4.0 * sd,
            Prior::InverseGamma { shape, scale } => scale / (shape + 1.0),
        }
    }
}

// ---------------------------------------------------------------------------
// Discrepancy bases
// ---------------------------------------------------------------------------

/// Linear discrepancy model δ(t) = Σ_k d_k φ_k(t) with independent Gaussian
/// priors on the coefficients.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DiscrepancyBasis {
    columns: Vec<GridFunction>,
    coeff_prior_sd: Vec<f64>,
    pub per_experiment: bool,
}

impl DiscrepancyBasis {
    pub fn new(
        columns: Vec<GridFunction>,
        coeff_prior_sd: Vec<f64>,
        per_experiment: bool,
    ) -> Result<Self> {
        if columns.is_empty() {
            return Err(Error::Config("discrepancy basis needs at least one column".into()));
        }
        let grid = &columns[0].grid;
        if columns.iter().any(|c| c.grid != *grid) {
            return Err(Error::ShapeMismatch("basis columns on differing grids".into()));
        }
        if coeff_prior_sd.len() != columns.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} prior widths for {} basis columns",
                coeff_prior_sd.len(),
                columns.len()
            )));
        }
        if coeff_prior_sd.iter().any(|s| !(*s > 0.0 && s.is_finite())) {
            return Err(Error::Config("coefficient prior widths must be positive".into()));
        }
        Ok(DiscrepancyBasis { columns, coeff_prior_sd, per_experiment })
    }

    pub fn k(&self) -> usize {
        self.columns.len()
    }

    pub fn grid(&self) -> &Grid {
        &self.columns[0].grid
    }

    pub fn columns(&self) -> &[GridFunction] {
        &self.columns
    }

    pub fn coeff_prior_sd(&self) -> &[f64] {
        &self.coeff_prior_sd
    }

    /// δ(t) for one coefficient vector.
    pub fn evaluate(&self, coeffs: &[f64]) -> Result<Vec<f64>> {
        if coeffs.len() != self.k() {
            return Err(Error::ShapeMismatch(format!(
                "{} coefficients for a {}-column basis",
                coeffs.len(),
                self.k()
            )));
        }
        let n = self.grid().len();
        let mut out = vec![0.0; n];
        for (c, col) in coeffs.iter().zip(&self.columns) {
            for (o, v) in out.iter_mut().zip(col.values()) {
                *o += c * v;
            }
        }
        Ok(out)
    }
}

/// Build the time-shift discrepancy basis: indicators of the three outer
/// segments cut by the breakpoints, plus a zero-mean linear ramp on the
/// second segment, all scaled to unit sup-norm.
///
/// The ramp integrates to zero, so it perturbs a shooting vector within the
/// tangent space; the indicator columns need projection before any geometric
/// reconstruction.
pub fn build_shift_discrepancy_basis(
    grid: &Grid,
    breakpoints: [f64; 3],
) -> Result<DiscrepancyBasis> {
    let [b1, b2, b3] = breakpoints;
    let (lo, hi) = (grid.lo(), grid.hi());
    if !(b1 > lo && b1 < b2 && b2 < b3 && b3 < hi) {
        return Err(Error::Config(format!(
            "breakpoints must be strictly increasing inside ({lo}, {hi}), got {breakpoints:?}"
        )));
    }
    let seg1 = GridFunction::from_fn(grid.clone(), move |t| if t < b1 { 1.0 } else { 0.0 })?;
    let ramp = GridFunction::from_fn(grid.clone(), move |t| {
        // Closed at both ends so the two boundary jumps cancel under the
        // trapezoid rule: the column stays mean-free on aligned grids.
        if (b1..=b2).contains(&t) {
            // Linear from -1 at b1 to +1 at b2: zero mean, unit sup-norm.
            2.0 * (t - b1) / (b2 - b1) - 1.0
        } else {
            0.0
        }
    })?;
    let seg3 = GridFunction::from_fn(grid.clone(), move |t| {
        if (b2..b3).contains(&t) {
            1.0
        } else {
            0.0
        }
    })?;
    let seg4 = GridFunction::from_fn(grid.clone(), move |t| if t >= b3 { 1.0 } else { 0.0 })?;
    DiscrepancyBasis::new(vec![seg1, ramp, seg3, seg4], vec![1.0; 4], true)
}

// ---------------------------------------------------------------------------
// Problem definition
// ---------------------------------------------------------------------------

/// One experimental record: observation aligned to itself (identity phase),
/// its shooting vector (zero in that convention), and the experiment's
/// controlled condition vector.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub aligned_obs: GridFunction,
    pub shooting_obs: ShootingVector,
    pub condition: Vec<f64>,
}

/// Forward model: either frozen surrogates or a raw simulator decomposed
/// against a per-experiment reference at every evaluation.
#[derive(Clone)]
pub enum Forward {
    Emulators { aligned: Emulator, shooting: Emulator },
    Simulator {
        model: Arc<dyn Fn(&[f64]) -> Result<GridFunction> + Send + Sync>,
        references: Vec<GridFunction>,
        penalty_lambda: f64,
    },
}

impl std::fmt::Debug for Forward {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Forward::Emulators { .. } => f.write_str("Forward::Emulators"),
            Forward::Simulator { .. } => f.write_str("Forward::Simulator"),
        }
    }
}

/// Full calibration setup; validated once, immutable during sampling.
#[derive(Debug, Clone)]
pub struct CalibrationProblem {
    pub experiments: Vec<Experiment>,
    pub forward: Forward,
    pub theta_dim: usize,
    pub priors: Vec<Prior>,
    pub discrepancy_aligned: Option<DiscrepancyBasis>,
    pub discrepancy_shooting: Option<DiscrepancyBasis>,
}

impl CalibrationProblem {
    pub fn new(
        experiments: Vec<Experiment>,
        forward: Forward,
        theta_dim: usize,
        priors: Vec<Prior>,
        discrepancy_aligned: Option<DiscrepancyBasis>,
        discrepancy_shooting: Option<DiscrepancyBasis>,
    ) -> Result<Self> {
        if experiments.is_empty() {
            return Err(Error::Data("calibration needs at least one experiment".into()));
        }
        if priors.len() != theta_dim {
            return Err(Error::Config(format!(
                "{} priors for {theta_dim} calibration parameters",
                priors.len()
            )));
        }
        let grid = &experiments[0].aligned_obs.grid;
        for e in &experiments {
            if e.aligned_obs.grid != *grid || e.shooting_obs.grid != *grid {
                return Err(Error::ShapeMismatch("experiments on differing grids".into()));
            }
        }
        let cond_dim = experiments[0].condition.len();
        if experiments.iter().any(|e| e.condition.len() != cond_dim) {
            return Err(Error::ShapeMismatch("ragged experiment condition vectors".into()));
        }
        match &forward {
            Forward::Emulators { aligned, shooting } => {
                if aligned.grid() != grid || shooting.grid() != grid {
                    return Err(Error::ShapeMismatch(
                        "surrogate grid differs from observation grid".into(),
                    ));
                }
                let want = cond_dim + theta_dim;
                for (name, em) in [("aligned", aligned), ("shooting", shooting)] {
                    if em.input_ranges().len() != want {
                        return Err(Error::ShapeMismatch(format!(
                            "{name} surrogate takes {} inputs, problem supplies {want}",
                            em.input_ranges().len()
                        )));
                    }
                }
            }
            Forward::Simulator { references, .. } => {
                if references.len() != experiments.len() {
                    return Err(Error::ShapeMismatch(format!(
                        "{} references for {} experiments",
                        references.len(),
                        experiments.len()
                    )));
                }
                if references.iter().any(|r| r.grid != *grid) {
                    return Err(Error::ShapeMismatch(
                        "simulator reference grid differs from observations".into(),
                    ));
                }
            }
        }
        for (name, basis) in [
            ("aligned", discrepancy_aligned.as_ref()),
            ("shooting", discrepancy_shooting.as_ref()),
        ] {
            if let Some(b) = basis {
                if b.grid() != grid {
                    return Err(Error::ShapeMismatch(format!(
                        "{name} discrepancy basis grid differs from observations"
                    )));
                }
            }
        }
        Ok(CalibrationProblem {
            experiments,
            forward,
            theta_dim,
            priors,
            discrepancy_aligned,
            discrepancy_shooting,
        })
    }

    pub fn grid(&self) -> &Grid {
        &self.experiments[0].aligned_obs.grid
    }

    fn log_prior_theta(&self, theta: &[f64]) -> f64 {
        theta.iter().zip(&self.priors).map(|(x, p)| p.log_pdf(*x)).sum()
    }
}

// ---------------------------------------------------------------------------
// Likelihood
// ---------------------------------------------------------------------------

/// Forward predictions for one experiment: mean curves and per-point
/// surrogate variances (zero in simulator mode).
#[derive(Debug, Clone)]
struct BlockPrediction {
    mean_aligned: Vec<f64>,
    var_aligned: Vec<f64>,
    mean_shooting: Vec<f64>,
    var_shooting: Vec<f64>,
}

/// Evaluate the forward model at `theta` for every experiment. `None` means
/// the proposal is infeasible (non-finite simulator output or degenerate
/// decomposition) and the likelihood is -inf.
fn forward_eval(
    problem: &CalibrationProblem,
    theta: &[f64],
) -> Result<Option<Vec<BlockPrediction>>> {
    let mut out = Vec::with_capacity(problem.experiments.len());
    match &problem.forward {
        Forward::Emulators { aligned, shooting } => {
            for e in &problem.experiments {
                let mut input = e.condition.clone();
                input.extend_from_slice(theta);
                let pa = aligned.predict(&input)?;
                let pv = shooting.predict(&input)?;
                out.push(BlockPrediction {
                    mean_aligned: pa.mean.values().to_vec(),
                    var_aligned: pa.pointwise_sd.values().iter().map(|s| s * s).collect(),
                    mean_shooting: pv.mean.values().to_vec(),
                    var_shooting: pv.pointwise_sd.values().iter().map(|s| s * s).collect(),
                });
            }
        }
        Forward::Simulator { model, references, penalty_lambda } => {
            for (e, reference) in problem.experiments.iter().zip(references) {
                let mut input = e.condition.clone();
                input.extend_from_slice(theta);
                let raw = model(&input)?;
                if raw.grid != *problem.grid() {
                    return Err(Error::ShapeMismatch(
                        "simulator returned a curve on the wrong grid".into(),
                    ));
                }
                let res = match crate::align::align_pair(reference, &raw, *penalty_lambda) {
                    Ok(r) => r,
                    Err(err) => {
                        log::warn!("decomposition failed at a proposal: {err}");
                        return Ok(None);
                    }
                };
                let inverse = match res.gamma.invert() {
                    Ok(g) => g,
                    Err(err) => {
                        log::warn!("warp inversion failed at a proposal: {err}");
                        return Ok(None);
                    }
                };
                let v = match crate::sphere::gamma_to_shooting(&inverse) {
                    Ok(v) => v,
                    Err(err) => {
                        log::warn!("shooting map failed at a proposal: {err}");
                        return Ok(None);
                    }
                };
                let n = problem.grid().len();
                out.push(BlockPrediction {
                    mean_aligned: res.aligned.values().to_vec(),
                    var_aligned: vec![0.0; n],
                    mean_shooting: v.values().to_vec(),
                    var_shooting: vec![0.0; n],
                });
            }
        }
    }
    Ok(Some(out))
}

/// Independent-Gaussian block: Σ_j [-(r_j²/τ_j + ln 2πτ_j)/2] with
/// τ_j = σ² + (optionally) the surrogate variance.
fn gaussian_block(resid: &[f64], sigma2: f64, surrogate_var: &[f64], inflate: bool) -> f64 {
    let mut ll = 0.0;
    for (r, v) in resid.iter().zip(surrogate_var) {
        let tau = sigma2 + if inflate { *v } else { 0.0 };
        ll -= 0.5 * (r * r / tau + (2.0 * std::f64::consts::PI * tau).ln());
    }
    ll
}

fn coeff_row<'a>(d: &'a [Vec<f64>], basis: &DiscrepancyBasis, i: usize) -> &'a [f64] {
    if basis.per_experiment {
        &d[i]
    } else {
        &d[0]
    }
}

fn check_coeffs(
    name: &str,
    basis: Option<&DiscrepancyBasis>,
    d: &[Vec<f64>],
    n_exp: usize,
) -> Result<()> {
    match basis {
        None => {
            if !d.is_empty() {
                return Err(Error::ShapeMismatch(format!(
                    "{name} coefficients supplied without a {name} basis"
                )));
            }
        }
        Some(b) => {
            let want_rows = if b.per_experiment { n_exp } else { 1 };
            if d.len() != want_rows || d.iter().any(|row| row.len() != b.k()) {
                return Err(Error::ShapeMismatch(format!(
                    "{name} coefficients must be {want_rows} rows of {}",
                    b.k()
                )));
            }
        }
    }
    Ok(())
}

/// Log-likelihood of the two-block model at one parameter setting.
///
/// Surrogate predictive variance is added per grid point when
/// `inflate_surrogate_variance` is set; with it off the blocks are plain
/// iid Gaussians at the given σ².
#[allow(clippy::too_many_arguments)]
pub fn log_likelihood(
    problem: &CalibrationProblem,
    theta: &[f64],
    sigma2_aligned: f64,
    sigma2_shooting: f64,
    d_aligned: &[Vec<f64>],
    d_shooting: &[Vec<f64>],
    inflate_surrogate_variance: bool,
) -> Result<f64> {
    if theta.len() != problem.theta_dim {
        return Err(Error::ShapeMismatch(format!(
            "{}-dimensional theta for a {}-parameter problem",
            theta.len(),
            problem.theta_dim
        )));
    }
    if !(sigma2_aligned > 0.0 && sigma2_shooting > 0.0) {
        return Err(Error::Config("noise variances must be positive".into()));
    }
    check_coeffs("aligned", problem.discrepancy_aligned.as_ref(), d_aligned, problem.experiments.len())?;
    check_coeffs(
        "shooting",
        problem.discrepancy_shooting.as_ref(),
        d_shooting,
        problem.experiments.len(),
    )?;
    let Some(preds) = forward_eval(problem, theta)? else {
        return Ok(f64::NEG_INFINITY);
    };
    Ok(likelihood_from_predictions(
        problem,
        &preds,
        sigma2_aligned,
        sigma2_shooting,
        d_aligned,
        d_shooting,
        inflate_surrogate_variance,
        true,
    ))
}

#[allow(clippy::too_many_arguments)]
fn likelihood_from_predictions(
    problem: &CalibrationProblem,
    preds: &[BlockPrediction],
    sigma2_aligned: f64,
    sigma2_shooting: f64,
    d_aligned: &[Vec<f64>],
    d_shooting: &[Vec<f64>],
    inflate: bool,
    include_shooting: bool,
) -> f64 {
    let mut ll = 0.0;
    for (i, (e, p)) in problem.experiments.iter().zip(preds).enumerate() {
        let mut resid: Vec<f64> = e
            .aligned_obs
            .values()
            .iter()
            .zip(&p.mean_aligned)
            .map(|(z, m)| z - m)
            .collect();
        if let Some(b) = &problem.discrepancy_aligned {
            let delta = b.evaluate(coeff_row(d_aligned, b, i)).expect("validated coeffs");
            for (r, dv) in resid.iter_mut().zip(&delta) {
                *r -= dv;
            }
        }
        ll += gaussian_block(&resid, sigma2_aligned, &p.var_aligned, inflate);

        if include_shooting {
            let mut resid_v: Vec<f64> = e
                .shooting_obs
                .values()
                .iter()
                .zip(&p.mean_shooting)
                .map(|(z, m)| z - m)
                .collect();
            if let Some(b) = &problem.discrepancy_shooting {
                let delta = b.evaluate(coeff_row(d_shooting, b, i)).expect("validated coeffs");
                for (r, dv) in resid_v.iter_mut().zip(&delta) {
                    *r -= dv;
                }
            }
            ll += gaussian_block(&resid_v, sigma2_shooting, &p.var_shooting, inflate);
        }
    }
    ll
}

// ---------------------------------------------------------------------------
// Sampler
// ---------------------------------------------------------------------------

/// Sampler settings; the defaults reproduce the standard pipeline.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct McmcConfig {
    pub n_iter: usize,
    pub n_burn: usize,
    pub seed: u64,
    /// Initial proposal sd as a fraction of each prior's width.
    pub proposal_scale_init: f64,
    /// Every k-th iteration proposes an independent draw from the prior
    /// (0 disables); keeps multimodal targets mixing.
    pub refresh_every: usize,
    /// Add surrogate predictive variance per grid point in the likelihood.
    pub inflate_surrogate_variance: bool,
    /// Drop the shooting block entirely (amplitude-only calibration).
    pub include_shooting_block: bool,
    /// Inverse-gamma priors for the two noise variances; `None` derives
    /// a prior whose mean is 1% of the block's signal variance.
    pub sigma2_prior_aligned: Option<Prior>,
    pub sigma2_prior_shooting: Option<Prior>,
    /// Fix a noise variance instead of sampling it.
    pub fix_sigma2_aligned: Option<f64>,
    pub fix_sigma2_shooting: Option<f64>,
}

impl Default for McmcConfig {
    fn default() -> Self {
        McmcConfig {
            n_iter: 20_000,
            n_burn: 5_000,
            seed: 0,
            proposal_scale_init: 0.05,
            refresh_every: 10,
            inflate_surrogate_variance: true,
            include_shooting_block: true,
            sigma2_prior_aligned: None,
            sigma2_prior_shooting: None,
            fix_sigma2_aligned: None,
            fix_sigma2_shooting: None,
        }
    }
}

/// Per-block acceptance rates over the whole run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AcceptanceRates {
    pub theta_walk: f64,
    pub theta_refresh: f64,
    pub sigma2_aligned: f64,
    pub sigma2_shooting: f64,
}

/// Retained MCMC output.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PosteriorSamples {
    pub theta: Vec<Vec<f64>>,
    pub sigma2_aligned: Vec<f64>,
    pub sigma2_shooting: Vec<f64>,
    /// Flattened rows (experiment-major) per draw; empty without a basis.
    pub discrepancy_aligned: Vec<Vec<f64>>,
    pub discrepancy_shooting: Vec<Vec<f64>>,
    pub log_posterior: Vec<f64>,
    pub acceptance: AcceptanceRates,
}

fn pooled_variance(values: impl Iterator<Item = f64>) -> f64 {
    let v: Vec<f64> = values.collect();
    if v.is_empty() {
        return 0.0;
    }
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n
}

/// Default noise prior for a block: inverse-gamma with shape 2 and mean equal
/// to 1% of the block's signal variance.
fn auto_sigma2_prior(signal_variance: f64) -> Prior {
    let b = (0.01 * signal_variance).max(1e-8);
    Prior::InverseGamma { shape: 2.0, scale: b }
}

fn shooting_signal_variance(problem: &CalibrationProblem) -> f64 {
    match &problem.forward {
        // Average pointwise ensemble variance implied by the surrogate basis:
        // components are unit-norm, so score variances spread over the span.
        Forward::Emulators { shooting, .. } => {
            let span = problem.grid().span();
            let total: f64 = shooting.basis().explained_variance().iter().sum();
            total / span
        }
        Forward::Simulator { .. } => pooled_variance(
            problem.experiments.iter().flat_map(|e| e.shooting_obs.values().iter().copied()),
        ),
    }
}

struct GibbsState {
    s2_aligned: f64,
    s2_shooting: f64,
    d_aligned: Vec<Vec<f64>>,
    d_shooting: Vec<Vec<f64>>,
}

/// Draw from the Gaussian full conditional of one basis's coefficients.
fn conjugate_coeff_draw(
    problem: &CalibrationProblem,
    basis: &DiscrepancyBasis,
    preds: &[BlockPrediction],
    aligned_block: bool,
    sigma2: f64,
    inflate: bool,
    rng: &mut impl Rng,
) -> Vec<Vec<f64>> {
    let k = basis.k();
    let nt = basis.grid().len();
    let n_exp = problem.experiments.len();
    let rows = if basis.per_experiment { n_exp } else { 1 };
    let mut out = Vec::with_capacity(rows);

    let mut prec_acc = DMatrix::<f64>::zeros(k, k);
    let mut rhs_acc = DVector::<f64>::zeros(k);
    let prior_prec = DMatrix::<f64>::from_fn(k, k, |i, j| {
        if i == j {
            1.0 / (basis.coeff_prior_sd[i] * basis.coeff_prior_sd[i])
        } else {
            0.0
        }
    });

    for (i, (e, p)) in problem.experiments.iter().zip(preds).enumerate() {
        let (obs, mean, var): (&[f64], &[f64], &[f64]) = if aligned_block {
            (e.aligned_obs.values(), &p.mean_aligned, &p.var_aligned)
        } else {
            (e.shooting_obs.values(), &p.mean_shooting, &p.var_shooting)
        };
        let mut prec = DMatrix::<f64>::zeros(k, k);
        let mut rhs = DVector::<f64>::zeros(k);
        for j in 0..nt {
            let w = 1.0 / (sigma2 + if inflate { var[j] } else { 0.0 });
            let r = obs[j] - mean[j];
            for a in 0..k {
                let da = basis.columns[a].values()[j];
                rhs[a] += w * da * r;
                for b in a..k {
                    prec[(a, b)] += w * da * basis.columns[b].values()[j];
                }
            }
        }
        for a in 0..k {
            for b in 0..a {
                prec[(a, b)] = prec[(b, a)];
            }
        }
        if basis.per_experiment {
            let full = &prec + &prior_prec;
            out.push(sample_gaussian_from_precision(&full, &rhs, rng));
        } else {
            prec_acc += prec;
            rhs_acc += rhs;
        }
        let _ = i;
    }
    if !basis.per_experiment {
        let full = &prec_acc + &prior_prec;
        out.push(sample_gaussian_from_precision(&full, &rhs_acc, rng));
    }
    out
}

/// Sample N(P⁻¹ rhs, P⁻¹) given precision P.
fn sample_gaussian_from_precision(
    prec: &DMatrix<f64>,
    rhs: &DVector<f64>,
    rng: &mut impl Rng,
) -> Vec<f64> {
    let k = rhs.len();
    let chol = Cholesky::new(prec.clone()).unwrap_or_else(|| {
        Cholesky::new(prec + DMatrix::identity(k, k) * 1e-8).expect("jittered precision")
    });
    let mean = chol.solve(rhs);
    // x = mean + L^{-T} eta gives covariance P^{-1}.
    let eta = DVector::from_fn(k, |_, _| rand_distr::StandardNormal.sample(rng));
    let l = chol.l();
    let z = l
        .transpose()
        .solve_upper_triangular(&eta)
        .expect("upper-triangular solve");
    (mean + z).iter().copied().collect()
}

/// Gaussian prior log-density of all coefficient rows.
fn coeff_log_prior(basis: Option<&DiscrepancyBasis>, d: &[Vec<f64>]) -> f64 {
    let Some(b) = basis else { return 0.0 };
    let mut lp = 0.0;
    for row in d {
        for (x, s) in row.iter().zip(&b.coeff_prior_sd) {
            let z = x / s;
            lp += -0.5 * z * z - s.ln() - 0.5 * (2.0 * std::f64::consts::PI).ln();
        }
    }
    lp
}

/// Adaptive Metropolis-within-Gibbs sampler for a calibration problem.
///
/// The θ block is a random-walk Metropolis step whose covariance adapts
/// during burn-in only, interleaved with independence proposals from the
/// prior every `refresh_every` iterations. Noise variances use exact
/// inverse-gamma Gibbs draws when surrogate-variance inflation is off, and
/// log-scale Metropolis steps on the heteroscedastic conditional when it is
/// on. Discrepancy coefficients are exact Gaussian conditional draws.
/// The run is deterministic given the seed.
pub fn mcmc_sample(problem: &CalibrationProblem, config: &McmcConfig) -> Result<PosteriorSamples> {
    if config.n_iter == 0 || config.n_burn >= config.n_iter {
        return Err(Error::Config(format!(
            "need n_iter > n_burn >= 0, got {} and {}",
            config.n_iter, config.n_burn
        )));
    }
    if !(config.proposal_scale_init > 0.0) {
        return Err(Error::Config("proposal_scale_init must be positive".into()));
    }
    for (name, p) in [
        ("aligned", &config.sigma2_prior_aligned),
        ("shooting", &config.sigma2_prior_shooting),
    ] {
        if let Some(prior) = p {
            if !matches!(prior, Prior::InverseGamma { .. }) {
                return Err(Error::Config(format!(
                    "{name} noise prior must be inverse-gamma for conjugate updates"
                )));
            }
        }
    }
    for (name, v) in [
        ("aligned", &config.fix_sigma2_aligned),
        ("shooting", &config.fix_sigma2_shooting),
    ] {
        if let Some(s2) = v {
            if !(*s2 > 0.0 && s2.is_finite()) {
                return Err(Error::Config(format!("fixed {name} variance must be positive")));
            }
        }
    }

    let d = problem.theta_dim;
    let n_exp = problem.experiments.len();
    let nt = problem.grid().len();
    let inflate = config.inflate_surrogate_variance;
    let mut rng = crate::seed::stream_rng(config.seed, "calibration-chain");

    let prior_z = config.sigma2_prior_aligned.clone().unwrap_or_else(|| {
        auto_sigma2_prior(pooled_variance(
            problem.experiments.iter().flat_map(|e| e.aligned_obs.values().iter().copied()),
        ))
    });
    let prior_v = config
        .sigma2_prior_shooting
        .clone()
        .unwrap_or_else(|| auto_sigma2_prior(shooting_signal_variance(problem)));
    let (Prior::InverseGamma { shape: az, scale: bz }, Prior::InverseGamma { shape: av, scale: bv }) =
        (prior_z.clone(), prior_v.clone())
    else {
        unreachable!("validated above")
    };

    // Initial state.
    let mut theta: Vec<f64> = problem.priors.iter().map(|p| p.initial_point()).collect();
    let mut state = GibbsState {
        s2_aligned: config.fix_sigma2_aligned.unwrap_or_else(|| prior_z.initial_point()),
        s2_shooting: config.fix_sigma2_shooting.unwrap_or_else(|| prior_v.initial_point()),
        d_aligned: match &problem.discrepancy_aligned {
            Some(b) => vec![vec![0.0; b.k()]; if b.per_experiment { n_exp } else { 1 }],
            None => vec![],
        },
        d_shooting: match &problem.discrepancy_shooting {
            Some(b) => vec![vec![0.0; b.k()]; if b.per_experiment { n_exp } else { 1 }],
            None => vec![],
        },
    };
    let mut preds = forward_eval(problem, &theta)?
        .ok_or_else(|| Error::Numerical("forward model infeasible at the initial point".into()))?;
    let ll_of = |preds: &[BlockPrediction], st: &GibbsState| {
        likelihood_from_predictions(
            problem,
            preds,
            st.s2_aligned,
            st.s2_shooting,
            &st.d_aligned,
            &st.d_shooting,
            inflate,
            config.include_shooting_block,
        )
    };
    let mut ll = ll_of(&preds, &state);

    // Proposal covariance: diagonal seed, adapted during burn-in.
    let widths: Vec<f64> = problem.priors.iter().map(|p| p.width()).collect();
    let mut prop_chol = DMatrix::<f64>::from_fn(d, d, |i, j| {
        if i == j {
            config.proposal_scale_init * widths[i]
        } else {
            0.0
        }
    });
    let mut history: Vec<Vec<f64>> = Vec::with_capacity(config.n_iter.min(4000));

    let retained = config.n_iter - config.n_burn;
    let mut out = PosteriorSamples {
        theta: Vec::with_capacity(retained),
        sigma2_aligned: Vec::with_capacity(retained),
        sigma2_shooting: Vec::with_capacity(retained),
        discrepancy_aligned: Vec::with_capacity(if state.d_aligned.is_empty() {
            0
        } else {
            retained
        }),
        discrepancy_shooting: Vec::with_capacity(if state.d_shooting.is_empty() {
            0
        } else {
            retained
        }),
        log_posterior: Vec::with_capacity(retained),
        acceptance: AcceptanceRates {
            theta_walk: 0.0,
            theta_refresh: 0.0,
            sigma2_aligned: 0.0,
            sigma2_shooting: 0.0,
        },
    };
    let (mut walk_acc, mut walk_n, mut refresh_acc, mut refresh_n) = (0usize, 0usize, 0usize, 0usize);
    let (mut sz_acc, mut sz_n, mut sv_acc, mut sv_n) = (0usize, 0usize, 0usize, 0usize);
    let mut stall = 0usize;

    for it in 0..config.n_iter {
        let refresh = config.refresh_every > 0 && it % config.refresh_every == config.refresh_every - 1;
        // --- θ block ---
        let (prop, log_hastings) = if refresh {
            refresh_n += 1;
            let p: Vec<f64> = problem.priors.iter().map(|pr| pr.sample(&mut rng)).collect();
            // Independence proposal from the prior: the prior densities cancel
            // against the proposal ratio, leaving the likelihood ratio.
            let correction = problem.log_prior_theta(&theta) - problem.log_prior_theta(&p);
            (p, correction)
        } else {
            walk_n += 1;
            let eta = DVector::<f64>::from_fn(d, |_, _| rand_distr::StandardNormal.sample(&mut rng));
            let step = &prop_chol * eta;
            let p: Vec<f64> = theta.iter().zip(step.iter()).map(|(t, s)| t + s).collect();
            (p, 0.0)
        };
        let lp_prop_theta = problem.log_prior_theta(&prop);
        let mut accepted = false;
        if lp_prop_theta.is_finite() {
            if let Some(new_preds) = forward_eval(problem, &prop)? {
                let ll_prop = ll_of(&new_preds, &state);
                let log_alpha =
                    ll_prop + lp_prop_theta - ll - problem.log_prior_theta(&theta) + log_hastings;
                if rng.gen::<f64>().ln() < log_alpha {
                    theta = prop;
                    preds = new_preds;
                    accepted = true;
                }
            }
        }
        if accepted {
            if refresh {
                refresh_acc += 1;
            } else {
                walk_acc += 1;
            }
            stall = 0;
        } else {
            stall += 1;
            if stall >= STALL_LIMIT {
                return Err(Error::Numerical(format!(
                    "sampler stalled: {STALL_LIMIT} consecutive rejected proposals at iteration {it} \
                     (acceptance so far: walk {walk_acc}/{walk_n}, refresh {refresh_acc}/{refresh_n})"
                )));
            }
        }

        // --- discrepancy blocks (exact Gaussian conditionals) ---
        if let Some(b) = &problem.discrepancy_aligned {
            state.d_aligned =
                conjugate_coeff_draw(problem, b, &preds, true, state.s2_aligned, inflate, &mut rng);
        }
        if config.include_shooting_block {
            if let Some(b) = &problem.discrepancy_shooting {
                state.d_shooting = conjugate_coeff_draw(
                    problem,
                    b,
                    &preds,
                    false,
                    state.s2_shooting,
                    inflate,
                    &mut rng,
                );
            }
        }

        // --- noise variances ---
        if config.fix_sigma2_aligned.is_none() {
            let (s2, acc) = update_sigma2(
                problem,
                &preds,
                &state,
                true,
                az,
                bz,
                inflate,
                config.include_shooting_block,
                &mut rng,
            );
            state.s2_aligned = s2;
            sz_acc += acc;
            sz_n += 1;
        }
        if config.fix_sigma2_shooting.is_none() && config.include_shooting_block {
            let (s2, acc) = update_sigma2(
                problem,
                &preds,
                &state,
                false,
                av,
                bv,
                inflate,
                config.include_shooting_block,
                &mut rng,
            );
            state.s2_shooting = s2;
            sv_acc += acc;
            sv_n += 1;
        }
        ll = ll_of(&preds, &state);

        // --- adaptation (burn-in only) ---
        history.push(theta.clone());
        if history.len() > 2000 {
            history.remove(0);
        }
        if it < config.n_burn && it % 100 == 99 && history.len() > 50 {
            prop_chol = adapted_cholesky(&history, d);
        }

        // --- record ---
        if it >= config.n_burn {
            let log_post = ll
                + problem.log_prior_theta(&theta)
                + prior_z.log_pdf(state.s2_aligned)
                + if config.include_shooting_block {
                    prior_v.log_pdf(state.s2_shooting)
                } else {
                    0.0
                }
                + coeff_log_prior(problem.discrepancy_aligned.as_ref(), &state.d_aligned)
                + coeff_log_prior(problem.discrepancy_shooting.as_ref(), &state.d_shooting);
            out.theta.push(theta.clone());
            out.sigma2_aligned.push(state.s2_aligned);
            out.sigma2_shooting.push(state.s2_shooting);
            if !state.d_aligned.is_empty() {
                out.discrepancy_aligned.push(state.d_aligned.concat());
            }
            if !state.d_shooting.is_empty() {
                out.discrepancy_shooting.push(state.d_shooting.concat());
            }
            out.log_posterior.push(log_post);
        }
        let _ = nt;
    }

    out.acceptance = AcceptanceRates {
        theta_walk: walk_acc as f64 / walk_n.max(1) as f64,
        theta_refresh: refresh_acc as f64 / refresh_n.max(1) as f64,
        sigma2_aligned: sz_acc as f64 / sz_n.max(1) as f64,
        sigma2_shooting: sv_acc as f64 / sv_n.max(1) as f64,
    };
    Ok(out)
}

/// Proposal Cholesky from the recent history: 2.38²/d · (Σ̂ + εI).
fn adapted_cholesky(history: &[Vec<f64>], d: usize) -> DMatrix<f64> {
    let n = history.len() as f64;
    let mean: Vec<f64> = (0..d)
        .map(|k| history.iter().map(|r| r[k]).sum::<f64>() / n)
        .collect();
    let mut cov = DMatrix::<f64>::zeros(d, d);
    for row in history {
        for a in 0..d {
            for b in 0..d {
                cov[(a, b)] += (row[a] - mean[a]) * (row[b] - mean[b]);
            }
        }
    }
    cov /= n - 1.0;
    let scaled = cov * (2.38 * 2.38 / d as f64) + DMatrix::identity(d, d) * 1e-10;
    match Cholesky::new(scaled) {
        Some(c) => c.l().into(),
        None => DMatrix::identity(d, d) * 1e-5,
    }
}

/// One noise-variance update: exact inverse-gamma Gibbs when the surrogate
/// variance is not inflated, otherwise two log-scale Metropolis steps on the
/// heteroscedastic conditional. Returns (new σ², accepted-any).
#[allow(clippy::too_many_arguments)]
fn update_sigma2(
    problem: &CalibrationProblem,
    preds: &[BlockPrediction],
    state: &GibbsState,
    aligned_block: bool,
    shape0: f64,
    scale0: f64,
    inflate: bool,
    include_shooting: bool,
    rng: &mut impl Rng,
) -> (f64, usize) {
    // Residuals (with discrepancy removed) and surrogate variances.
    let mut resid = Vec::with_capacity(problem.experiments.len() * problem.grid().len());
    let mut svar = Vec::with_capacity(resid.capacity());
    for (i, (e, p)) in problem.experiments.iter().zip(preds).enumerate() {
        let (obs, mean, var, basis, coeffs): (&[f64], &[f64], &[f64], _, &[Vec<f64>]) =
            if aligned_block {
                (
                    e.aligned_obs.values(),
                    &p.mean_aligned,
                    &p.var_aligned,
                    problem.discrepancy_aligned.as_ref(),
                    &state.d_aligned,
                )
            } else {
                (
                    e.shooting_obs.values(),
                    &p.mean_shooting,
                    &p.var_shooting,
                    problem.discrepancy_shooting.as_ref(),
                    &state.d_shooting,
                )
            };
        let delta = basis.map(|b| b.evaluate(coeff_row(coeffs, b, i)).expect("validated"));
        for j in 0..obs.len() {
            let d = delta.as_ref().map_or(0.0, |dv| dv[j]);
            resid.push(obs[j] - mean[j] - d);
            svar.push(var[j]);
        }
    }
    let _ = include_shooting;

    if !inflate {
        // Exact conjugate draw.
        let shape = shape0 + resid.len() as f64 / 2.0;
        let ssr: f64 = resid.iter().map(|r| r * r).sum();
        let scale = scale0 + 0.5 * ssr;
        let g = rand_distr::Gamma::new(shape, 1.0).expect("positive shape");
        return (scale / g.sample(rng), 1);
    }

    // Heteroscedastic conditional: log-RWM with the scale-Jacobian correction.
    let cond = |s2: f64| -> f64 {
        gaussian_block(&resid, s2, &svar, true) - (shape0 + 1.0) * s2.ln() - scale0 / s2
    };
    let mut cur = if aligned_block { state.s2_aligned } else { state.s2_shooting };
    let mut lp_cur = cond(cur);
    let mut accepted = 0usize;
    for _ in 0..2 {
        let z: f64 = rand_distr::StandardNormal.sample(rng);
        let prop = cur * (0.6 * z).exp();
        let lp_prop = cond(prop);
        if rng.gen::<f64>().ln() < lp_prop - lp_cur + prop.ln() - cur.ln() {
            cur = prop;
            lp_cur = lp_prop;
            accepted = 1;
        }
    }
    (cur, accepted)
}

// ---------------------------------------------------------------------------
// Posterior prediction
// ---------------------------------------------------------------------------

/// Posterior predictive draws mapped back to the data space.
#[derive(Debug, Clone)]
pub struct PredictiveSamples {
    pub curves: Vec<GridFunction>,
    /// Draws discarded because the predicted phase left the injectivity
    /// radius (each was replaced by a fresh draw).
    pub resampled: usize,
}

/// Map posterior draws to data-space curves: predict the aligned curve and
/// shooting vector at θ (plus discrepancy), turn the shooting vector into a
/// warp, compose, and add observation noise at that draw's σ level.
pub fn posterior_predict(
    problem: &CalibrationProblem,
    samples: &PosteriorSamples,
    experiment: usize,
    n_draws: usize,
    seed: u64,
) -> Result<PredictiveSamples> {
    if samples.theta.is_empty() {
        return Err(Error::Data("no posterior draws".into()));
    }
    if experiment >= problem.experiments.len() {
        return Err(Error::Config(format!(
            "experiment index {experiment} out of range ({} experiments)",
            problem.experiments.len()
        )));
    }
    if n_draws == 0 {
        return Err(Error::Config("need at least one predictive draw".into()));
    }
    let grid = problem.grid().clone();
    let mut rng = crate::seed::stream_rng(seed, "posterior-predictive");
    let mut curves = Vec::with_capacity(n_draws);
    let mut resampled = 0usize;
    let max_attempts = 100 + 20 * n_draws;
    let mut attempts = 0usize;

    while curves.len() < n_draws {
        attempts += 1;
        if attempts > max_attempts {
            return Err(Error::Numerical(format!(
                "posterior prediction kept leaving the injectivity radius \
                 ({resampled} resampled draws in {attempts} attempts)"
            )));
        }
        let idx = rng.gen_range(0..samples.theta.len());
        let theta = &samples.theta[idx];
        let Some(preds) = forward_eval(problem, theta)? else {
            resampled += 1;
            continue;
        };
        let p = &preds[experiment];

        let mut vhat = p.mean_shooting.clone();
        if let Some(b) = &problem.discrepancy_shooting {
            if let Some(row) = flat_row(&samples.discrepancy_shooting, idx, b, experiment) {
                let delta = b.evaluate(&row)?;
                for (v, dv) in vhat.iter_mut().zip(&delta) {
                    *v += dv;
                }
            }
        }
        // Phase-side residual noise at the model's own level: the sampled
        // variance plus the surrogate's pointwise variance.
        let s2v = samples.sigma2_shooting[idx];
        for (v, &w) in vhat.iter_mut().zip(&p.var_shooting) {
            let z: f64 = rand_distr::StandardNormal.sample(&mut rng);
            *v += (s2v + w).max(0.0).sqrt() * z;
        }
        // Project back onto the tangent space (indicator-style discrepancy
        // columns carry mass); reject draws outside the injectivity radius.
        let v = match ShootingVector::projected(grid.clone(), vhat) {
            Ok(v) => v,
            Err(Error::InjectivityRadius(_)) => {
                resampled += 1;
                continue;
            }
            Err(e) => return Err(e),
        };
        let gamma = shooting_to_gamma(&v)?;

        let mut yhat = p.mean_aligned.clone();
        if let Some(b) = &problem.discrepancy_aligned {
            if let Some(row) = flat_row(&samples.discrepancy_aligned, idx, b, experiment) {
                let delta = b.evaluate(&row)?;
                for (y, dv) in yhat.iter_mut().zip(&delta) {
                    *y += dv;
                }
            }
        }
        let aligned = GridFunction::new(grid.clone(), yhat)?;
        let composed = apply_warp(&aligned, &gamma)?;
        // Amplitude-side residual noise at the model's own level, with the
        // surrogate's pointwise variance carried through the same warp.
        let var_curve = GridFunction::new(grid.clone(), p.var_aligned.clone())?;
        let var_warped = apply_warp(&var_curve, &gamma)?;
        let s2a = samples.sigma2_aligned[idx];
        let noisy: Vec<f64> = composed
            .values()
            .iter()
            .zip(var_warped.values())
            .map(|(y, &w)| {
                let z: f64 = rand_distr::StandardNormal.sample(&mut rng);
                y + (s2a + w.max(0.0)).sqrt() * z
            })
            .collect();
        curves.push(GridFunction::new(grid.clone(), noisy)?);
    }
    Ok(PredictiveSamples { curves, resampled })
}

/// Slice one experiment's coefficients out of a flattened draw row.
fn flat_row(
    flat: &[Vec<f64>],
    idx: usize,
    basis: &DiscrepancyBasis,
    experiment: usize,
) -> Option<Vec<f64>> {
    if flat.is_empty() {
        return None;
    }
    let row = &flat[idx];
    let k = basis.k();
    let start = if basis.per_experiment { experiment * k } else { 0 };
    row.get(start..start + k).map(|s| s.to_vec())
}
