//! Surrogates for functional outputs: principal-component compression of a
//! curve ensemble plus one Gaussian-process regression per retained
//! coefficient, with predictive mean and pointwise uncertainty.

use crate::grid::{Grid, GridFunction};
use crate::{Error, Result};
use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::path::Path;
use std::sync::OnceLock;

/// Fraction of ensemble variance retained by default.
pub const DEFAULT_VARIANCE_TARGET: f64 = 0.995;
/// Smallest admissible noise variance on standardized outputs.
pub const NUGGET_FLOOR: f64 = 1e-8;
/// File format version written by [`Emulator::save_json`].
pub const EMULATOR_SCHEMA_VERSION: u32 = 2;

const INTERNAL_CV_FOLDS: usize = 5;
const INTERNAL_CV_SEED: u64 = 0x1f0a_55e5;
const CONSTANT_TOL: f64 = 1e-12;

/// Orthonormal curve basis from a mean-centered ensemble decomposition.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FpcaBasis {
    mean_curve: GridFunction,
    components: Vec<GridFunction>,
    explained_variance: Vec<f64>,
}

impl FpcaBasis {
    pub fn mean_curve(&self) -> &GridFunction {
        &self.mean_curve
    }

    pub fn components(&self) -> &[GridFunction] {
        &self.components
    }

    /// Per-component ensemble variances, nonincreasing.
    pub fn explained_variance(&self) -> &[f64] {
        &self.explained_variance
    }

    pub fn n_comp(&self) -> usize {
        self.components.len()
    }

    pub fn grid(&self) -> &Grid {
        &self.mean_curve.grid
    }

    /// Coefficients of `curve` in this basis (curve is centered first).
    pub fn project(&self, curve: &GridFunction) -> Result<Vec<f64>> {
        if curve.grid != *self.grid() {
            return Err(Error::ShapeMismatch("curve grid differs from basis grid".into()));
        }
        let centered: Vec<f64> = curve
            .values()
            .iter()
            .zip(self.mean_curve.values())
            .map(|(v, m)| v - m)
            .collect();
        let centered = GridFunction::new(self.grid().clone(), centered)?;
        self.components.iter().map(|c| centered.inner_product(c)).collect()
    }

    /// Mean curve plus the linear combination of components given by `scores`.
    pub fn reconstruct(&self, scores: &[f64]) -> Result<GridFunction> {
        if scores.len() != self.n_comp() {
            return Err(Error::ShapeMismatch(format!(
                "{} scores for a {}-component basis",
                scores.len(),
                self.n_comp()
            )));
        }
        let mut values = self.mean_curve.values().to_vec();
        for (a, comp) in scores.iter().zip(&self.components) {
            for (v, c) in values.iter_mut().zip(comp.values()) {
                *v += a * c;
            }
        }
        GridFunction::new(self.grid().clone(), values)
    }
}

/// Extract an orthonormal basis capturing `variance_target` of the ensemble
/// variance about the mean.
///
/// Orthonormality is with respect to the trapezoid inner product on the
/// shared grid. Identical curves yield an empty basis.
pub fn fpca_fit(curves: &[GridFunction], variance_target: f64) -> Result<FpcaBasis> {
    if curves.len() < 2 {
        return Err(Error::Data(format!(
            "ensemble decomposition needs at least 2 curves, got {}",
            curves.len()
        )));
    }
    if !(variance_target > 0.0 && variance_target <= 1.0) {
        return Err(Error::Config(format!(
            "variance_target must lie in (0, 1], got {variance_target}"
        )));
    }
    let grid = &curves[0].grid;
    if curves.iter().any(|c| c.grid != *grid) {
        return Err(Error::ShapeMismatch("ensemble curves on differing grids".into()));
    }
    let n = curves.len();
    let nt = grid.len();

    let mut mean = vec![0.0; nt];
    for c in curves {
        for (m, v) in mean.iter_mut().zip(c.values()) {
            *m += v / n as f64;
        }
    }

    // Rows are centered curves scaled by sqrt of the quadrature weights, so
    // plain Euclidean orthonormality of right singular vectors becomes
    // trapezoid orthonormality of the basis curves.
    let w = grid.trapezoid_weights();
    let sqrt_w: Vec<f64> = w.iter().map(|x| x.sqrt()).collect();
    let b = DMatrix::from_fn(n, nt, |i, j| (curves[i].values()[j] - mean[j]) * sqrt_w[j]);

    // The spectrum comes from the small symmetric Gram matrix of the runs
    // rather than a direct decomposition of the wide data matrix, which the
    // linear-algebra backend handles less reliably. Each Gram eigenvector
    // maps to a curve-space direction through the data matrix itself.
    let gram = &b * b.transpose();
    let eig = SymmetricEigen::new(gram);
    // The decomposition does not promise ordered eigenvalues; sort the pairs
    // so truncation keeps the largest directions.
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let eigvals: Vec<f64> = order.iter().map(|&k| eig.eigenvalues[k].max(0.0)).collect();

    let total: f64 = eigvals.iter().sum();
    let mean_curve = GridFunction::new(grid.clone(), mean)?;
    if total <= CONSTANT_TOL * n as f64 {
        return Ok(FpcaBasis { mean_curve, components: vec![], explained_variance: vec![] });
    }

    let mut n_comp = 0;
    let mut cum = 0.0;
    for lam in &eigvals {
        if cum >= variance_target * total {
            break;
        }
        cum += lam;
        n_comp += 1;
    }
    // Directions with no variance left cannot be meaningful components.
    while n_comp > 0 && eigvals[n_comp - 1] <= CONSTANT_TOL * total {
        n_comp -= 1;
    }

    let bt = b.transpose();
    let mut components = Vec::with_capacity(n_comp);
    let mut explained = Vec::with_capacity(n_comp);
    for (rank, &k) in order.iter().take(n_comp).enumerate() {
        let sigma = eigvals[rank].sqrt();
        let u = eig.eigenvectors.column(k).clone_owned();
        let v = &bt * &u / sigma;
        let values: Vec<f64> = (0..nt).map(|j| v[j] / sqrt_w[j]).collect();
        components.push(GridFunction::new(grid.clone(), values)?);
        explained.push(eigvals[rank] / (n as f64 - 1.0));
    }
    Ok(FpcaBasis { mean_curve, components, explained_variance: explained })
}

/// Gaussian process on unit-cube inputs with an anisotropic squared
/// exponential kernel and standardized outputs.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GpModel {
    log_lengthscales: Vec<f64>,
    log_signal: f64,
    log_nugget: f64,
    y_mean: f64,
    y_scale: f64,
    x: Vec<Vec<f64>>,
    y: Vec<f64>,
    #[serde(skip, default)]
    cache: OnceLock<GpCache>,
}

#[derive(Debug, Clone)]
struct GpCache {
    chol: DMatrix<f64>,
    alpha: DVector<f64>,
}

fn kernel_matrix(x: &[Vec<f64>], ll: &[f64], sf2: f64, sn2: f64) -> DMatrix<f64> {
    let n = x.len();
    DMatrix::from_fn(n, n, |i, j| {
        let mut d2 = 0.0;
        for (d, l) in ll.iter().enumerate() {
            let dx = (x[i][d] - x[j][d]) / l;
            d2 += dx * dx;
        }
        let k = sf2 * (-0.5 * d2).exp();
        if i == j {
            k + sn2
        } else {
            k
        }
    })
}

impl GpModel {
    fn fit(x: Vec<Vec<f64>>, y_raw: &[f64]) -> GpModel {
        let n = y_raw.len();
        let y_mean = y_raw.iter().sum::<f64>() / n as f64;
        let var = y_raw.iter().map(|v| (v - y_mean).powi(2)).sum::<f64>() / (n as f64 - 1.0);
        let y_scale = var.sqrt();
        if y_scale < CONSTANT_TOL {
            // Constant output: zero signal makes every prediction the mean.
            return GpModel {
                log_lengthscales: vec![0.0; x[0].len()],
                log_signal: f64::NEG_INFINITY,
                log_nugget: 0.5 * NUGGET_FLOOR.ln(),
                y_mean,
                y_scale: 1.0,
                x,
                y: vec![0.0; n],
                cache: OnceLock::new(),
            };
        }
        let y: Vec<f64> = y_raw.iter().map(|v| (v - y_mean) / y_scale).collect();
        let p = x[0].len();

        let nlml = |params: &[f64]| -> f64 {
            let ll: Vec<f64> = params[..p].iter().map(|v| v.exp()).collect();
            let sf2 = (2.0 * params[p]).exp();
            let sn2 = (2.0 * params[p + 1]).exp().max(NUGGET_FLOOR);
            if ll.iter().any(|l| !(*l > 1e-6 && *l < 1e6)) || !(1e-12..=1e12).contains(&sf2) {
                return f64::INFINITY;
            }
            let k = kernel_matrix(&x, &ll, sf2, sn2);
            let Some(chol) = k.cholesky() else {
                return f64::INFINITY;
            };
            let yv = DVector::from_column_slice(&y);
            let alpha = chol.solve(&yv);
            let log_det: f64 = (0..n).map(|i| chol.l_dirty()[(i, i)].ln()).sum();
            0.5 * yv.dot(&alpha) + log_det + 0.5 * n as f64 * (2.0 * std::f64::consts::PI).ln()
        };

        // Fixed multi-start pattern keeps the fit fully deterministic.
        let starts: Vec<Vec<f64>> = [(0.3, 1.0, 1e-3), (1.0, 1.0, 1e-3), (0.1, 1.0, 1e-2), (0.5, 0.5, 1e-4)]
            .iter()
            .map(|&(l, sf, sn): &(f64, f64, f64)| {
                let mut v = vec![l.ln(); p];
                v.push(sf.ln());
                v.push(sn.ln());
                v
            })
            .collect();
        let mut best: Option<(Vec<f64>, f64)> = None;
        for s in &starts {
            let (xopt, fopt) = nelder_mead(&nlml, s, 0.4, 120 * (p + 2));
            if best.as_ref().map_or(true, |b| fopt < b.1) {
                best = Some((xopt, fopt));
            }
        }
        let (params, _) = best.expect("at least one optimizer start");

        GpModel {
            log_lengthscales: params[..p].to_vec(),
            log_signal: params[p],
            log_nugget: params[p + 1].max(0.5 * NUGGET_FLOOR.ln()),
            y_mean,
            y_scale,
            x,
            y,
            cache: OnceLock::new(),
        }
    }

    /// Same hyperparameters refit to a subset of the training rows.
    fn refit_subset(&self, rows: &[usize]) -> GpModel {
        GpModel {
            log_lengthscales: self.log_lengthscales.clone(),
            log_signal: self.log_signal,
            log_nugget: self.log_nugget,
            y_mean: self.y_mean,
            y_scale: self.y_scale,
            x: rows.iter().map(|&i| self.x[i].clone()).collect(),
            y: rows.iter().map(|&i| self.y[i]).collect(),
            cache: OnceLock::new(),
        }
    }

    fn cache(&self) -> &GpCache {
        self.cache.get_or_init(|| {
            let ll: Vec<f64> = self.log_lengthscales.iter().map(|v| v.exp()).collect();
            let sf2 = (2.0 * self.log_signal).exp();
            let mut sn2 = (2.0 * self.log_nugget).exp().max(NUGGET_FLOOR);
            let yv = DVector::from_column_slice(&self.y);
            // Escalate the jitter if the factorization stalls; the floor makes
            // failure here pathological rather than routine.
            for _ in 0..8 {
                let k = kernel_matrix(&self.x, &ll, sf2, sn2);
                if let Some(chol) = k.cholesky() {
                    let alpha = chol.solve(&yv);
                    return GpCache { chol: chol.unpack(), alpha };
                }
                sn2 *= 10.0;
            }
            log::error!("kernel factorization failed at every jitter level");
            GpCache {
                chol: DMatrix::identity(self.y.len(), self.y.len()),
                alpha: DVector::zeros(self.y.len()),
            }
        })
    }

    /// Predictive mean and variance (original output units) at a unit-cube
    /// point, excluding the recorded held-out residual variance.
    fn predict_scaled(&self, xs: &[f64]) -> (f64, f64) {
        let sf2 = (2.0 * self.log_signal).exp();
        if sf2 == 0.0 {
            return (self.y_mean, 0.0);
        }
        let ll: Vec<f64> = self.log_lengthscales.iter().map(|v| v.exp()).collect();
        let cache = self.cache();
        let n = self.x.len();
        let kstar = DVector::from_fn(n, |i, _| {
            let mut d2 = 0.0;
            for (d, l) in ll.iter().enumerate() {
                let dx = (self.x[i][d] - xs[d]) / l;
                d2 += dx * dx;
            }
            sf2 * (-0.5 * d2).exp()
        });
        let mean_std = kstar.dot(&cache.alpha);
        // The cache stores L, so the quadratic form is the squared norm of the
        // forward-substitution solution.
        let v = cache
            .chol
            .solve_lower_triangular(&kstar)
            .map(|z| z.norm_squared())
            .unwrap_or(0.0);
        let var_std = (sf2 - v).max(0.0);
        (self.y_mean + self.y_scale * mean_std, self.y_scale * self.y_scale * var_std)
    }
}

/// Trained surrogate: basis plus one coefficient model per component.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Emulator {
    basis: FpcaBasis,
    coefficient_models: Vec<GpModel>,
    input_ranges: Vec<(f64, f64)>,
    residual_variance: Vec<f64>,
    /// Pointwise variance of the part of the training curves the truncated
    /// basis cannot represent; a floor on every predictive variance.
    truncation_variance: Vec<f64>,
}

/// Predictive mean curve with a pointwise uncertainty band.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EmulatorPrediction {
    pub mean: GridFunction,
    pub pointwise_sd: GridFunction,
}

fn scale_to_unit(u: &[f64], ranges: &[(f64, f64)]) -> Vec<f64> {
    u.iter()
        .zip(ranges)
        .map(|(&v, &(lo, hi))| if hi - lo < CONSTANT_TOL { 0.5 } else { (v - lo) / (hi - lo) })
        .collect()
}

/// Deterministic fold labels from a seeded shuffle.
fn fold_assignment(n: usize, folds: usize, seed: u64) -> Vec<usize> {
    use rand::seq::SliceRandom;
    let mut rng = crate::seed::stream_rng(seed, "cv-folds");
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    let mut label = vec![0usize; n];
    for (pos, &idx) in order.iter().enumerate() {
        label[idx] = pos % folds;
    }
    label
}

/// Fit a surrogate: compress the output ensemble, then model each coefficient
/// as a Gaussian process over unit-cube-scaled inputs.
///
/// Per-component residual variances come from seeded held-out folds refit with
/// the full-data hyperparameters; they are folded into every prediction's
/// uncertainty.
pub fn train(
    inputs: &[Vec<f64>],
    outputs: &[GridFunction],
    variance_target: f64,
) -> Result<Emulator> {
    if inputs.len() != outputs.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} input rows for {} output curves",
            inputs.len(),
            outputs.len()
        )));
    }
    if inputs.is_empty() {
        return Err(Error::Data("no training runs".into()));
    }
    let p = inputs[0].len();
    if p == 0 || inputs.iter().any(|row| row.len() != p) {
        return Err(Error::ShapeMismatch("ragged or empty input rows".into()));
    }
    if inputs.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::Data("non-finite training input".into()));
    }

    let basis = fpca_fit(outputs, variance_target)?;
    let m = basis.n_comp();
    if inputs.len() < 10 * m {
        log::warn!(
            "{} training runs for {} components; surrogate quality degrades below 10 runs per component",
            inputs.len(),
            m
        );
    }

    let input_ranges: Vec<(f64, f64)> = (0..p)
        .map(|d| {
            let lo = inputs.iter().map(|r| r[d]).fold(f64::INFINITY, f64::min);
            let hi = inputs.iter().map(|r| r[d]).fold(f64::NEG_INFINITY, f64::max);
            (lo, hi)
        })
        .collect();
    let x: Vec<Vec<f64>> = inputs.iter().map(|r| scale_to_unit(r, &input_ranges)).collect();

    let scores: Vec<Vec<f64>> =
        outputs.iter().map(|c| basis.project(c)).collect::<Result<_>>()?;

    let coefficient_models: Vec<GpModel> = (0..m)
        .into_par_iter()
        .map(|k| {
            let y: Vec<f64> = scores.iter().map(|s| s[k]).collect();
            GpModel::fit(x.clone(), &y)
        })
        .collect();

    // Held-out residual variance per component, hyperparameters frozen.
    let n = inputs.len();
    let folds = INTERNAL_CV_FOLDS.min(n);
    let mut residual_variance = vec![0.0; m];
    if folds >= 2 {
        let label = fold_assignment(n, folds, INTERNAL_CV_SEED);
        for (k, gp) in coefficient_models.iter().enumerate() {
            let mut sq_sum = 0.0;
            for f in 0..folds {
                let train_rows: Vec<usize> = (0..n).filter(|i| label[*i] != f).collect();
                let sub = gp.refit_subset(&train_rows);
                for i in (0..n).filter(|i| label[*i] == f) {
                    let (pred, _) = sub.predict_scaled(&x[i]);
                    sq_sum += (pred - scores[i][k]).powi(2);
                }
            }
            residual_variance[k] = sq_sum / n as f64;
        }
    }

    // What the truncated basis discards, measured pointwise on the ensemble.
    let nt = basis.grid().len();
    let mut truncation_variance = vec![0.0; nt];
    for (curve, s) in outputs.iter().zip(&scores) {
        let recon = basis.reconstruct(s)?;
        for (acc, (c, r)) in
            truncation_variance.iter_mut().zip(curve.values().iter().zip(recon.values()))
        {
            *acc += (c - r) * (c - r);
        }
    }
    for v in &mut truncation_variance {
        *v /= outputs.len() as f64;
    }

    Ok(Emulator { basis, coefficient_models, input_ranges, residual_variance, truncation_variance })
}

impl Emulator {
    pub fn basis(&self) -> &FpcaBasis {
        &self.basis
    }

    pub fn input_ranges(&self) -> &[(f64, f64)] {
        &self.input_ranges
    }

    /// Held-out mean squared prediction error per coefficient.
    pub fn residual_variance(&self) -> &[f64] {
        &self.residual_variance
    }

    /// Pointwise variance the truncated basis discards.
    pub fn truncation_variance(&self) -> &[f64] {
        &self.truncation_variance
    }

    pub fn grid(&self) -> &Grid {
        self.basis.grid()
    }

    fn check_input(&self, u: &[f64]) -> Result<Vec<f64>> {
        if u.len() != self.input_ranges.len() {
            return Err(Error::ShapeMismatch(format!(
                "{}-dimensional input for a {}-dimensional surrogate",
                u.len(),
                self.input_ranges.len()
            )));
        }
        for (&v, &(lo, hi)) in u.iter().zip(&self.input_ranges) {
            let slack = 1e-9 * (hi - lo).max(1.0);
            if v < lo - slack || v > hi + slack {
                log::warn!("input {v} outside training range [{lo}, {hi}]; extrapolating");
            }
        }
        Ok(scale_to_unit(u, &self.input_ranges))
    }

    /// Per-component predictive mean and calibrated variance: never less than
    /// the measured held-out residual variance (a flat floor where the model
    /// claims confidence), never less than the model's own variance (which
    /// grows under extrapolation).
    pub fn predict_coefficients(&self, u: &[f64]) -> Result<Vec<(f64, f64)>> {
        let xs = self.check_input(u)?;
        Ok(self
            .coefficient_models
            .iter()
            .zip(&self.residual_variance)
            .map(|(gp, &rv)| {
                let (mean, var) = gp.predict_scaled(&xs);
                (mean, var.max(rv))
            })
            .collect())
    }

    /// Reconstructed curve at `u` with pointwise predictive uncertainty:
    /// coefficient variances propagated through the basis, plus the pointwise
    /// variance of what the truncated basis cannot represent.
    pub fn predict(&self, u: &[f64]) -> Result<EmulatorPrediction> {
        let coeff = self.predict_coefficients(u)?;
        let scores: Vec<f64> = coeff.iter().map(|c| c.0).collect();
        let mean = self.basis.reconstruct(&scores)?;
        let mut var = self.truncation_variance.clone();
        for ((_, v), comp) in coeff.iter().zip(self.basis.components()) {
            for (acc, c) in var.iter_mut().zip(comp.values()) {
                *acc += v * c * c;
            }
        }
        let sd: Vec<f64> = var.iter().map(|v| v.max(0.0).sqrt()).collect();
        Ok(EmulatorPrediction {
            mean,
            pointwise_sd: GridFunction::new(self.grid().clone(), sd)?,
        })
    }

    pub fn save_json(&self, path: impl AsRef<Path>) -> Result<()> {
        let file = EmulatorFile { schema_version: EMULATOR_SCHEMA_VERSION, emulator: self.clone() };
        let text = serde_json::to_string_pretty(&file)?;
        std::fs::write(path, text)?;
        Ok(())
    }

    pub fn load_json(path: impl AsRef<Path>) -> Result<Emulator> {
        let text = std::fs::read_to_string(path)?;
        let file: EmulatorFile = serde_json::from_str(&text)?;
        if file.schema_version != EMULATOR_SCHEMA_VERSION {
            return Err(Error::Config(format!(
                "surrogate file schema {} unsupported (expected {})",
                file.schema_version, EMULATOR_SCHEMA_VERSION
            )));
        }
        Ok(file.emulator)
    }
}

#[derive(Serialize, Deserialize)]
struct EmulatorFile {
    schema_version: u32,
    emulator: Emulator,
}

/// Relative curve prediction error for one held-out run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CvRunError {
    pub run: usize,
    pub fold: usize,
    pub relative_l2: f64,
}

/// Held-out prediction errors from a seeded fold split.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CvReport {
    pub folds: usize,
    pub seed: u64,
    pub per_run: Vec<CvRunError>,
}

impl CvReport {
    pub fn median_relative_l2(&self) -> f64 {
        let mut errs: Vec<f64> = self.per_run.iter().map(|r| r.relative_l2).collect();
        errs.sort_by(f64::total_cmp);
        if errs.is_empty() {
            return f64::NAN;
        }
        let mid = errs.len() / 2;
        if errs.len() % 2 == 1 {
            errs[mid]
        } else {
            0.5 * (errs[mid - 1] + errs[mid])
        }
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut wtr = csv::Writer::from_path(path.as_ref())?;
        wtr.write_record(["run", "fold", "relative_l2"])?;
        for r in &self.per_run {
            wtr.write_record(&[r.run.to_string(), r.fold.to_string(), format!("{:.17e}", r.relative_l2)])?;
        }
        wtr.flush()?;
        Ok(())
    }
}

/// Full cross-validation: retrain on each fold complement, predict the held
/// fold, report relative curve errors.
pub fn cross_validate(
    inputs: &[Vec<f64>],
    outputs: &[GridFunction],
    variance_target: f64,
    folds: usize,
    seed: u64,
) -> Result<CvReport> {
    if folds < 2 {
        return Err(Error::Config(format!("need at least 2 folds, got {folds}")));
    }
    if folds > inputs.len() {
        return Err(Error::Config(format!(
            "{} folds exceed {} training runs",
            folds,
            inputs.len()
        )));
    }
    if inputs.len() != outputs.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} input rows for {} output curves",
            inputs.len(),
            outputs.len()
        )));
    }
    let n = inputs.len();
    let label = fold_assignment(n, folds, seed);
    let mut per_run = Vec::with_capacity(n);
    for f in 0..folds {
        let train_idx: Vec<usize> = (0..n).filter(|i| label[*i] != f).collect();
        let test_idx: Vec<usize> = (0..n).filter(|i| label[*i] == f).collect();
        let tr_in: Vec<Vec<f64>> = train_idx.iter().map(|&i| inputs[i].clone()).collect();
        let tr_out: Vec<GridFunction> = train_idx.iter().map(|&i| outputs[i].clone()).collect();
        let em = train(&tr_in, &tr_out, variance_target)?;
        for &i in &test_idx {
            let pred = em.predict(&inputs[i])?;
            let diff: Vec<f64> = pred
                .mean
                .values()
                .iter()
                .zip(outputs[i].values())
                .map(|(a, b)| a - b)
                .collect();
            let diff = GridFunction::new(outputs[i].grid.clone(), diff)?;
            let denom = outputs[i].norm();
            let rel = if denom > CONSTANT_TOL { diff.norm() / denom } else { diff.norm() };
            per_run.push(CvRunError { run: i, fold: f, relative_l2: rel });
        }
    }
    per_run.sort_by_key(|r| r.run);
    Ok(CvReport { folds, seed, per_run })
}

/// Nelder–Mead on an unconstrained objective; returns the best vertex.
fn nelder_mead(
    f: &dyn Fn(&[f64]) -> f64,
    x0: &[f64],
    step: f64,
    max_iter: usize,
) -> (Vec<f64>, f64) {
    let dim = x0.len();
    let mut simplex: Vec<(Vec<f64>, f64)> = Vec::with_capacity(dim + 1);
    simplex.push((x0.to_vec(), f(x0)));
    for d in 0..dim {
        let mut v = x0.to_vec();
        v[d] += step;
        let fv = f(&v);
        simplex.push((v, fv));
    }
    let (alpha, gamma, rho, sigma) = (1.0, 2.0, 0.5, 0.5);
    for _ in 0..max_iter {
        simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
        if (simplex[dim].1 - simplex[0].1).abs() < 1e-9 * (1.0 + simplex[0].1.abs()) {
            break;
        }
        let centroid: Vec<f64> = (0..dim)
            .map(|d| simplex[..dim].iter().map(|(v, _)| v[d]).sum::<f64>() / dim as f64)
            .collect();
        let worst = simplex[dim].clone();
        let reflect: Vec<f64> =
            centroid.iter().zip(&worst.0).map(|(c, w)| c + alpha * (c - w)).collect();
        let fr = f(&reflect);
        if fr < simplex[0].1 {
            let expand: Vec<f64> =
                centroid.iter().zip(&reflect).map(|(c, r)| c + gamma * (r - c)).collect();
            let fe = f(&expand);
            simplex[dim] = if fe < fr { (expand, fe) } else { (reflect, fr) };
        } else if fr < simplex[dim - 1].1 {
            simplex[dim] = (reflect, fr);
        } else {
            let contract: Vec<f64> =
                centroid.iter().zip(&worst.0).map(|(c, w)| c + rho * (w - c)).collect();
            let fc = f(&contract);
            if fc < worst.1 {
                simplex[dim] = (contract, fc);
            } else {
                let best = simplex[0].0.clone();
                for v in simplex.iter_mut().skip(1) {
                    let shrunk: Vec<f64> =
                        best.iter().zip(&v.0).map(|(b, x)| b + sigma * (x - b)).collect();
                    let fs = f(&shrunk);
                    *v = (shrunk, fs);
                }
            }
        }
    }
    simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
    simplex[0].clone()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn unit_grid(n: usize) -> Grid {
        Grid::uniform(n, 0.0, 1.0).unwrap()
    }

    fn bump(center: f64, height: f64) -> impl Fn(f64) -> f64 {
        move |t| height * (-0.5 * ((t - center) / 0.07).powi(2)).exp()
    }

    #[test]
    fn fpca_rejects_degenerate_requests() {
        let g = unit_grid(31);
        let c = GridFunction::from_fn(g.clone(), |t| t).unwrap();
        assert!(fpca_fit(&[c.clone()], 0.99).is_err());
        assert!(fpca_fit(&[c.clone(), c.clone()], 0.0).is_err());
        assert!(fpca_fit(&[c.clone(), c], 1.1).is_err());
    }

    #[test]
    fn identical_curves_give_empty_basis() {
        let g = unit_grid(41);
        let c = GridFunction::from_fn(g, bump(0.5, 1.0)).unwrap();
        let basis = fpca_fit(&vec![c.clone(); 6], 0.99).unwrap();
        assert_eq!(basis.n_comp(), 0);
        for (m, v) in basis.mean_curve().values().iter().zip(c.values()) {
            assert_abs_diff_eq!(m, v, epsilon = 1e-12);
        }
    }

    #[test]
    fn rank_one_ensemble_recovers_the_generator() {
        let g = unit_grid(61);
        let shape = GridFunction::from_fn(g.clone(), |t| (2.0 * std::f64::consts::PI * t).sin()).unwrap();
        let curves: Vec<GridFunction> = (0..12)
            .map(|i| {
                let a = -1.0 + i as f64 / 5.5 * 2.0;
                let vals: Vec<f64> =
                    shape.values().iter().map(|s| 0.3 + a * s).collect();
                GridFunction::new(g.clone(), vals).unwrap()
            })
            .collect();
        let basis = fpca_fit(&curves, 0.999).unwrap();
        assert_eq!(basis.n_comp(), 1);
        let cos = basis.components()[0].inner_product(&shape).unwrap().abs()
            / (basis.components()[0].norm() * shape.norm());
        assert!(cos > 0.999, "cosine similarity {cos}");
    }

    #[test]
    fn components_are_orthonormal() {
        let g = unit_grid(51);
        let curves: Vec<GridFunction> = (0..15)
            .map(|i| {
                let c = 0.3 + 0.04 * i as f64;
                let h = 0.8 + 0.05 * i as f64;
                GridFunction::from_fn(g.clone(), bump(c, h)).unwrap()
            })
            .collect();
        let basis = fpca_fit(&curves, 0.9999).unwrap();
        assert!(basis.n_comp() >= 2);
        for i in 0..basis.n_comp() {
            for j in 0..basis.n_comp() {
                let ip = basis.components()[i].inner_product(&basis.components()[j]).unwrap();
                let expect = if i == j { 1.0 } else { 0.0 };
                assert_abs_diff_eq!(ip, expect, epsilon = 1e-6);
            }
        }
        let ev = basis.explained_variance();
        for w in ev.windows(2) {
            assert!(w[0] >= w[1], "explained variance must be nonincreasing");
        }
    }

    #[test]
    fn projection_reconstruction_hits_truncation_error() {
        let g = unit_grid(51);
        let curves: Vec<GridFunction> = (0..20)
            .map(|i| {
                let c = 0.25 + 0.025 * i as f64;
                GridFunction::from_fn(g.clone(), bump(c, 1.0)).unwrap()
            })
            .collect();
        let basis = fpca_fit(&curves, 0.9999).unwrap();
        for c in &curves {
            let scores = basis.project(c).unwrap();
            let rec = basis.reconstruct(&scores).unwrap();
            let diff: Vec<f64> = rec
                .values()
                .iter()
                .zip(c.values())
                .map(|(a, b)| a - b)
                .collect();
            let diff = GridFunction::new(g.clone(), diff).unwrap();
            assert!(diff.norm() / c.norm() < 0.02, "reconstruction error {}", diff.norm() / c.norm());
        }
    }

    fn linear_ensemble(n: usize) -> (Vec<Vec<f64>>, Vec<GridFunction>, Grid) {
        let g = unit_grid(41);
        let shape =
            GridFunction::from_fn(g.clone(), |t| (std::f64::consts::PI * t).sin()).unwrap();
        let mut inputs = Vec::with_capacity(n);
        let mut outputs = Vec::with_capacity(n);
        for i in 0..n {
            let a = i as f64 / (n - 1) as f64;
            inputs.push(vec![a, 0.5]);
            let vals: Vec<f64> = shape.values().iter().map(|s| (0.2 + a) * s).collect();
            outputs.push(GridFunction::new(g.clone(), vals).unwrap());
        }
        (inputs, outputs, g)
    }

    #[test]
    fn constant_outputs_predict_the_constant() {
        let g = unit_grid(31);
        let c = GridFunction::from_fn(g, bump(0.4, 1.0)).unwrap();
        let inputs: Vec<Vec<f64>> = (0..8).map(|i| vec![i as f64 / 7.0]).collect();
        let em = train(&inputs, &vec![c.clone(); 8], 0.99).unwrap();
        assert_eq!(em.basis().n_comp(), 0);
        let pred = em.predict(&[0.31]).unwrap();
        for ((p, s), v) in pred.mean.values().iter().zip(pred.pointwise_sd.values()).zip(c.values()) {
            assert_abs_diff_eq!(p, v, epsilon = 1e-10);
            assert_abs_diff_eq!(*s, 0.0, epsilon = 1e-9);
        }
    }

    #[test]
    fn interpolating_fit_reproduces_training_curves() {
        let (inputs, outputs, _) = linear_ensemble(12);
        let em = train(&inputs, &outputs, 0.999).unwrap();
        for (u, c) in inputs.iter().zip(&outputs) {
            let pred = em.predict(u).unwrap();
            let diff: Vec<f64> = pred
                .mean
                .values()
                .iter()
                .zip(c.values())
                .map(|(a, b)| a - b)
                .collect();
            let diff = GridFunction::new(c.grid.clone(), diff).unwrap();
            let band = em.residual_variance().iter().sum::<f64>().sqrt().max(1e-4);
            assert!(
                diff.norm() < 3.0 * band + 1e-3,
                "self-prediction error {} exceeds held-out band {}",
                diff.norm(),
                band
            );
        }
    }

    #[test]
    fn predicted_coefficient_tracks_the_generating_scalar() {
        let (inputs, outputs, _) = linear_ensemble(12);
        let em = train(&inputs, &outputs, 0.999).unwrap();
        let coeffs: Vec<f64> = (0..9)
            .map(|i| em.predict_coefficients(&[0.1 + 0.1 * i as f64, 0.5]).unwrap()[0].0)
            .collect();
        let increasing = coeffs.windows(2).all(|w| w[1] > w[0]);
        let decreasing = coeffs.windows(2).all(|w| w[1] < w[0]);
        assert!(increasing || decreasing, "coefficient not monotone: {coeffs:?}");
    }

    #[test]
    fn prediction_is_deterministic() {
        let (inputs, outputs, _) = linear_ensemble(10);
        let em = train(&inputs, &outputs, 0.99).unwrap();
        let a = em.predict(&[0.37, 0.5]).unwrap();
        let b = em.predict(&[0.37, 0.5]).unwrap();
        assert_eq!(a.mean.values(), b.mean.values());
        assert_eq!(a.pointwise_sd.values(), b.pointwise_sd.values());
    }

    #[test]
    fn training_twice_gives_identical_models() {
        let (inputs, outputs, _) = linear_ensemble(10);
        let em1 = train(&inputs, &outputs, 0.99).unwrap();
        let em2 = train(&inputs, &outputs, 0.99).unwrap();
        let a = em1.predict(&[0.41, 0.5]).unwrap();
        let b = em2.predict(&[0.41, 0.5]).unwrap();
        assert_eq!(a.mean.values(), b.mean.values());
        assert_eq!(a.pointwise_sd.values(), b.pointwise_sd.values());
    }

    #[test]
    fn dimension_mismatch_is_an_error() {
        let (inputs, outputs, _) = linear_ensemble(10);
        let em = train(&inputs, &outputs, 0.99).unwrap();
        assert!(em.predict(&[0.5]).is_err());
        assert!(em.predict(&[0.5, 0.5, 0.5]).is_err());
    }

    #[test]
    fn ragged_or_nonfinite_inputs_are_errors() {
        let (mut inputs, outputs, _) = linear_ensemble(10);
        inputs[3] = vec![0.1];
        assert!(train(&inputs, &outputs, 0.99).is_err());
        let (mut inputs, outputs, _) = linear_ensemble(10);
        inputs[3][0] = f64::NAN;
        assert!(train(&inputs, &outputs, 0.99).is_err());
    }

    #[test]
    fn serialization_round_trips() {
        let (inputs, outputs, _) = linear_ensemble(10);
        let em = train(&inputs, &outputs, 0.99).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("surrogate.json");
        em.save_json(&path).unwrap();
        let loaded = Emulator::load_json(&path).unwrap();
        let a = em.predict(&[0.23, 0.5]).unwrap();
        let b = loaded.predict(&[0.23, 0.5]).unwrap();
        assert_eq!(a.mean.values(), b.mean.values());
        assert_eq!(a.pointwise_sd.values(), b.pointwise_sd.values());
    }

    #[test]
    fn wrong_schema_version_is_rejected() {
        let (inputs, outputs, _) = linear_ensemble(10);
        let em = train(&inputs, &outputs, 0.99).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("surrogate.json");
        em.save_json(&path).unwrap();
        let text = std::fs::read_to_string(&path)
            .unwrap()
            .replace(
                &format!("\"schema_version\": {EMULATOR_SCHEMA_VERSION}"),
                "\"schema_version\": 99",
            );
        std::fs::write(&path, text).unwrap();
        assert!(Emulator::load_json(&path).is_err());
    }

    #[test]
    fn cross_validation_is_seed_deterministic_and_fold_checked() {
        let (inputs, outputs, _) = linear_ensemble(12);
        let r1 = cross_validate(&inputs, &outputs, 0.99, 3, 42).unwrap();
        let r2 = cross_validate(&inputs, &outputs, 0.99, 3, 42).unwrap();
        for (a, b) in r1.per_run.iter().zip(&r2.per_run) {
            assert_eq!(a.relative_l2, b.relative_l2);
            assert_eq!(a.fold, b.fold);
        }
        assert!(cross_validate(&inputs, &outputs, 0.99, 1, 42).is_err());
        assert!(cross_validate(&inputs, &outputs, 0.99, 13, 42).is_err());
    }

    #[test]
    fn constant_data_cross_validates_to_zero_error() {
        let g = unit_grid(31);
        let c = GridFunction::from_fn(g, bump(0.4, 1.0)).unwrap();
        let inputs: Vec<Vec<f64>> = (0..9).map(|i| vec![i as f64 / 8.0]).collect();
        let report = cross_validate(&inputs, &vec![c; 9], 0.99, 3, 7).unwrap();
        for r in &report.per_run {
            assert_abs_diff_eq!(r.relative_l2, 0.0, epsilon = 1e-10);
        }
        assert_abs_diff_eq!(report.median_relative_l2(), 0.0, epsilon = 1e-10);
    }

    #[test]
    fn cv_report_writes_csv() {
        let (inputs, outputs, _) = linear_ensemble(10);
        let report = cross_validate(&inputs, &outputs, 0.99, 5, 11).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cv.csv");
        report.write_csv(&path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("run,fold,relative_l2"));
        assert_eq!(text.lines().count(), 11);
    }

    #[test]
    fn nelder_mead_minimizes_a_quadratic() {
        let f = |x: &[f64]| (x[0] - 1.5).powi(2) + 3.0 * (x[1] + 0.5).powi(2) + 2.0;
        let (x, fx) = nelder_mead(&f, &[0.0, 0.0], 0.5, 400);
        assert_abs_diff_eq!(x[0], 1.5, epsilon = 1e-3);
        assert_abs_diff_eq!(x[1], -0.5, epsilon = 1e-3);
        assert_abs_diff_eq!(fx, 2.0, epsilon = 1e-6);
    }

    #[test]
    fn gp_uncertainty_grows_away_from_training_points() {
        let inputs: Vec<Vec<f64>> = (0..8).map(|i| vec![i as f64 / 7.0 * 0.5]).collect();
        let g = unit_grid(21);
        let outputs: Vec<GridFunction> = inputs
            .iter()
            .map(|u| {
                let a = u[0];
                GridFunction::from_fn(g.clone(), move |t| a * t).unwrap()
            })
            .collect();
        let em = train(&inputs, &outputs, 0.999).unwrap();
        let near = em.predict(&[0.25]).unwrap();
        let far = em.predict(&[0.5 + 0.45]).unwrap();
        let mean_sd = |p: &EmulatorPrediction| {
            p.pointwise_sd.values().iter().sum::<f64>() / p.pointwise_sd.values().len() as f64
        };
        assert!(mean_sd(&far) > mean_sd(&near), "{} vs {}", mean_sd(&far), mean_sd(&near));
    }
}
