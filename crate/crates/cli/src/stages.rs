//! The four pipeline commands: simulate, align, calibrate, report.

use crate::config::{Mode, RunConfig, ShiftDiscrepancySpec};
use serde_json::json;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;
use warpcal_core::align::{apply_warp, decompose_ensemble, align_pair};
use warpcal_core::calibrate::{
    build_shift_discrepancy_basis, mcmc_sample, posterior_predict, CalibrationProblem,
    DiscrepancyBasis, Experiment, Forward, McmcConfig, PosteriorSamples, Prior,
};
use warpcal_core::diagnostics::{effective_sample_size, kde2d};
use warpcal_core::emulator::{train, Emulator};
use warpcal_core::grid::{Grid, GridFunction};
use warpcal_core::io;
use warpcal_core::seed::derive_seed;
use warpcal_core::sphere::{gamma_to_shooting, shooting_to_gamma, ShootingVector};
use warpcal_core::synthetic;
use warpcal_core::{Error, Result};

/// A stage failure carrying the process exit code.
#[derive(Debug)]
pub struct StageError {
    pub code: u8,
    pub message: String,
}

impl std::fmt::Display for StageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for StageError {}

fn config_err(msg: impl Into<String>) -> StageError {
    StageError { code: 2, message: msg.into() }
}

fn data_err(msg: impl Into<String>) -> StageError {
    StageError { code: 3, message: msg.into() }
}

impl From<Error> for StageError {
    fn from(e: Error) -> StageError {
        let code = match &e {
            Error::Config(_) | Error::Json(_) => 2,
            Error::Numerical(_) | Error::InjectivityRadius(_) => 4,
            _ => 3,
        };
        StageError { code, message: e.to_string() }
    }
}

type StageResult<T> = std::result::Result<T, StageError>;

/// Attach the file path to an I/O-flavored core error.
fn at_path<T>(r: Result<T>, path: &Path) -> StageResult<T> {
    r.map_err(|e| {
        let mut se = StageError::from(e);
        se.message = format!("{}: {}", path.display(), se.message);
        se
    })
}

/// The output directory must already exist and be writable.
fn check_out_dir(cfg: &RunConfig) -> StageResult<PathBuf> {
    let dir = cfg
        .out_dir
        .clone()
        .ok_or_else(|| config_err("no output directory: pass --out or set out_dir"))?;
    if !dir.is_dir() {
        return Err(config_err(format!(
            "output directory {} does not exist",
            dir.display()
        )));
    }
    Ok(dir)
}

fn write_resolved_config(cfg: &RunConfig, dir: &Path) -> StageResult<()> {
    let path = dir.join("resolved_config.json");
    let text = serde_json::to_string_pretty(cfg)
        .map_err(|e| config_err(format!("cannot serialize config: {e}")))?;
    std::fs::write(&path, text)
        .map_err(|e| data_err(format!("{}: {e}", path.display())))?;
    Ok(())
}

fn require_example(cfg: &RunConfig) -> StageResult<u8> {
    cfg.example
        .ok_or_else(|| config_err("this command needs a built-in study: pass --example 1|2"))
}

/// Linear-interpolation quantile of an unsorted sample.
pub fn quantile(values: &[f64], p: f64) -> f64 {
    let mut s = values.to_vec();
    s.sort_by(|a, b| a.total_cmp(b));
    let pos = p * (s.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    s[lo] * (1.0 - frac) + s[hi] * frac
}

// ---------------------------------------------------------------------------
// simulate
// ---------------------------------------------------------------------------

pub fn cmd_simulate(cfg: &RunConfig) -> StageResult<()> {
    let dir = check_out_dir(cfg)?;
    write_resolved_config(cfg, &dir)?;
    let example = require_example(cfg)?;
    let grid = Grid::uniform(cfg.simulate.grid_points, 0.0, 1.0)?;
    let stage_seed = derive_seed(cfg.seed, "simulate");

    let (ranges, default_runs, truth): (Vec<(f64, f64)>, usize, Vec<f64>) = match example {
        1 => (
            vec![(0.0, 1.0); 3],
            synthetic::EXAMPLE1_RUNS,
            synthetic::EXAMPLE1_TRUTH.to_vec(),
        ),
        _ => (
            vec![(0.0, 0.3), (0.0, 0.3), (0.0, 1.0)],
            synthetic::EXAMPLE2_RUNS,
            synthetic::EXAMPLE2_TRUTH.to_vec(),
        ),
    };
    let n_runs = cfg.simulate.n_runs.unwrap_or(default_runs);
    let design = synthetic::sample_design(n_runs, &ranges, cfg.simulate.design, stage_seed)?;
    let curves: Vec<GridFunction> = design
        .inputs
        .iter()
        .map(|u| match example {
            1 => synthetic::example1_curve(&grid, u),
            _ => synthetic::example2_curve(&grid, &u[..2]),
        })
        .collect::<Result<_>>()?;
    let observation = match example {
        1 => synthetic::example1_curve(&grid, &synthetic::EXAMPLE1_TRUTH)?,
        _ => synthetic::example2_observation(&grid),
    };

    io::write_design_csv(dir.join("design.csv"), &design.inputs)?;
    io::write_curves_csv(dir.join("curves.csv"), &curves)?;
    io::write_curves_csv(dir.join("observation.csv"), std::slice::from_ref(&observation))?;
    let truth_json = json!({
        "schema_version": crate::config::CONFIG_SCHEMA_VERSION,
        "example": example,
        "seed": cfg.seed,
        "stage_seed": stage_seed,
        "u_star": truth,
        "grid_points": cfg.simulate.grid_points,
        "n_runs": n_runs,
    });
    std::fs::write(dir.join("truth.json"), serde_json::to_string_pretty(&truth_json).unwrap())
        .map_err(|e| data_err(format!("{}: {e}", dir.join("truth.json").display())))?;
    println!(
        "simulate: wrote {n_runs} runs on {} points to {}",
        cfg.simulate.grid_points,
        dir.display()
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// align
// ---------------------------------------------------------------------------

/// Load the alignment target: the observation by default, or a named
/// ensemble member.
fn load_reference(
    cfg: &RunConfig,
    dir: &Path,
    curves: &[GridFunction],
) -> StageResult<GridFunction> {
    match cfg.align.reference_index {
        Some(i) => curves.get(i).cloned().ok_or_else(|| {
            data_err(format!(
                "reference index {i} out of range: the ensemble has {} curves",
                curves.len()
            ))
        }),
        None => {
            let path = dir.join("observation.csv");
            if !path.exists() {
                return Err(data_err(format!(
                    "{}: no observation to align to; set align.reference_index to use an \
                     ensemble member instead",
                    path.display()
                )));
            }
            let obs = at_path(io::read_curves_csv(&path), &path)?;
            Ok(obs.into_iter().next().unwrap())
        }
    }
}

pub fn cmd_align(cfg: &RunConfig) -> StageResult<()> {
    let dir = check_out_dir(cfg)?;
    write_resolved_config(cfg, &dir)?;
    let curves_path = dir.join("curves.csv");
    let curves = at_path(io::read_curves_csv(&curves_path), &curves_path)?;
    let design_path = dir.join("design.csv");
    let inputs = at_path(io::read_design_csv(&design_path), &design_path)?;
    let reference = load_reference(cfg, &dir, &curves)?;

    let started = Instant::now();
    let dec = decompose_ensemble(&reference, &curves, &inputs, cfg.align.penalty_lambda)?;
    io::write_decomposition(&dir, &dec, cfg.align.reference_index, cfg.align.penalty_lambda)?;

    // Decompose the observation against the same target, when present.
    let obs_path = dir.join("observation.csv");
    if obs_path.exists() {
        let obs = at_path(io::read_curves_csv(&obs_path), &obs_path)?
            .into_iter()
            .next()
            .unwrap();
        let res = align_pair(&reference, &obs, cfg.align.penalty_lambda)?;
        let inv = res.gamma.invert()?;
        let v = gamma_to_shooting(&inv)?;
        let grid = obs.grid.clone();
        let headers = vec!["t".into(), "aligned".into(), "warp".into(), "shooting".into()];
        let rows: Vec<Vec<f64>> = (0..grid.len())
            .map(|j| {
                vec![
                    grid.points()[j],
                    res.aligned.values()[j],
                    inv.values()[j],
                    v.values()[j],
                ]
            })
            .collect();
        io::write_table_csv(dir.join("observation_decomposed.csv"), &headers, &rows)?;
    }
    println!(
        "align: decomposed {} curves in {:.1} s",
        curves.len(),
        started.elapsed().as_secs_f64()
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// calibrate
// ---------------------------------------------------------------------------

fn build_discrepancy(
    spec: &ShiftDiscrepancySpec,
    grid: &Grid,
) -> Result<DiscrepancyBasis> {
    let base = build_shift_discrepancy_basis(grid, spec.breakpoints)?;
    DiscrepancyBasis::new(
        base.columns().to_vec(),
        vec![spec.coeff_sd; base.k()],
        base.per_experiment,
    )
}

/// The observation's decomposition products written by `align`.
fn load_observation_experiment(dir: &Path, grid: &Grid) -> StageResult<Experiment> {
    let path = dir.join("observation_decomposed.csv");
    let (headers, rows) = at_path(io::read_table_csv(&path), &path)?;
    let col = |name: &str| -> StageResult<usize> {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| data_err(format!("{}: missing column {name}", path.display())))
    };
    let (ia, iv) = (col("aligned")?, col("shooting")?);
    if rows.len() != grid.len() {
        return Err(data_err(format!(
            "{}: {} rows for a {}-point grid",
            path.display(),
            rows.len(),
            grid.len()
        )));
    }
    let aligned: Vec<f64> = rows.iter().map(|r| r[ia]).collect();
    let shooting: Vec<f64> = rows.iter().map(|r| r[iv]).collect();
    Ok(Experiment {
        aligned_obs: GridFunction::new(grid.clone(), aligned)?,
        shooting_obs: ShootingVector::new(grid.clone(), shooting)?,
        condition: vec![],
    })
}

fn resolve_priors(cfg: &RunConfig) -> StageResult<Vec<Prior>> {
    if let Some(p) = &cfg.calibrate.priors {
        if p.is_empty() {
            return Err(config_err("calibrate.priors must not be empty"));
        }
        return Ok(p.clone());
    }
    let example = cfg.example.ok_or_else(|| {
        config_err("no priors configured and no built-in study named: set calibrate.priors or --example")
    })?;
    RunConfig::default_priors(example)
        .ok_or_else(|| config_err(format!("no built-in priors for example {example}")))
}

pub fn cmd_calibrate(cfg: &RunConfig) -> StageResult<()> {
    let dir = check_out_dir(cfg)?;
    write_resolved_config(cfg, &dir)?;
    let started = Instant::now();

    let curves_path = dir.join("curves.csv");
    let curves = at_path(io::read_curves_csv(&curves_path), &curves_path)?;
    let reference = load_reference(cfg, &dir, &curves)?;
    let (dec, _meta) = io::read_decomposition(&dir, reference.clone())?;
    let grid = reference.grid.clone();
    let experiment = load_observation_experiment(&dir, &grid)?;
    let priors = resolve_priors(cfg)?;
    let theta_dim = priors.len();

    let forward = match cfg.mode {
        Mode::Emulator => {
            let shooting_curves: Vec<GridFunction> = dec
                .shooting_vectors
                .iter()
                .map(|v| GridFunction::new(grid.clone(), v.values().to_vec()))
                .collect::<Result<_>>()?;
            let t0 = Instant::now();
            let aligned = train(
                &dec.inputs,
                &dec.aligned_curves,
                cfg.emulator.variance_target_aligned,
            )?;
            let shooting = train(
                &dec.inputs,
                &shooting_curves,
                cfg.emulator.variance_target_shooting,
            )?;
            println!(
                "calibrate: trained {} + {} component emulators in {:.1} s",
                aligned.basis().n_comp(),
                shooting.basis().n_comp(),
                t0.elapsed().as_secs_f64()
            );
            aligned.save_json(dir.join("emulator_aligned.json"))?;
            shooting.save_json(dir.join("emulator_shooting.json"))?;
            Forward::Emulators { aligned, shooting }
        }
        Mode::Direct => {
            let example = cfg.example.ok_or_else(|| {
                config_err("--mode direct needs a registered simulator: pass --example 1|2")
            })?;
            let g = grid.clone();
            let model: Arc<dyn Fn(&[f64]) -> Result<GridFunction> + Send + Sync> = match example {
                1 => Arc::new(move |u: &[f64]| synthetic::example1_curve(&g, u)),
                _ => Arc::new(move |u: &[f64]| synthetic::example2_curve(&g, &u[..2.min(u.len())])),
            };
            Forward::Simulator {
                model,
                references: vec![reference.clone()],
                penalty_lambda: cfg.align.penalty_lambda,
            }
        }
    };

    let discrepancy_shooting = cfg
        .calibrate
        .shift_discrepancy
        .as_ref()
        .map(|spec| build_discrepancy(spec, &grid))
        .transpose()?;
    let problem = CalibrationProblem::new(
        vec![experiment],
        forward,
        theta_dim,
        priors,
        None,
        discrepancy_shooting,
    )?;

    let mcmc = McmcConfig {
        n_iter: cfg.calibrate.n_iter,
        n_burn: cfg.calibrate.n_burn,
        seed: derive_seed(cfg.seed, "calibrate"),
        proposal_scale_init: cfg.calibrate.proposal_scale_init,
        refresh_every: cfg.calibrate.refresh_every,
        inflate_surrogate_variance: cfg.calibrate.inflate_emulator_variance,
        include_shooting_block: cfg.calibrate.include_shooting_block,
        sigma2_prior_aligned: cfg.calibrate.sigma2_prior_aligned.clone(),
        sigma2_prior_shooting: cfg.calibrate.sigma2_prior_shooting.clone(),
        fix_sigma2_aligned: cfg.calibrate.sigma2_fix_aligned,
        fix_sigma2_shooting: cfg.calibrate.sigma2_fix_shooting,
    };
    let t0 = Instant::now();
    let samples = mcmc_sample(&problem, &mcmc)?;
    let mcmc_seconds = t0.elapsed().as_secs_f64();

    write_chain_csv(&dir, &samples, theta_dim)?;
    let predictive = posterior_predict(
        &problem,
        &samples,
        0,
        cfg.report.n_band_draws,
        derive_seed(cfg.seed, "predictive"),
    )?;
    io::write_curves_csv(dir.join("predictive.csv"), &predictive.curves)?;

    let ess: Vec<f64> = (0..theta_dim)
        .map(|k| {
            let chain: Vec<f64> = samples.theta.iter().map(|r| r[k]).collect();
            effective_sample_size(&chain)
        })
        .collect();
    let diagnostics = json!({
        "schema_version": crate::config::CONFIG_SCHEMA_VERSION,
        "seed": cfg.seed,
        "stage_seed": mcmc.seed,
        "n_iter": mcmc.n_iter,
        "n_burn": mcmc.n_burn,
        "acceptance": {
            "theta_walk": samples.acceptance.theta_walk,
            "theta_refresh": samples.acceptance.theta_refresh,
            "sigma2_aligned": samples.acceptance.sigma2_aligned,
            "sigma2_shooting": samples.acceptance.sigma2_shooting,
        },
        "ess": ess,
        "sigma2_aligned_median": quantile(&samples.sigma2_aligned, 0.5),
        "sigma2_shooting_median": quantile(&samples.sigma2_shooting, 0.5),
        "predictive_resampled": predictive.resampled,
        "mcmc_seconds": mcmc_seconds,
        "total_seconds": started.elapsed().as_secs_f64(),
    });
    std::fs::write(
        dir.join("diagnostics.json"),
        serde_json::to_string_pretty(&diagnostics).unwrap(),
    )
    .map_err(|e| data_err(format!("{}: {e}", dir.join("diagnostics.json").display())))?;
    println!(
        "calibrate: {} retained draws in {:.1} s (walk acceptance {:.2})",
        samples.theta.len(),
        started.elapsed().as_secs_f64(),
        samples.acceptance.theta_walk
    );
    Ok(())
}

fn write_chain_csv(dir: &Path, samples: &PosteriorSamples, theta_dim: usize) -> StageResult<()> {
    let mut headers: Vec<String> = vec!["iter".into()];
    headers.extend((0..theta_dim).map(|k| format!("theta_{k}")));
    headers.push("sigma2_aligned".into());
    headers.push("sigma2_shooting".into());
    headers.push("log_posterior".into());
    let k_align = samples.discrepancy_aligned.first().map_or(0, |r| r.len());
    headers.extend((0..k_align).map(|k| format!("d_aligned_{k}")));
    let k_shoot = samples.discrepancy_shooting.first().map_or(0, |r| r.len());
    headers.extend((0..k_shoot).map(|k| format!("d_shooting_{k}")));

    let rows: Vec<Vec<f64>> = samples
        .theta
        .iter()
        .enumerate()
        .map(|(i, th)| {
            let mut row = Vec::with_capacity(headers.len());
            row.push(i as f64);
            row.extend_from_slice(th);
            row.push(samples.sigma2_aligned[i]);
            row.push(samples.sigma2_shooting[i]);
            row.push(samples.log_posterior[i]);
            if k_align > 0 {
                row.extend_from_slice(&samples.discrepancy_aligned[i]);
            }
            if k_shoot > 0 {
                row.extend_from_slice(&samples.discrepancy_shooting[i]);
            }
            row
        })
        .collect();
    io::write_table_csv(dir.join("chain.csv"), &headers, &rows)?;
    Ok(())
}

// ---------------------------------------------------------------------------
// report
// ---------------------------------------------------------------------------

/// Peak location with three-point parabolic refinement.
pub fn peak_location(f: &GridFunction) -> f64 {
    let v = f.values();
    let (imax, _) = v
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .unwrap();
    let t = f.grid.points();
    if imax == 0 || imax == v.len() - 1 {
        return t[imax];
    }
    let (ym, y0, yp) = (v[imax - 1], v[imax], v[imax + 1]);
    let denom = ym - 2.0 * y0 + yp;
    if denom.abs() < 1e-300 {
        return t[imax];
    }
    let offset = 0.5 * (ym - yp) / denom;
    t[imax] + offset.clamp(-1.0, 1.0) * (t[imax + 1] - t[imax])
}

struct Chain {
    theta: Vec<Vec<f64>>,
    sigma2_aligned: Vec<f64>,
    sigma2_shooting: Vec<f64>,
    d_shooting: Vec<Vec<f64>>,
}

fn load_chain(dir: &Path) -> StageResult<Chain> {
    let path = dir.join("chain.csv");
    let (headers, rows) = at_path(io::read_table_csv(&path), &path)?;
    if rows.is_empty() {
        return Err(data_err(format!("{}: chain is empty", path.display())));
    }
    let theta_cols: Vec<usize> = headers
        .iter()
        .enumerate()
        .filter(|(_, h)| h.starts_with("theta_"))
        .map(|(i, _)| i)
        .collect();
    if theta_cols.is_empty() {
        return Err(data_err(format!("{}: no theta columns", path.display())));
    }
    let find = |name: &str| headers.iter().position(|h| h == name);
    let isa = find("sigma2_aligned")
        .ok_or_else(|| data_err(format!("{}: missing sigma2_aligned", path.display())))?;
    let isv = find("sigma2_shooting")
        .ok_or_else(|| data_err(format!("{}: missing sigma2_shooting", path.display())))?;
    let d_cols: Vec<usize> = headers
        .iter()
        .enumerate()
        .filter(|(_, h)| h.starts_with("d_shooting_"))
        .map(|(i, _)| i)
        .collect();
    Ok(Chain {
        theta: rows
            .iter()
            .map(|r| theta_cols.iter().map(|&c| r[c]).collect())
            .collect(),
        sigma2_aligned: rows.iter().map(|r| r[isa]).collect(),
        sigma2_shooting: rows.iter().map(|r| r[isv]).collect(),
        d_shooting: rows
            .iter()
            .map(|r| d_cols.iter().map(|&c| r[c]).collect())
            .collect(),
    })
}

/// Average timing offset induced by the discrepancy: compare predictive peaks
/// with and without the discrepancy term over a thinned set of draws.
fn induced_shift(cfg: &RunConfig, dir: &Path, chain: &Chain) -> StageResult<Option<f64>> {
    let spec = match &cfg.calibrate.shift_discrepancy {
        Some(s) => s,
        None => return Ok(None),
    };
    if chain.d_shooting.first().map_or(0, |r| r.len()) == 0 {
        return Ok(None);
    }
    let em_a_path = dir.join("emulator_aligned.json");
    let em_v_path = dir.join("emulator_shooting.json");
    if !em_a_path.exists() || !em_v_path.exists() {
        return Ok(None);
    }
    let em_a = Emulator::load_json(&em_a_path)?;
    let em_v = Emulator::load_json(&em_v_path)?;
    let grid = em_a.grid().clone();
    let basis = build_discrepancy(spec, &grid)?;

    let n = chain.theta.len();
    let take = cfg.report.n_shift_draws.min(n).max(1);
    let mut shifts = Vec::with_capacity(take);
    for s in 0..take {
        let idx = s * n / take;
        let pa = em_a.predict(&chain.theta[idx])?;
        let pv = em_v.predict(&chain.theta[idx])?;
        let delta = basis.evaluate(&chain.d_shooting[idx])?;
        let with_d: Vec<f64> = pv
            .mean
            .values()
            .iter()
            .zip(&delta)
            .map(|(v, d)| v + d)
            .collect();
        let gamma_with =
            shooting_to_gamma(&ShootingVector::projected(grid.clone(), with_d)?)?;
        let gamma_wo = shooting_to_gamma(&ShootingVector::projected(
            grid.clone(),
            pv.mean.values().to_vec(),
        )?)?;
        let y_with = apply_warp(&pa.mean, &gamma_with)?;
        let y_wo = apply_warp(&pa.mean, &gamma_wo)?;
        shifts.push(peak_location(&y_with) - peak_location(&y_wo));
    }
    Ok(Some(shifts.iter().sum::<f64>() / shifts.len() as f64))
}

pub fn cmd_report(cfg: &RunConfig) -> StageResult<()> {
    let dir = check_out_dir(cfg)?;
    write_resolved_config(cfg, &dir)?;
    let chain = load_chain(&dir)?;
    let theta_dim = chain.theta[0].len();
    let n = chain.theta.len();

    // Marginal histograms.
    let mut marg_rows: Vec<Vec<f64>> = Vec::new();
    for k in 0..theta_dim {
        let col: Vec<f64> = chain.theta.iter().map(|r| r[k]).collect();
        let lo = col.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = col.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let width = ((hi - lo) / cfg.report.n_bins as f64).max(1e-300);
        let mut counts = vec![0usize; cfg.report.n_bins];
        for x in &col {
            let b = (((x - lo) / width) as usize).min(cfg.report.n_bins - 1);
            counts[b] += 1;
        }
        for (b, c) in counts.iter().enumerate() {
            let bin_lo = lo + b as f64 * width;
            marg_rows.push(vec![
                k as f64,
                bin_lo,
                bin_lo + width,
                *c as f64,
                *c as f64 / (n as f64 * width),
            ]);
        }
    }
    io::write_table_csv(
        dir.join("marginals.csv"),
        &["param".into(), "bin_lo".into(), "bin_hi".into(), "count".into(), "density".into()],
        &marg_rows,
    )?;

    // Pairwise highest-density contours, written as closed polylines.
    let mut contour_rows: Vec<Vec<f64>> = Vec::new();
    for i in 0..theta_dim {
        for j in (i + 1)..theta_dim {
            let xs: Vec<f64> = chain.theta.iter().map(|r| r[i]).collect();
            let ys: Vec<f64> = chain.theta.iter().map(|r| r[j]).collect();
            let density = kde2d(&xs, &ys, cfg.report.kde_grid)?;
            let level = density.level_for_mass(cfg.report.contour_level);
            for (loop_id, path) in density.contours(level).into_iter().enumerate() {
                for (pt, (x, y)) in path.into_iter().enumerate() {
                    contour_rows.push(vec![
                        i as f64,
                        j as f64,
                        loop_id as f64,
                        pt as f64,
                        x,
                        y,
                    ]);
                }
            }
        }
    }
    io::write_table_csv(
        dir.join("contours.csv"),
        &[
            "param_x".into(),
            "param_y".into(),
            "loop".into(),
            "point".into(),
            "x".into(),
            "y".into(),
        ],
        &contour_rows,
    )?;

    // Predictive band and its coverage of the observation.
    let pred_path = dir.join("predictive.csv");
    let draws = at_path(io::read_curves_csv(&pred_path), &pred_path)?;
    let grid = draws[0].grid.clone();
    let a = (1.0 - cfg.report.band_level) / 2.0;
    let mut band_rows = Vec::with_capacity(grid.len());
    let mut lower = Vec::with_capacity(grid.len());
    let mut upper = Vec::with_capacity(grid.len());
    for jj in 0..grid.len() {
        let col: Vec<f64> = draws.iter().map(|c| c.values()[jj]).collect();
        let (l, m, u) = (quantile(&col, a), quantile(&col, 0.5), quantile(&col, 1.0 - a));
        band_rows.push(vec![grid.points()[jj], l, m, u]);
        lower.push(l);
        upper.push(u);
    }
    io::write_table_csv(
        dir.join("bands.csv"),
        &["t".into(), "lower".into(), "median".into(), "upper".into()],
        &band_rows,
    )?;

    let obs_path = dir.join("observation.csv");
    let coverage = if obs_path.exists() {
        let obs = at_path(io::read_curves_csv(&obs_path), &obs_path)?
            .into_iter()
            .next()
            .unwrap();
        if obs.grid != grid {
            return Err(data_err("observation grid differs from predictive grid"));
        }
        let inside = obs
            .values()
            .iter()
            .zip(lower.iter().zip(&upper))
            .filter(|(z, (l, u))| **l <= **z && **z <= **u)
            .count();
        let frac = inside as f64 / grid.len() as f64;
        let cov = json!({
            "band_level": cfg.report.band_level,
            "n_points": grid.len(),
            "n_inside": inside,
            "fraction": frac,
        });
        std::fs::write(dir.join("coverage.json"), serde_json::to_string_pretty(&cov).unwrap())
            .map_err(|e| data_err(format!("coverage.json: {e}")))?;
        Some(frac)
    } else {
        None
    };

    // Posterior summary.
    let shift = induced_shift(cfg, &dir, &chain)?;
    let mut theta_summaries = Vec::with_capacity(theta_dim);
    for k in 0..theta_dim {
        let col: Vec<f64> = chain.theta.iter().map(|r| r[k]).collect();
        let mean = col.iter().sum::<f64>() / n as f64;
        let var = col.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n as f64 - 1.0).max(1.0);
        theta_summaries.push(json!({
            "param": format!("theta_{k}"),
            "mean": mean,
            "sd": var.sqrt(),
            "ci_lower": quantile(&col, 0.025),
            "ci_upper": quantile(&col, 0.975),
        }));
    }
    let summary = json!({
        "schema_version": crate::config::CONFIG_SCHEMA_VERSION,
        "n_draws": n,
        "theta": theta_summaries,
        "sigma2_aligned_median": quantile(&chain.sigma2_aligned, 0.5),
        "sigma2_shooting_median": quantile(&chain.sigma2_shooting, 0.5),
        "band_coverage": coverage,
        "induced_shift": shift,
    });
    std::fs::write(dir.join("summary.json"), serde_json::to_string_pretty(&summary).unwrap())
        .map_err(|e| data_err(format!("summary.json: {e}")))?;
    println!("report: wrote marginals, contours, bands, and summary to {}", dir.display());
    Ok(())
}
