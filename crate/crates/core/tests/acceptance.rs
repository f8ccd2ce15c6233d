//! Acceptance gates for the full pipeline, one per criterion. Every test
//! prints a single `Ax <name>: PASS/FAIL (detail)` line before asserting, so
//! a run's log shows how far each criterion got and by what margin. All
//! thresholds are pinned as constants here.

use std::sync::OnceLock;
use std::time::Instant;

use warpcal_core::align::{
    apply_warp, decompose_ensemble, dp_align_lattice, group_action, lattice_path_cost,
    WarpingFunction, DP_STEPS,
};
use warpcal_core::calibrate::{
    build_shift_discrepancy_basis, mcmc_sample, posterior_predict, CalibrationProblem,
    DiscrepancyBasis, Experiment, Forward, McmcConfig, PosteriorSamples, Prior,
};
use warpcal_core::diagnostics::{effective_sample_size, kde2d, ks_statistic};
use warpcal_core::emulator::{train, Emulator};
use warpcal_core::grid::{from_srvf, to_srvf, trapezoid, Grid, GridFunction, Srvf};
use warpcal_core::sphere::{exp_map_identity, inv_exp_map, shooting_to_gamma, ShootingVector};
use warpcal_core::synthetic::{
    default_grid, example1_ensemble, example2_ensemble, EXAMPLE1_TRUTH, EXAMPLE2_TRUTH,
};

// --- pinned thresholds ------------------------------------------------------

const CI_LEVEL: f64 = 0.95;
const ALIGNED_VARIANCE_TARGET: f64 = 0.999;
const SHOOTING_VARIANCE_TARGET: f64 = 0.995;

const A1_KS_MAX: f64 = 0.15;
const A1_MAX_SECONDS: f64 = 900.0;

const A2_N_DRAWS: usize = 400;
const A2_COVERAGE_TARGET: f64 = 0.90;
const A2_COVERAGE_FLOOR: f64 = 0.85;

const A3_SHIFT_BREAKPOINTS: [f64; 3] = [0.5, 0.7, 0.85];
const A3_SHIFT_EXPECTED: f64 = 0.2;
const A3_SHIFT_TOL: f64 = 0.05;
const A3_N_SHIFT_DRAWS: usize = 200;

const A4_KDE_GRID: usize = 96;

const A5_RATIO_LO: f64 = 1.6;
const A5_RATIO_HI: f64 = 2.4;
const A5_ISOMETRY_TOL: f64 = 1e-3;
const A5_EXPLOG_TOL: f64 = 1e-6;
const A5_PHASE_EXPECTED: f64 = 0.33984;
const A5_PHASE_TOL: f64 = 2e-3;
const A5_DP_REL_TOL: f64 = 1e-12;
const A5_MAX_SECONDS: f64 = 60.0;

const A6_SE_FACTOR: f64 = 3.0;

// --- seeds ------------------------------------------------------------------

const EX1_DATA_SEED: u64 = 2026;
const EX1_CHAIN_SEED: u64 = 1001;
const PREDICTIVE_SEED: u64 = 2002;
const EX2_DATA_SEED: u64 = 2027;
const EX2_CHAIN_SEED: u64 = 1003;
const A4_CHAIN_SEED: u64 = 1004;
const A6_CHAIN_SEED: u64 = 19;

// --- shared helpers ---------------------------------------------------------

fn gate(id: &str, name: &str, ok: bool, detail: String) {
    println!("{id} {name}: {} ({detail})", if ok { "PASS" } else { "FAIL" });
    assert!(ok, "{id} {name} failed: {detail}");
}

fn quantile(sorted: &[f64], p: f64) -> f64 {
    let pos = p * (sorted.len() - 1) as f64;
    let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
    let w = pos - lo as f64;
    sorted[lo] * (1.0 - w) + sorted[hi] * w
}

fn credible_interval(samples: &PosteriorSamples, dim: usize, level: f64) -> (f64, f64) {
    let mut draws: Vec<f64> = samples.theta.iter().map(|r| r[dim]).collect();
    draws.sort_by(f64::total_cmp);
    let tail = 0.5 * (1.0 - level);
    (quantile(&draws, tail), quantile(&draws, 1.0 - tail))
}

fn zero_shooting(grid: &Grid) -> ShootingVector {
    ShootingVector::new(grid.clone(), vec![0.0; grid.len()]).unwrap()
}

fn l2_diff(grid: &Grid, a: &[f64], b: &[f64]) -> f64 {
    let sq: Vec<f64> = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).collect();
    trapezoid(grid, &sq).max(0.0).sqrt()
}

fn srvf_distance(a: &Srvf, b: &Srvf) -> f64 {
    l2_diff(&a.grid, a.values(), b.values())
}

/// Argmax on the grid, then one parabolic refinement through the neighbors.
fn peak_location(f: &GridFunction) -> f64 {
    let (vals, t) = (f.values(), f.grid.points());
    let mut imax = 0;
    for (i, &v) in vals.iter().enumerate() {
        if v > vals[imax] {
            imax = i;
        }
    }
    if imax == 0 || imax == vals.len() - 1 {
        return t[imax];
    }
    let (ym, y0, yp) = (vals[imax - 1], vals[imax], vals[imax + 1]);
    let denom = ym - 2.0 * y0 + yp;
    if denom.abs() < 1e-300 {
        return t[imax];
    }
    let off = (0.5 * (ym - yp) / denom).clamp(-0.5, 0.5);
    t[imax] + off * (t[imax] - t[imax - 1])
}

fn shooting_as_curves(grid: &Grid, dec: &warpcal_core::align::DecomposedEnsemble) -> Vec<GridFunction> {
    dec.shooting_vectors
        .iter()
        .map(|v| GridFunction::new(grid.clone(), v.values().to_vec()).unwrap())
        .collect()
}

fn uniform_priors(ranges: &[(f64, f64)]) -> Vec<Prior> {
    ranges.iter().map(|&(lo, hi)| Prior::uniform(lo, hi).unwrap()).collect()
}

// --- first-study artifacts shared by A1, A2, and A4 -------------------------

struct FirstStudy {
    grid: Grid,
    observation: GridFunction,
    raw_inputs: Vec<Vec<f64>>,
    raw_curves: Vec<GridFunction>,
    problem: CalibrationProblem,
    samples: PosteriorSamples,
    elapsed_seconds: f64,
}

static FIRST_STUDY: OnceLock<FirstStudy> = OnceLock::new();

fn first_study() -> &'static FirstStudy {
    FIRST_STUDY.get_or_init(|| {
        let grid = default_grid();
        let (design, curves, observation) = example1_ensemble(&grid, EX1_DATA_SEED).unwrap();
        let started = Instant::now();
        let dec = decompose_ensemble(&observation, &curves, &design.inputs, 0.0).unwrap();
        let em_aligned =
            train(&dec.inputs, &dec.aligned_curves, ALIGNED_VARIANCE_TARGET).unwrap();
        let em_shooting = train(
            &dec.inputs,
            &shooting_as_curves(&grid, &dec),
            SHOOTING_VARIANCE_TARGET,
        )
        .unwrap();
        let experiment = Experiment {
            aligned_obs: observation.clone(),
            shooting_obs: zero_shooting(&grid),
            condition: vec![],
        };
        let problem = CalibrationProblem::new(
            vec![experiment],
            Forward::Emulators { aligned: em_aligned, shooting: em_shooting },
            3,
            uniform_priors(&[(0.0, 1.0); 3]),
            None,
            None,
        )
        .unwrap();
        let config = McmcConfig {
            n_iter: 20_000,
            n_burn: 5_000,
            seed: EX1_CHAIN_SEED,
            ..McmcConfig::default()
        };
        let samples = mcmc_sample(&problem, &config).unwrap();
        let elapsed_seconds = started.elapsed().as_secs_f64();
        FirstStudy {
            grid,
            observation,
            raw_inputs: design.inputs,
            raw_curves: curves,
            problem,
            samples,
            elapsed_seconds,
        }
    })
}

// --- A1 ---------------------------------------------------------------------

#[test]
fn a1_first_study_posterior_recovers_the_inputs() {
    let fs = first_study();
    let (lo0, hi0) = credible_interval(&fs.samples, 0, CI_LEVEL);
    let (lo1, hi1) = credible_interval(&fs.samples, 1, CI_LEVEL);
    let inert: Vec<f64> = fs.samples.theta.iter().map(|r| r[2]).collect();
    let ks = ks_statistic(&inert, |x| x.clamp(0.0, 1.0));
    let cover0 = lo0 <= EXAMPLE1_TRUTH[0] && EXAMPLE1_TRUTH[0] <= hi0;
    let cover1 = lo1 <= EXAMPLE1_TRUTH[1] && EXAMPLE1_TRUTH[1] <= hi1;
    let in_time = fs.elapsed_seconds < A1_MAX_SECONDS;
    let ok = cover0 && cover1 && ks < A1_KS_MAX && in_time;
    gate(
        "A1",
        "first-study posterior recovery",
        ok,
        format!(
            "theta0 CI [{lo0:.4}, {hi0:.4}] vs {}, theta1 CI [{lo1:.4}, {hi1:.4}] vs {}, \
             inert-dimension KS {ks:.3} < {A1_KS_MAX}, {:.0} s < {A1_MAX_SECONDS:.0} s",
            EXAMPLE1_TRUTH[0], EXAMPLE1_TRUTH[1], fs.elapsed_seconds
        ),
    );
}

// --- A2 ---------------------------------------------------------------------

#[test]
fn a2_predictive_band_covers_the_observation() {
    let fs = first_study();
    let pred =
        posterior_predict(&fs.problem, &fs.samples, 0, A2_N_DRAWS, PREDICTIVE_SEED).unwrap();
    let n_pts = fs.grid.len();
    let tail = 0.5 * (1.0 - CI_LEVEL);
    let mut inside = 0usize;
    for j in 0..n_pts {
        let mut col: Vec<f64> = pred.curves.iter().map(|c| c.values()[j]).collect();
        col.sort_by(f64::total_cmp);
        let (lo, hi) = (quantile(&col, tail), quantile(&col, 1.0 - tail));
        let z = fs.observation.values()[j];
        if lo <= z && z <= hi {
            inside += 1;
        }
    }
    let fraction = inside as f64 / n_pts as f64;
    let ok = fraction >= A2_COVERAGE_FLOOR;
    gate(
        "A2",
        "predictive band coverage",
        ok,
        format!(
            "coverage {fraction:.3} (target {A2_COVERAGE_TARGET}, floor {A2_COVERAGE_FLOOR}; \
             {inside}/{n_pts} points, {} draws resampled)",
            pred.resampled
        ),
    );
}

// --- A3 ---------------------------------------------------------------------

fn induced_shift_for_draw(
    grid: &Grid,
    em_aligned: &Emulator,
    em_shooting: &Emulator,
    basis: &DiscrepancyBasis,
    theta: &[f64],
    coeffs: &[f64],
) -> Option<f64> {
    let vhat = em_shooting.predict(theta).ok()?.mean;
    let delta = basis.evaluate(coeffs).ok()?;
    let with_vals: Vec<f64> =
        vhat.values().iter().zip(&delta).map(|(a, b)| a + b).collect();
    let v_with = ShootingVector::projected(grid.clone(), with_vals).ok()?;
    let v_without = ShootingVector::projected(grid.clone(), vhat.values().to_vec()).ok()?;
    let g_with = shooting_to_gamma(&v_with).ok()?;
    let g_without = shooting_to_gamma(&v_without).ok()?;
    let yhat = em_aligned.predict(theta).ok()?.mean;
    let p_with = peak_location(&apply_warp(&yhat, &g_with).ok()?);
    let p_without = peak_location(&apply_warp(&yhat, &g_without).ok()?);
    Some(p_with - p_without)
}

#[test]
fn a3_second_study_recovers_inputs_and_the_induced_shift() {
    let grid = default_grid();
    let (design, curves, observation) = example2_ensemble(&grid, EX2_DATA_SEED).unwrap();
    let dec = decompose_ensemble(&observation, &curves, &design.inputs, 0.0).unwrap();
    let em_aligned = train(&dec.inputs, &dec.aligned_curves, ALIGNED_VARIANCE_TARGET).unwrap();
    let em_shooting = train(
        &dec.inputs,
        &shooting_as_curves(&grid, &dec),
        SHOOTING_VARIANCE_TARGET,
    )
    .unwrap();
    let basis = build_shift_discrepancy_basis(&grid, A3_SHIFT_BREAKPOINTS).unwrap();
    let experiment = Experiment {
        aligned_obs: observation.clone(),
        shooting_obs: zero_shooting(&grid),
        condition: vec![],
    };
    let problem = CalibrationProblem::new(
        vec![experiment],
        Forward::Emulators {
            aligned: em_aligned.clone(),
            shooting: em_shooting.clone(),
        },
        3,
        uniform_priors(&[(0.0, 0.4), (0.0, 0.4), (0.0, 1.0)]),
        None,
        Some(basis.clone()),
    )
    .unwrap();
    let config = McmcConfig {
        n_iter: 12_000,
        n_burn: 3_000,
        seed: EX2_CHAIN_SEED,
        ..McmcConfig::default()
    };
    let samples = mcmc_sample(&problem, &config).unwrap();

    let (lo0, hi0) = credible_interval(&samples, 0, CI_LEVEL);
    let (lo1, hi1) = credible_interval(&samples, 1, CI_LEVEL);
    let cover0 = lo0 <= EXAMPLE2_TRUTH[0] && EXAMPLE2_TRUTH[0] <= hi0;
    let cover1 = lo1 <= EXAMPLE2_TRUTH[1] && EXAMPLE2_TRUTH[1] <= hi1;

    let n = samples.theta.len();
    let mut shifts = Vec::new();
    for k in 0..A3_N_SHIFT_DRAWS {
        let i = k * n / A3_N_SHIFT_DRAWS;
        if let Some(s) = induced_shift_for_draw(
            &grid,
            &em_aligned,
            &em_shooting,
            &basis,
            &samples.theta[i],
            &samples.discrepancy_shooting[i],
        ) {
            shifts.push(s);
        }
    }
    let usable = shifts.len();
    let mean_shift = shifts.iter().sum::<f64>() / usable.max(1) as f64;
    let shift_ok =
        usable >= A3_N_SHIFT_DRAWS / 2 && (mean_shift - A3_SHIFT_EXPECTED).abs() <= A3_SHIFT_TOL;

    let ok = cover0 && cover1 && shift_ok;
    gate(
        "A3",
        "second-study recovery with discrepancy",
        ok,
        format!(
            "theta0 CI [{lo0:.4}, {hi0:.4}] vs {}, theta1 CI [{lo1:.4}, {hi1:.4}] vs {}, \
             mean induced shift {mean_shift:.4} vs {A3_SHIFT_EXPECTED} ± {A3_SHIFT_TOL} \
             ({usable}/{A3_N_SHIFT_DRAWS} draws usable)",
            EXAMPLE2_TRUTH[0], EXAMPLE2_TRUTH[1]
        ),
    );
}

// --- A4 ---------------------------------------------------------------------

fn hpd_area_bivariate(samples: &PosteriorSamples) -> f64 {
    let x: Vec<f64> = samples.theta.iter().map(|r| r[0]).collect();
    let y: Vec<f64> = samples.theta.iter().map(|r| r[1]).collect();
    kde2d(&x, &y, A4_KDE_GRID).unwrap().hpd_area(CI_LEVEL)
}

#[test]
fn a4_elastic_posterior_is_tighter_than_pointwise() {
    let fs = first_study();
    // Pointwise contrast: surrogate on the raw, misaligned curves, amplitude
    // block only, no phase information at all.
    let em_raw = train(&fs.raw_inputs, &fs.raw_curves, ALIGNED_VARIANCE_TARGET).unwrap();
    let problem = CalibrationProblem::new(
        vec![Experiment {
            aligned_obs: fs.observation.clone(),
            shooting_obs: zero_shooting(&fs.grid),
            condition: vec![],
        }],
        Forward::Emulators { aligned: em_raw.clone(), shooting: em_raw },
        3,
        uniform_priors(&[(0.0, 1.0); 3]),
        None,
        None,
    )
    .unwrap();
    let config = McmcConfig {
        n_iter: 20_000,
        n_burn: 5_000,
        seed: A4_CHAIN_SEED,
        include_shooting_block: false,
        ..McmcConfig::default()
    };
    let raw_samples = mcmc_sample(&problem, &config).unwrap();

    let elastic_area = hpd_area_bivariate(&fs.samples);
    let pointwise_area = hpd_area_bivariate(&raw_samples);
    let ok = elastic_area < pointwise_area;
    gate(
        "A4",
        "elastic posterior tighter than pointwise",
        ok,
        format!(
            "95% bivariate region area {elastic_area:.5} (elastic) vs {pointwise_area:.5} (pointwise)"
        ),
    );
}

// --- A5 ---------------------------------------------------------------------

/// Sup-norm round-trip error of the square-root transform on a curve with a
/// corner, where the derivative jump limits the scheme to first order.
fn srvf_roundtrip_error(n: usize) -> f64 {
    let grid = Grid::uniform(n, 0.0, 1.0).unwrap();
    let f = GridFunction::from_fn(grid.clone(), |t| 1.0 - (2.0 * t - 1.0).abs()).unwrap();
    let back = from_srvf(&to_srvf(&f));
    f.values()
        .iter()
        .zip(back.values())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max)
}

fn gaussian_bump(grid: &Grid, center: f64, height: f64, width: f64) -> GridFunction {
    GridFunction::from_fn(grid.clone(), move |t| {
        height * (-((t - center) / width).powi(2)).exp()
    })
    .unwrap()
}

/// Enumerate every admissible lattice path on an n-point grid.
fn for_each_lattice_path(n: usize, mut visit: impl FnMut(&[(usize, usize)])) {
    fn recurse(
        n: usize,
        node: (usize, usize),
        path: &mut Vec<(usize, usize)>,
        visit: &mut dyn FnMut(&[(usize, usize)]),
    ) {
        if node == (n - 1, n - 1) {
            visit(path);
            return;
        }
        for &(p, q) in DP_STEPS.iter() {
            let next = (node.0 + p, node.1 + q);
            if next.0 >= n || next.1 >= n {
                continue;
            }
            path.push(next);
            recurse(n, next, path, visit);
            path.pop();
        }
    }
    let mut path = vec![(0, 0)];
    recurse(n, (0, 0), &mut path, &mut visit);
}

#[test]
fn a5_geometry_suite_holds() {
    let started = Instant::now();

    // 1. Square-root transform round trip converges at first order.
    let ratio = srvf_roundtrip_error(201) / srvf_roundtrip_error(401);
    let roundtrip_ok = (A5_RATIO_LO..=A5_RATIO_HI).contains(&ratio);

    // 2. Warping both curves preserves their transform-space distance.
    let g501 = Grid::uniform(501, 0.0, 1.0).unwrap();
    let f1 = gaussian_bump(&g501, 0.35, 1.0, 0.16);
    let f2 = gaussian_bump(&g501, 0.60, 0.8, 0.20);
    let (q1, q2) = (to_srvf(&f1), to_srvf(&f2));
    let e2 = std::f64::consts::E * std::f64::consts::E;
    let gamma = WarpingFunction::new(
        g501.clone(),
        g501.points().iter().map(|&t| ((2.0 * t).exp() - 1.0) / (e2 - 1.0)).collect(),
    )
    .unwrap();
    let d_before = srvf_distance(&q1, &q2);
    let d_after = srvf_distance(
        &group_action(&q1, &gamma).unwrap(),
        &group_action(&q2, &gamma).unwrap(),
    );
    let isometry_err = (d_before - d_after).abs();
    let isometry_ok = isometry_err <= A5_ISOMETRY_TOL;

    // 3. Tangent-space exp/log round trips, both directions.
    let g101 = Grid::uniform(101, 0.0, 1.0).unwrap();
    let v = ShootingVector::new(
        g101.clone(),
        g101.points()
            .iter()
            .map(|&t| 0.8 * (2.0 * std::f64::consts::PI * t).cos())
            .collect(),
    )
    .unwrap();
    let v_back = inv_exp_map(&exp_map_identity(&v).unwrap()).unwrap();
    let explog_v = l2_diff(&g101, v.values(), v_back.values());
    let w = ShootingVector::new(
        g101.clone(),
        g101.points()
            .iter()
            .map(|&t| 0.5 * (2.0 * std::f64::consts::PI * t).sin())
            .collect(),
    )
    .unwrap();
    let psi = exp_map_identity(&w).unwrap();
    let psi_back = exp_map_identity(&inv_exp_map(&psi).unwrap()).unwrap();
    let explog_psi = l2_diff(&g101, psi.values(), psi_back.values());
    let explog_ok = explog_v <= A5_EXPLOG_TOL && explog_psi <= A5_EXPLOG_TOL;

    // 4. Analytic phase distance between the identity and t².
    let identity = WarpingFunction::identity(g101.clone());
    let square = WarpingFunction::new(
        g101.clone(),
        g101.points().iter().map(|&t| t * t).collect(),
    )
    .unwrap();
    let phase = warpcal_core::sphere::phase_distance(&identity, &square).unwrap();
    let phase_ok = (phase - A5_PHASE_EXPECTED).abs() <= A5_PHASE_TOL;

    // 5. The dynamic program matches exhaustive lattice search on 8 points.
    let g8 = Grid::uniform(8, 0.0, 1.0).unwrap();
    let fixtures = [
        (gaussian_bump(&g8, 0.5, 0.6, 0.18), gaussian_bump(&g8, 0.4, 0.9, 0.22), 0.3),
        (gaussian_bump(&g8, 0.35, 1.0, 0.15), gaussian_bump(&g8, 0.65, 0.8, 0.2), 0.0),
    ];
    let mut dp_ok = true;
    let mut dp_detail = String::new();
    for (f_ref, f_mov, lambda) in &fixtures {
        let (q_ref, q_mov) = (to_srvf(f_ref), to_srvf(f_mov));
        let lattice = dp_align_lattice(&q_ref, &q_mov, *lambda).unwrap();
        let mut best = f64::INFINITY;
        let mut n_paths = 0usize;
        for_each_lattice_path(8, |path| {
            n_paths += 1;
            let c = lattice_path_cost(&q_ref, &q_mov, *lambda, path).unwrap();
            if c < best {
                best = c;
            }
        });
        let replayed = lattice_path_cost(&q_ref, &q_mov, *lambda, &lattice.path).unwrap();
        let scale = 1.0 + best.abs();
        let agrees = (lattice.cost - best).abs() <= A5_DP_REL_TOL * scale
            && (replayed - lattice.cost).abs() <= A5_DP_REL_TOL * scale;
        dp_ok &= agrees;
        dp_detail = format!("{n_paths} paths, cost {best:.6}");
    }

    let elapsed = started.elapsed().as_secs_f64();
    let in_time = elapsed < A5_MAX_SECONDS;
    let ok = roundtrip_ok && isometry_ok && explog_ok && phase_ok && dp_ok && in_time;
    gate(
        "A5",
        "geometry suite",
        ok,
        format!(
            "round-trip ratio {ratio:.2} in [{A5_RATIO_LO}, {A5_RATIO_HI}], isometry err \
             {isometry_err:.2e} <= {A5_ISOMETRY_TOL:.0e}, exp/log errs {explog_v:.2e}/\
             {explog_psi:.2e} <= {A5_EXPLOG_TOL:.0e}, phase {phase:.5} vs \
             {A5_PHASE_EXPECTED} ± {A5_PHASE_TOL}, lattice search exact {dp_ok} \
             ({dp_detail}), {elapsed:.1} s < {A5_MAX_SECONDS:.0} s"
        ),
    );
}

// --- A6 ---------------------------------------------------------------------

fn linear_toy_problem(grid_n: usize, n_train: usize) -> (CalibrationProblem, f64, f64) {
    let grid = Grid::uniform(grid_n, 0.0, 1.0).unwrap();
    let shape =
        GridFunction::from_fn(grid.clone(), |t| (std::f64::consts::PI * t).sin()).unwrap();
    let vshape = GridFunction::from_fn(grid.clone(), |t| {
        0.05 * (2.0 * std::f64::consts::PI * t).sin()
    })
    .unwrap();
    let theta_star = 0.37;
    let mut inputs = Vec::new();
    let mut aligned_out = Vec::new();
    let mut shooting_out = Vec::new();
    for i in 0..n_train {
        let a = i as f64 / (n_train - 1) as f64;
        inputs.push(vec![a]);
        let av: Vec<f64> = shape.values().iter().map(|s| 1.0 + (a - 0.5) * s).collect();
        aligned_out.push(GridFunction::new(grid.clone(), av).unwrap());
        let vv: Vec<f64> = vshape.values().iter().map(|s| (a - 0.5) * s).collect();
        shooting_out.push(GridFunction::new(grid.clone(), vv).unwrap());
    }
    let em_aligned = train(&inputs, &aligned_out, 0.999).unwrap();
    let em_shooting = train(&inputs, &shooting_out, 0.999).unwrap();
    let obs: Vec<f64> =
        shape.values().iter().map(|s| 1.0 + (theta_star - 0.5) * s).collect();
    let obs_v: Vec<f64> =
        vshape.values().iter().map(|s| (theta_star - 0.5) * s).collect();
    let experiment = Experiment {
        aligned_obs: GridFunction::new(grid.clone(), obs).unwrap(),
        shooting_obs: ShootingVector::projected(grid.clone(), obs_v).unwrap(),
        condition: vec![],
    };
    let problem = CalibrationProblem::new(
        vec![experiment],
        Forward::Emulators { aligned: em_aligned, shooting: em_shooting },
        1,
        vec![Prior::uniform(0.0, 1.0).unwrap()],
        None,
        None,
    )
    .unwrap();
    // Exact Gaussian posterior: flat prior, fixed noise, linear mean response.
    let ssa: f64 = shape.values().iter().map(|s| s * s).sum();
    let ssv: f64 = vshape.values().iter().map(|s| s * s).sum();
    let precision = ssa / 0.0025 + ssv / 1.0;
    (problem, theta_star, precision.powf(-0.5))
}

#[test]
fn a6_linear_gaussian_chain_matches_the_analytic_posterior() {
    let (problem, theta_star, post_sd) = linear_toy_problem(41, 40);
    let config = McmcConfig {
        n_iter: 6_000,
        n_burn: 1_500,
        seed: A6_CHAIN_SEED,
        inflate_surrogate_variance: false,
        fix_sigma2_aligned: Some(0.0025),
        fix_sigma2_shooting: Some(1.0),
        ..McmcConfig::default()
    };
    let samples = mcmc_sample(&problem, &config).unwrap();
    let draws: Vec<f64> = samples.theta.iter().map(|r| r[0]).collect();
    let mean = draws.iter().sum::<f64>() / draws.len() as f64;
    let ess = effective_sample_size(&draws);
    let mc_se = post_sd / ess.sqrt();
    let mean_ok = (mean - theta_star).abs() <= A6_SE_FACTOR * mc_se;

    let repeat = mcmc_sample(&problem, &config).unwrap();
    let deterministic = samples.theta == repeat.theta
        && samples.log_posterior == repeat.log_posterior
        && samples.sigma2_aligned == repeat.sigma2_aligned;

    let ok = mean_ok && deterministic;
    gate(
        "A6",
        "linear-Gaussian chain correctness",
        ok,
        format!(
            "posterior mean {mean:.5} vs {theta_star} (|err| {:.2e} <= {A6_SE_FACTOR}*SE {:.2e}, \
             ESS {ess:.0}), deterministic rerun {deterministic}",
            (mean - theta_star).abs(),
            A6_SE_FACTOR * mc_se
        ),
    );
}
