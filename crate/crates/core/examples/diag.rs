use warpcal_core::align::decompose_ensemble;
use warpcal_core::calibrate::{
    log_likelihood, mcmc_sample, CalibrationProblem, Experiment, Forward, McmcConfig, Prior,
};
use warpcal_core::emulator::train;
use warpcal_core::grid::{Grid, GridFunction};
use warpcal_core::sphere::ShootingVector;
use warpcal_core::synthetic::{default_grid, example1_ensemble, EXAMPLE1_TRUTH};

fn zero_shooting(grid: &Grid) -> ShootingVector {
    ShootingVector::new(grid.clone(), vec![0.0; grid.len()]).unwrap()
}

fn main() {
    let grid = default_grid();
    let (design, curves, observation) = example1_ensemble(&grid, 2026).unwrap();
    let dec = decompose_ensemble(&observation, &curves, &design.inputs, 0.0).unwrap();
    let shooting_fns: Vec<GridFunction> = dec
        .shooting_vectors
        .iter()
        .map(|v| GridFunction::new(grid.clone(), v.values().to_vec()).unwrap())
        .collect();
    let em_a = train(&dec.inputs, &dec.aligned_curves, 0.999).unwrap();
    let em_v = train(&dec.inputs, &shooting_fns, 0.995).unwrap();
    println!(
        "aligned comps {} shooting comps {}  cv-resvar(aligned) {:?}",
        em_a.basis().components().len(),
        em_v.basis().components().len(),
        em_a.residual_variance()
    );

    // Truncation misfit of the observation itself under the aligned basis.
    let s = em_a.basis().project(&observation).unwrap();
    let recon = em_a.basis().reconstruct(&s).unwrap();
    let trunc_mse: f64 = observation
        .values()
        .iter()
        .zip(recon.values())
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        / grid.len() as f64;
    println!("obs truncation mse {:.3e} (sd {:.4})", trunc_mse, trunc_mse.sqrt());

    // Claimed emulator sd and actual misfit to z at truth.
    let p = em_a.predict(&EXAMPLE1_TRUTH).unwrap();
    let mse_truth: f64 = observation
        .values()
        .iter()
        .zip(p.mean.values())
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        / grid.len() as f64;
    let claimed: f64 =
        p.pointwise_sd.values().iter().map(|s| s * s).sum::<f64>() / grid.len() as f64;
    println!(
        "at truth: aligned rms misfit {:.4}, claimed sd {:.4}",
        mse_truth.sqrt(),
        claimed.sqrt()
    );
    let pv = em_v.predict(&EXAMPLE1_TRUTH).unwrap();
    let vm: f64 =
        pv.mean.values().iter().map(|v| v * v).sum::<f64>() / grid.len() as f64;
    let vc: f64 =
        pv.pointwise_sd.values().iter().map(|s| s * s).sum::<f64>() / grid.len() as f64;
    println!("at truth: shooting rms misfit {:.4}, claimed sd {:.4}", vm.sqrt(), vc.sqrt());

    // Fitted hyperparameters of each aligned-component model.
    em_a.save_json("/tmp/em_a.json").unwrap();
    let json: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string("/tmp/em_a.json").unwrap()).unwrap();
    for (k, m) in json["coefficient_models"].as_array().unwrap().iter().enumerate() {
        let ls: Vec<f64> = m["log_lengthscales"]
            .as_array()
            .unwrap()
            .iter()
            .map(|v| v.as_f64().unwrap().exp())
            .collect();
        println!(
            "aligned comp {k}: lengthscales {:?} signal {:.3} nugget {:.2e}",
            ls.iter().map(|l| (l * 1000.0).round() / 1000.0).collect::<Vec<_>>(),
            m["log_signal"].as_f64().unwrap().exp().powi(2),
            m["log_nugget"].as_f64().unwrap().exp().powi(2),
        );
    }

    let experiment = Experiment {
        aligned_obs: observation.clone(),
        shooting_obs: zero_shooting(&grid),
        condition: vec![],
    };
    let problem = CalibrationProblem::new(
        vec![experiment],
        Forward::Emulators { aligned: em_a, shooting: em_v },
        3,
        vec![
            Prior::uniform(0.0, 1.0).unwrap(),
            Prior::uniform(0.0, 1.0).unwrap(),
            Prior::uniform(0.0, 1.0).unwrap(),
        ],
        None,
        None,
    )
    .unwrap();

    // Likelihood profile over theta0 at fixed plausible sigmas.
    let s2 = trunc_mse.max(1e-8);
    println!("profile at s2a = {:.2e}, s2v = 1e-4:", s2);
    for k in 0..13 {
        let t0 = 0.04 + 0.02 * k as f64;
        let ll = log_likelihood(
            &problem,
            &[t0, EXAMPLE1_TRUTH[1], 0.5],
            s2,
            1e-4,
            &[],
            &[],
            true,
        )
        .unwrap();
        println!("  t0 {:.3} ll {:.2}", t0, ll);
    }

    println!("profile over inert theta2 at truth:");
    for k in 0..11 {
        let t2 = 0.05 + 0.09 * k as f64;
        let ll = log_likelihood(
            &problem,
            &[EXAMPLE1_TRUTH[0], EXAMPLE1_TRUTH[1], t2],
            5.28e-4,
            2.97e-4,
            &[],
            &[],
            true,
        )
        .unwrap();
        println!("  t2 {:.2} ll {:.2}", t2, ll);
    }

    let config = McmcConfig { n_iter: 20_000, n_burn: 5_000, seed: 1001, ..McmcConfig::default() };
    let samples = mcmc_sample(&problem, &config).unwrap();
    let n = samples.theta.len();
    let mean = |k: usize| samples.theta.iter().map(|r| r[k]).sum::<f64>() / n as f64;
    let s2a = samples.sigma2_aligned.iter().sum::<f64>() / n as f64;
    let s2v = samples.sigma2_shooting.iter().sum::<f64>() / n as f64;
    println!(
        "posterior theta means ({:.4}, {:.4}, {:.4}) vs truth ({:.4}, {:.4}, -)",
        mean(0),
        mean(1),
        mean(2),
        EXAMPLE1_TRUTH[0],
        EXAMPLE1_TRUTH[1]
    );
    println!(
        "posterior s2a {:.3e} (sd {:.4})  s2v {:.3e} (sd {:.4})",
        s2a,
        s2a.sqrt(),
        s2v,
        s2v.sqrt()
    );
    println!(
        "acceptance: walk {:.3} refresh {:.3} s2a {:.3} s2v {:.3}",
        samples.acceptance.theta_walk,
        samples.acceptance.theta_refresh,
        samples.acceptance.sigma2_aligned,
        samples.acceptance.sigma2_shooting
    );
    for k in 0..3 {
        let chain: Vec<f64> = samples.theta.iter().map(|r| r[k]).collect();
        let ess = warpcal_core::diagnostics::effective_sample_size(&chain);
        let mut sorted = chain.clone();
        sorted.sort_by(f64::total_cmp);
        println!(
            "theta{} ess {:.0}/{}  q05/q50/q95 {:.4} {:.4} {:.4}",
            k,
            ess,
            n,
            sorted[n * 5 / 100],
            sorted[n / 2],
            sorted[n * 95 / 100]
        );
    }
}
