use warpcal_core::emulator::train;
use warpcal_core::grid::{Grid, GridFunction};

fn main() {
    let grid = Grid::uniform(21, 0.0, 1.0).unwrap();
    let shape = GridFunction::from_fn(grid.clone(), |t| (std::f64::consts::PI * t).sin()).unwrap();
    let vshape =
        GridFunction::from_fn(grid.clone(), |t| 0.05 * (2.0 * std::f64::consts::PI * t).sin())
            .unwrap();
    let n = 12;
    let mut inputs = Vec::new();
    let mut aligned = Vec::new();
    let mut shooting = Vec::new();
    for i in 0..n {
        let a = i as f64 / (n - 1) as f64;
        inputs.push(vec![a]);
        aligned.push(
            GridFunction::new(
                grid.clone(),
                shape.values().iter().map(|s| 1.0 + (a - 0.5) * s).collect(),
            )
            .unwrap(),
        );
        shooting.push(
            GridFunction::new(
                grid.clone(),
                vshape.values().iter().map(|s| (a - 0.5) * s).collect(),
            )
            .unwrap(),
        );
    }
    let em_a = train(&inputs, &aligned, 0.999).unwrap();
    let em_v = train(&inputs, &shooting, 0.999).unwrap();
    println!("aligned[0] head {:?}", &aligned[0].values()[..5]);
    println!("aligned[11] head {:?}", &aligned[11].values()[..5]);
    println!("shape head {:?}", &shape.values()[..5]);
    let direct = warpcal_core::emulator::fpca_fit(&aligned, 0.999).unwrap();
    let dcomp = &direct.components()[0];
    for j in [1, 10, 19] {
        let t = grid.points()[j];
        let s = (std::f64::consts::PI * t).sin();
        println!("direct fpca: t {:.2} ratio {:.4}", t, dcomp.values()[j] / s);
    }
    let comp = &em_a.basis().components()[0];
    println!("mean curve head {:?}", &em_a.basis().mean_curve().values()[..4]);
    for j in [1, 5, 10, 15, 19] {
        let t = grid.points()[j];
        let s = (std::f64::consts::PI * t).sin();
        println!(
            "  t {:.2} comp {:.4} sin-ratio {:.4}",
            t,
            comp.values()[j],
            comp.values()[j] / s
        );
    }
    for (i, c) in aligned.iter().enumerate() {
        let s = em_a.basis().project(c).unwrap();
        let recon = em_a.basis().reconstruct(&s).unwrap();
        let err: f64 = c
            .values()
            .iter()
            .zip(recon.values())
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        println!("run {i}: a {:.3} score {:?} recon err {:.3e}", i as f64 / 11.0, s, err);
    }
    for (name, em) in [("aligned", &em_a), ("shooting", &em_v)] {
        let p = em.predict(&[0.4]).unwrap();
        let max_sd = p.pointwise_sd.values().iter().cloned().fold(0.0, f64::max);
        let rv = em.residual_variance();
        let tv_max = em.truncation_variance().iter().cloned().fold(0.0, f64::max);
        println!(
            "{name}: comps {} rv {:?} trunc_max {:.2e} claimed max sd {:.4}",
            em.basis().n_comp(),
            rv,
            tv_max,
            max_sd
        );
    }
}
