use nalgebra::DMatrix;

fn main() {
    // Exact replica of the basis-fit matrix for the rank-1 toy family.
    let n = 12;
    let nt = 21;
    let s: Vec<f64> = (0..nt).map(|j| (std::f64::consts::PI * j as f64 / 20.0).sin()).collect();
    let h = 1.0 / 20.0;
    let mut w = vec![0.0; nt];
    for j in 0..nt - 1 {
        w[j] += 0.5 * h;
        w[j + 1] += 0.5 * h;
    }
    let sqrt_w: Vec<f64> = w.iter().map(|x| f64::sqrt(*x)).collect();
    let curves: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            let a = i as f64 / 11.0;
            s.iter().map(|sv| 1.0 + (a - 0.5) * sv).collect()
        })
        .collect();
    let mean: Vec<f64> = (0..nt)
        .map(|j| curves.iter().map(|c| c[j]).sum::<f64>() / n as f64)
        .collect();
    let b = DMatrix::from_fn(n, nt, |i, j| (curves[i][j] - mean[j]) * sqrt_w[j]);
    let svd = b.svd(false, true);
    let vals: Vec<f64> = svd.singular_values.iter().copied().collect();
    println!("singular values head: {:?}", &vals[..5]);
    let imax = (0..vals.len()).max_by(|&a, &b| vals[a].total_cmp(&vals[b])).unwrap();
    println!("argmax singular {}", imax);
    let v_t = svd.v_t.as_ref().unwrap();
    let comp: Vec<f64> = (0..nt).map(|j| v_t[(imax, j)] / sqrt_w[j]).collect();
    for j in [1, 5, 10, 15, 19] {
        println!("  t {:.2} comp {:.4} ratio-to-sin {:.4}", j as f64 / 20.0, comp[j], comp[j] / s[j]);
    }
}
