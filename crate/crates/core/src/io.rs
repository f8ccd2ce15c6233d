//! File formats: curve-matrix and design CSVs, decomposition directories,
//! and chain output, all round-trippable and versioned where structured.

use crate::align::{DecomposedEnsemble, WarpingFunction};
use crate::grid::{Grid, GridFunction};
use crate::sphere::ShootingVector;
use crate::{Error, Result};
use serde::{Deserialize, Serialize};
use std::path::Path;

/// Version stamp for structured metadata files.
pub const META_SCHEMA_VERSION: u32 = 1;

/// Write curves as a wide CSV: first column the grid, one column per curve.
pub fn write_curves_csv(path: impl AsRef<Path>, curves: &[GridFunction]) -> Result<()> {
    if curves.is_empty() {
        return Err(Error::Data("no curves to write".into()));
    }
    let grid = &curves[0].grid;
    if curves.iter().any(|c| c.grid != *grid) {
        return Err(Error::ShapeMismatch("curves on differing grids".into()));
    }
    let mut w = csv::Writer::from_path(path.as_ref())?;
    let mut header = vec!["t".to_string()];
    header.extend((0..curves.len()).map(|i| format!("curve_{i}")));
    w.write_record(&header)?;
    for (j, &t) in grid.points().iter().enumerate() {
        let mut row = vec![format!("{t:.17e}")];
        row.extend(curves.iter().map(|c| format!("{:.17e}", c.values()[j])));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Read a wide curve CSV written by [`write_curves_csv`].
pub fn read_curves_csv(path: impl AsRef<Path>) -> Result<Vec<GridFunction>> {
    let mut r = csv::Reader::from_path(path.as_ref())?;
    let n_cols = r.headers()?.len();
    if n_cols < 2 {
        return Err(Error::Data("curve file needs a grid column and at least one curve".into()));
    }
    let mut points = Vec::new();
    let mut columns: Vec<Vec<f64>> = vec![Vec::new(); n_cols - 1];
    for rec in r.records() {
        let rec = rec?;
        if rec.len() != n_cols {
            return Err(Error::Data(format!(
                "ragged curve file row: {} fields, expected {n_cols}",
                rec.len()
            )));
        }
        let parse = |s: &str| -> Result<f64> {
            s.trim().parse::<f64>().map_err(|_| Error::Data(format!("bad number {s:?}")))
        };
        points.push(parse(&rec[0])?);
        for (k, col) in columns.iter_mut().enumerate() {
            col.push(parse(&rec[k + 1])?);
        }
    }
    let grid = Grid::new(points)?;
    columns
        .into_iter()
        .map(|values| GridFunction::new(grid.clone(), values))
        .collect()
}

/// Write a design matrix: one row per run, columns `u0..u{p-1}`.
pub fn write_design_csv(path: impl AsRef<Path>, inputs: &[Vec<f64>]) -> Result<()> {
    if inputs.is_empty() {
        return Err(Error::Data("empty design".into()));
    }
    let p = inputs[0].len();
    if inputs.iter().any(|r| r.len() != p) {
        return Err(Error::ShapeMismatch("ragged design rows".into()));
    }
    let mut w = csv::Writer::from_path(path.as_ref())?;
    let header: Vec<String> = (0..p).map(|d| format!("u{d}")).collect();
    w.write_record(&header)?;
    for row in inputs {
        let rec: Vec<String> = row.iter().map(|v| format!("{v:.17e}")).collect();
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Read a design matrix written by [`write_design_csv`].
pub fn read_design_csv(path: impl AsRef<Path>) -> Result<Vec<Vec<f64>>> {
    let mut r = csv::Reader::from_path(path.as_ref())?;
    let p = r.headers()?.len();
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        if rec.len() != p {
            return Err(Error::Data(format!(
                "ragged design row: {} fields, expected {p}",
                rec.len()
            )));
        }
        let row: Result<Vec<f64>> = rec
            .iter()
            .map(|s| {
                s.trim().parse::<f64>().map_err(|_| Error::Data(format!("bad number {s:?}")))
            })
            .collect();
        rows.push(row?);
    }
    Ok(rows)
}

/// Metadata accompanying a decomposition directory.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DecompositionMeta {
    pub schema_version: u32,
    pub reference_index: Option<usize>,
    pub penalty_lambda: f64,
    pub grid: Vec<f64>,
    pub n_curves: usize,
}

/// Write a decomposition as a directory: `aligned.csv`, `warps.csv`,
/// `shooting.csv`, `design.csv`, and `meta.json`.
pub fn write_decomposition(
    dir: impl AsRef<Path>,
    dec: &DecomposedEnsemble,
    reference_index: Option<usize>,
    penalty_lambda: f64,
) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir)?;
    write_curves_csv(dir.join("aligned.csv"), &dec.aligned_curves)?;
    let grid = &dec.reference.grid;
    let warp_fns: Vec<GridFunction> = dec
        .warps
        .iter()
        .map(|w| GridFunction::new(grid.clone(), w.values().to_vec()))
        .collect::<Result<_>>()?;
    write_curves_csv(dir.join("warps.csv"), &warp_fns)?;
    let shoot_fns: Vec<GridFunction> = dec
        .shooting_vectors
        .iter()
        .map(|v| GridFunction::new(grid.clone(), v.values().to_vec()))
        .collect::<Result<_>>()?;
    write_curves_csv(dir.join("shooting.csv"), &shoot_fns)?;
    if !dec.inputs.is_empty() && !dec.inputs[0].is_empty() {
        write_design_csv(dir.join("design.csv"), &dec.inputs)?;
    }
    let meta = DecompositionMeta {
        schema_version: META_SCHEMA_VERSION,
        reference_index,
        penalty_lambda,
        grid: grid.points().to_vec(),
        n_curves: dec.aligned_curves.len(),
    };
    std::fs::write(dir.join("meta.json"), serde_json::to_string_pretty(&meta)?)?;
    Ok(())
}

/// Read back a decomposition directory written by [`write_decomposition`].
pub fn read_decomposition(
    dir: impl AsRef<Path>,
    reference: GridFunction,
) -> Result<(DecomposedEnsemble, DecompositionMeta)> {
    let dir = dir.as_ref();
    let meta: DecompositionMeta =
        serde_json::from_str(&std::fs::read_to_string(dir.join("meta.json"))?)?;
    if meta.schema_version != META_SCHEMA_VERSION {
        return Err(Error::Config(format!(
            "decomposition schema {} unsupported (expected {})",
            meta.schema_version, META_SCHEMA_VERSION
        )));
    }
    let aligned_curves = read_curves_csv(dir.join("aligned.csv"))?;
    let warps_raw = read_curves_csv(dir.join("warps.csv"))?;
    let shooting_raw = read_curves_csv(dir.join("shooting.csv"))?;
    let warps: Vec<WarpingFunction> = warps_raw
        .into_iter()
        .map(|g| WarpingFunction::new(g.grid.clone(), g.values().to_vec()))
        .collect::<Result<_>>()?;
    let shooting_vectors: Vec<ShootingVector> = shooting_raw
        .into_iter()
        .map(|g| ShootingVector::new(g.grid.clone(), g.values().to_vec()))
        .collect::<Result<_>>()?;
    let inputs = if dir.join("design.csv").exists() {
        read_design_csv(dir.join("design.csv"))?
    } else {
        vec![vec![]; aligned_curves.len()]
    };
    Ok((
        DecomposedEnsemble { reference, aligned_curves, warps, shooting_vectors, inputs },
        meta,
    ))
}

/// Write a generic labeled-column table of f64 rows.
pub fn write_table_csv(
    path: impl AsRef<Path>,
    headers: &[String],
    rows: &[Vec<f64>],
) -> Result<()> {
    let mut w = csv::Writer::from_path(path.as_ref())?;
    w.write_record(headers)?;
    for row in rows {
        if row.len() != headers.len() {
            return Err(Error::ShapeMismatch(format!(
                "row of {} fields under {} headers",
                row.len(),
                headers.len()
            )));
        }
        let rec: Vec<String> = row.iter().map(|v| format!("{v:.17e}")).collect();
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Read a labeled-column f64 table; returns (headers, rows).
pub fn read_table_csv(path: impl AsRef<Path>) -> Result<(Vec<String>, Vec<Vec<f64>>)> {
    let mut r = csv::Reader::from_path(path.as_ref())?;
    let headers: Vec<String> = r.headers()?.iter().map(|s| s.to_string()).collect();
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let row: Result<Vec<f64>> = rec
            .iter()
            .map(|s| {
                s.trim().parse::<f64>().map_err(|_| Error::Data(format!("bad number {s:?}")))
            })
            .collect();
        rows.push(row?);
    }
    Ok((headers, rows))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::align::decompose_ensemble;
    use approx::assert_abs_diff_eq;

    fn bump_curves() -> Vec<GridFunction> {
        let g = Grid::uniform(51, 0.0, 1.0).unwrap();
        (0..5)
            .map(|i| {
                let c = 0.3 + 0.08 * i as f64;
                GridFunction::from_fn(g.clone(), move |t| {
                    (-0.5 * ((t - c) / 0.06).powi(2)).exp()
                })
                .unwrap()
            })
            .collect()
    }

    #[test]
    fn curves_round_trip_bitwise() {
        let curves = bump_curves();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("curves.csv");
        write_curves_csv(&path, &curves).unwrap();
        let back = read_curves_csv(&path).unwrap();
        assert_eq!(curves.len(), back.len());
        for (a, b) in curves.iter().zip(&back) {
            assert_eq!(a.grid.points(), b.grid.points());
            assert_eq!(a.values(), b.values());
        }
    }

    #[test]
    fn design_round_trips_bitwise() {
        let design = vec![vec![0.1, 0.9, 0.5], vec![0.25, 1.0 / 3.0, 1e-17]];
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("design.csv");
        write_design_csv(&path, &design).unwrap();
        let back = read_design_csv(&path).unwrap();
        assert_eq!(design, back);
    }

    #[test]
    fn ragged_and_empty_inputs_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        assert!(write_curves_csv(dir.path().join("x.csv"), &[]).is_err());
        assert!(write_design_csv(dir.path().join("y.csv"), &[]).is_err());
        assert!(write_design_csv(
            dir.path().join("z.csv"),
            &[vec![1.0], vec![1.0, 2.0]]
        )
        .is_err());
    }

    #[test]
    fn malformed_numbers_are_data_errors() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.csv");
        std::fs::write(&path, "t,curve_0\n0.0,1.0\n0.5,oops\n1.0,2.0\n").unwrap();
        assert!(read_curves_csv(&path).is_err());
    }

    #[test]
    fn decomposition_directory_round_trips() {
        let curves = bump_curves();
        let inputs: Vec<Vec<f64>> = (0..5).map(|i| vec![i as f64 / 4.0, 0.3]).collect();
        let dec = decompose_ensemble(&curves[2], &curves, &inputs, 0.0).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("dec");
        write_decomposition(&out, &dec, Some(2), 0.0).unwrap();
        for name in ["aligned.csv", "warps.csv", "shooting.csv", "design.csv", "meta.json"] {
            assert!(out.join(name).exists(), "{name} missing");
        }
        let (back, meta) = read_decomposition(&out, curves[2].clone()).unwrap();
        assert_eq!(meta.reference_index, Some(2));
        assert_eq!(meta.n_curves, 5);
        assert_eq!(back.inputs, inputs);
        for (a, b) in dec.aligned_curves.iter().zip(&back.aligned_curves) {
            for (x, y) in a.values().iter().zip(b.values()) {
                assert_abs_diff_eq!(x, y, epsilon = 1e-15);
            }
        }
        // Warp rows survive the warp-validity checks on reload.
        for (a, b) in dec.warps.iter().zip(&back.warps) {
            for (x, y) in a.values().iter().zip(b.values()) {
                assert_abs_diff_eq!(x, y, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn wrong_meta_schema_is_rejected() {
        let curves = bump_curves();
        let inputs: Vec<Vec<f64>> = (0..5).map(|i| vec![i as f64 / 4.0]).collect();
        let dec = decompose_ensemble(&curves[0], &curves, &inputs, 0.0).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("dec");
        write_decomposition(&out, &dec, Some(0), 0.0).unwrap();
        let meta_path = out.join("meta.json");
        let text = std::fs::read_to_string(&meta_path)
            .unwrap()
            .replace("\"schema_version\": 1", "\"schema_version\": 9");
        std::fs::write(&meta_path, text).unwrap();
        assert!(read_decomposition(&out, curves[0].clone()).is_err());
    }

    #[test]
    fn table_round_trips_and_checks_shape() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("table.csv");
        let headers = vec!["a".to_string(), "b".to_string()];
        let rows = vec![vec![1.5, -2.0], vec![0.0, 1e-300]];
        write_table_csv(&path, &headers, &rows).unwrap();
        let (h, r) = read_table_csv(&path).unwrap();
        assert_eq!(h, headers);
        assert_eq!(r, rows);
        assert!(write_table_csv(&path, &headers, &[vec![1.0]]).is_err());
    }

    #[test]
    fn shooting_rows_integrate_to_zero() {
        let curves = bump_curves();
        let inputs: Vec<Vec<f64>> = (0..5).map(|i| vec![i as f64 / 4.0]).collect();
        let dec = decompose_ensemble(&curves[2], &curves, &inputs, 0.0).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("dec");
        write_decomposition(&out, &dec, Some(2), 0.0).unwrap();
        let rows = read_curves_csv(out.join("shooting.csv")).unwrap();
        for v in &rows {
            let mass = crate::grid::trapezoid(&v.grid, v.values());
            assert_abs_diff_eq!(mass, 0.0, epsilon = 1e-6);
        }
    }
}
