//! Synthetic two-sample problems and CSV ingestion.

use std::path::Path;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{invalid, Error, Result};
use crate::features::Dataset;
use crate::rng::DpRng;

pub const SG_DIM: usize = 50;
pub const GMD_DIM: usize = 100;
pub const GVD_DIM: usize = 50;

fn normals(n: usize, d: usize, rng: &mut DpRng) -> Vec<f64> {
    (0..n * d).map(|_| rng.sample(StandardNormal)).collect()
}

fn check_n(n: usize) -> Result<()> {
    if n < 2 {
        Err(Error::TooFewSamples { min: 2, got: n })
    } else {
        Ok(())
    }
}

/// Same Gaussian on both sides: `P = Q = N(0, I₅₀)`.
pub fn gen_sg(n: usize, rng: &mut DpRng) -> Result<(Dataset, Dataset)> {
    check_n(n)?;
    let x = Dataset::from_flat(normals(n, SG_DIM, rng), n, SG_DIM, "sg:p")?;
    let y = Dataset::from_flat(normals(n, SG_DIM, rng), n, SG_DIM, "sg:q")?;
    Ok((x, y))
}

/// Mean shift in the first coordinate: `N(0, I₁₀₀)` vs `N(e₁, I₁₀₀)`.
pub fn gen_gmd(n: usize, rng: &mut DpRng) -> Result<(Dataset, Dataset)> {
    check_n(n)?;
    let x = Dataset::from_flat(normals(n, GMD_DIM, rng), n, GMD_DIM, "gmd:p")?;
    let mut q = normals(n, GMD_DIM, rng);
    for row in q.chunks_exact_mut(GMD_DIM) {
        row[0] += 1.0;
    }
    let y = Dataset::from_flat(q, n, GMD_DIM, "gmd:q")?;
    Ok((x, y))
}

/// Variance change in the first coordinate: `N(0, I₅₀)` vs `N(0, diag(2, 1, …, 1))`.
pub fn gen_gvd(n: usize, rng: &mut DpRng) -> Result<(Dataset, Dataset)> {
    check_n(n)?;
    let x = Dataset::from_flat(normals(n, GVD_DIM, rng), n, GVD_DIM, "gvd:p")?;
    let mut q = normals(n, GVD_DIM, rng);
    for row in q.chunks_exact_mut(GVD_DIM) {
        row[0] *= std::f64::consts::SQRT_2;
    }
    let y = Dataset::from_flat(q, n, GVD_DIM, "gvd:q")?;
    Ok((x, y))
}

/// Blobs layout. These values are illustrative defaults, not published ones.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BlobsParams {
    pub grid_size: usize,
    pub spacing: f64,
    /// Std multiplier for `Q` along the `(1, 1)/√2` axis.
    pub stretch: f64,
    pub base_std: f64,
}

impl Default for BlobsParams {
    fn default() -> Self {
        Self {
            grid_size: 4,
            spacing: 10.0,
            stretch: 2.0,
            base_std: 1.0,
        }
    }
}

impl BlobsParams {
    pub fn validate(&self) -> Result<()> {
        if self.grid_size == 0 {
            return Err(invalid("grid_size", "must be at least 1"));
        }
        if !(self.spacing > 0.0) {
            return Err(invalid("spacing", "must be positive"));
        }
        if !(self.stretch >= 1.0) {
            return Err(invalid("stretch", "must be at least 1"));
        }
        if !(self.base_std > 0.0) {
            return Err(invalid("base_std", "must be positive"));
        }
        Ok(())
    }

    pub fn centroid(&self) -> f64 {
        (self.grid_size as f64 - 1.0) * self.spacing / 2.0
    }
}

/// 2-D grid of Gaussian blobs; `Q`'s blobs are stretched along a diagonal.
pub fn gen_blobs(n: usize, params: &BlobsParams, rng: &mut DpRng) -> Result<(Dataset, Dataset)> {
    check_n(n)?;
    params.validate()?;
    let g = params.grid_size;
    let axis = std::f64::consts::FRAC_1_SQRT_2;
    let draw = |stretch: f64, rng: &mut DpRng| -> Vec<f64> {
        let mut out = Vec::with_capacity(2 * n);
        for _ in 0..n {
            let cx = rng.random_range(0..g) as f64 * params.spacing;
            let cy = rng.random_range(0..g) as f64 * params.spacing;
            let e0: f64 = rng.sample(StandardNormal);
            let e1: f64 = rng.sample(StandardNormal);
            let along = (stretch - 1.0) * axis * (e0 + e1);
            out.push(cx + params.base_std * (e0 + along * axis));
            out.push(cy + params.base_std * (e1 + along * axis));
        }
        out
    };
    let p = draw(1.0, rng);
    let q = draw(params.stretch, rng);
    Ok((
        Dataset::from_flat(p, n, 2, "blobs:p")?,
        Dataset::from_flat(q, n, 2, "blobs:q")?,
    ))
}

/// Reads one sample per line, comma separated, optionally skipping a header.
pub fn load_csv(path: impl AsRef<Path>, header: bool) -> Result<Dataset> {
    let path = path.as_ref();
    let shown = path.display().to_string();
    let err = |line: usize, reason: String| Error::Csv {
        path: shown.clone(),
        line,
        reason,
    };
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(header)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::Io(io),
            other => err(0, format!("{other:?}")),
        })?;
    let mut data = Vec::new();
    let mut d = None;
    let mut n = 0;
    for rec in reader.records() {
        let rec = rec.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line() as usize);
            err(line, e.to_string())
        })?;
        let line = rec.position().map_or(n + 1, |p| p.line() as usize);
        if rec.len() == 1 && rec[0].is_empty() {
            continue;
        }
        match d {
            None => d = Some(rec.len()),
            Some(width) if width != rec.len() => {
                return Err(err(line, format!("row {} has {} columns, expected {width}", n + 1, rec.len())));
            }
            _ => {}
        }
        for (c, cell) in rec.iter().enumerate() {
            let v: f64 = cell
                .parse()
                .map_err(|_| err(line, format!("row {}, column {}: `{cell}` is not a number", n + 1, c + 1)))?;
            if !v.is_finite() {
                return Err(err(line, format!("row {}, column {}: value is not finite", n + 1, c + 1)));
            }
            data.push(v);
        }
        n += 1;
    }
    let Some(d) = d else {
        return Err(err(0, "file contains no data rows".into()));
    };
    Dataset::from_flat(data, n, d, shown.clone())
}

/// Writes a dataset in the format [`load_csv`] reads (no header).
pub fn write_csv(x: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_path(path.as_ref())
        .map_err(|e| Error::Io(std::io::Error::other(e)))?;
    for row in x.rows() {
        w.write_record(row.iter().map(|v| format!("{v:?}")))
            .map_err(|e| Error::Io(std::io::Error::other(e)))?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from_seed;

    fn col_stats(x: &Dataset, c: usize) -> (f64, f64) {
        let n = x.n() as f64;
        let m = x.rows().map(|r| r[c]).sum::<f64>() / n;
        let v = x.rows().map(|r| (r[c] - m).powi(2)).sum::<f64>() / (n - 1.0);
        (m, v)
    }

    #[test]
    fn sg_shape_and_moments() {
        let n = 4000;
        let (x, y) = gen_sg(n, &mut rng_from_seed(1)).unwrap();
        assert_eq!((x.dim(), y.dim()), (50, 50));
        let bound = 4.0 / (n as f64).sqrt();
        let inside = (0..50).filter(|&c| col_stats(&x, c).0.abs() < bound).count();
        assert!(inside >= 49);
        let (x2, _) = gen_sg(n, &mut rng_from_seed(1)).unwrap();
        assert_eq!(x, x2);
    }

    #[test]
    fn gmd_shift() {
        let (x, y) = gen_gmd(4000, &mut rng_from_seed(2)).unwrap();
        assert_eq!(y.dim(), 100);
        assert!((col_stats(&y, 0).0 - 1.0).abs() < 0.07);
        assert!(col_stats(&x, 0).0.abs() < 0.07);
        assert!((1..100).all(|c| col_stats(&y, c).0.abs() < 0.07));
    }

    #[test]
    fn gvd_variance() {
        let (x, y) = gen_gvd(8000, &mut rng_from_seed(3)).unwrap();
        assert!((col_stats(&y, 0).1 - 2.0).abs() < 0.15);
        assert!((1..50).all(|c| (col_stats(&y, c).1 - 1.0).abs() < 0.1));
        assert!(col_stats(&x, 0).0.abs() < 0.05 && col_stats(&y, 0).0.abs() < 0.05);
    }

    #[test]
    fn blobs_moments() {
        let p = BlobsParams::default();
        let (x, y) = gen_blobs(20_000, &p, &mut rng_from_seed(4)).unwrap();
        for c in 0..2 {
            assert!((col_stats(&x, c).0 - p.centroid()).abs() < 0.5);
            assert!((col_stats(&y, c).0 - p.centroid()).abs() < 0.5);
        }
        let diag = |d: &Dataset| {
            // Offsets from the nearest centre, projected on the stretch axis.
            d.rows()
                .map(|r| {
                    let rx = r[0] - (r[0] / p.spacing).round().clamp(0.0, 3.0) * p.spacing;
                    let ry = r[1] - (r[1] / p.spacing).round().clamp(0.0, 3.0) * p.spacing;
                    ((rx + ry) * std::f64::consts::FRAC_1_SQRT_2).powi(2)
                })
                .sum::<f64>()
                / d.n() as f64
        };
        assert!(diag(&y) > 2.0 * diag(&x));
        let same = BlobsParams { stretch: 1.0, ..p };
        let (a, b) = gen_blobs(5, &same, &mut rng_from_seed(9)).unwrap();
        assert_eq!(a.dim(), 2);
        assert_eq!(b.n(), 5);
    }

    #[test]
    fn csv_round_trip_and_errors() {
        let dir = std::env::temp_dir().join(format!("dpk2st-csv-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let f = dir.join("a.csv");
        std::fs::write(&f, "1,2\n3,4\n").unwrap();
        let x = load_csv(&f, false).unwrap();
        assert_eq!((x.n(), x.dim()), (2, 2));
        assert_eq!(x.row(1), &[3.0, 4.0]);

        std::fs::write(&f, "a,b\n1,2\n3,4\n").unwrap();
        assert!(load_csv(&f, false).is_err());
        assert_eq!(load_csv(&f, true).unwrap().n(), 2);

        std::fs::write(&f, "1,2\n3\n5,6\n").unwrap();
        let e = load_csv(&f, false).unwrap_err().to_string();
        assert!(e.contains("row 2"), "{e}");

        std::fs::write(&f, "1,2\n3,x\n").unwrap();
        let e = load_csv(&f, false).unwrap_err().to_string();
        assert!(e.contains("row 2, column 2"), "{e}");

        std::fs::write(&f, "").unwrap();
        assert!(load_csv(&f, false).is_err());

        let (g, _) = gen_sg(3, &mut rng_from_seed(1)).unwrap();
        write_csv(&g, &f).unwrap();
        assert_eq!(load_csv(&f, false).unwrap().as_flat(), g.as_flat());
        assert!(matches!(load_csv(dir.join("missing.csv"), false), Err(Error::Io(_))));
        std::fs::remove_dir_all(&dir).ok();
    }
}
