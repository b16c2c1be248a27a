//! Kernel and characteristic-function feature maps.
//!
//! Every map here produces per-sample vectors `z_i` with `‖z_i‖₂ ≤ κ√J`, where
//! κ = 2 bounds twice the kernel (or smoothing weight) value. All downstream
//! sensitivity formulas assume this bound.

use rand::seq::index::sample;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::rng::rng_from_seed;

/// Norm-bound parameter shared by the Gaussian kernel and the unit-bounded
/// SCF smoothing weight (`k ≤ κ/2`).
pub const KAPPA: f64 = 2.0;

/// Row cap for the median heuristic's pairwise enumeration.
pub const MEDIAN_SUBSAMPLE: usize = 1000;

/// An `n × d` sample matrix, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    data: Vec<f64>,
    n: usize,
    d: usize,
    label: String,
}

impl Dataset {
    pub fn new(rows: Vec<Vec<f64>>, label: impl Into<String>) -> Result<Self> {
        let d = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * d);
        for row in &rows {
            if row.len() != d {
                return Err(Error::DimensionMismatch {
                    expected: d,
                    got: row.len(),
                });
            }
            data.extend_from_slice(row);
        }
        Self::from_flat(data, rows.len(), d, label)
    }

    pub fn from_flat(data: Vec<f64>, n: usize, d: usize, label: impl Into<String>) -> Result<Self> {
        if n < 2 {
            return Err(Error::TooFewSamples { min: 2, got: n });
        }
        if d == 0 {
            return Err(invalid("d", "datasets need at least one column"));
        }
        if data.len() != n * d {
            return Err(Error::DimensionMismatch {
                expected: n * d,
                got: data.len(),
            });
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                row: pos / d,
                col: pos % d,
            });
        }
        Ok(Self {
            data,
            n,
            d,
            label: label.into(),
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.d..(i + 1) * self.d]
    }

    pub fn rows(&self) -> impl ExactSizeIterator<Item = &[f64]> {
        self.data.chunks_exact(self.d)
    }

    pub fn as_flat(&self) -> &[f64] {
        &self.data
    }

    /// New dataset made of the given rows, in order.
    pub fn select(&self, idx: &[usize], label: impl Into<String>) -> Result<Self> {
        let mut data = Vec::with_capacity(idx.len() * self.d);
        for &i in idx {
            data.extend_from_slice(self.row(i));
        }
        Self::from_flat(data, idx.len(), self.d, label)
    }

    /// Row-wise concatenation of two datasets of equal dimension.
    pub fn stack(&self, other: &Dataset, label: impl Into<String>) -> Result<Self> {
        if other.d != self.d {
            return Err(Error::DimensionMismatch {
                expected: self.d,
                got: other.d,
            });
        }
        let mut data = self.data.clone();
        data.extend_from_slice(&other.data);
        Self::from_flat(data, self.n + other.n, self.d, label)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    /// Mean embedding evaluated at `J` test locations.
    Me,
    /// Smoothed characteristic function at `J/2` frequencies.
    Scf,
}

impl Variant {
    pub fn name(self) -> &'static str {
        match self {
            Variant::Me => "me",
            Variant::Scf => "scf",
        }
    }
}

impl std::str::FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "me" => Ok(Variant::Me),
            "scf" => Ok(Variant::Scf),
            other => Err(invalid("variant", format!("unknown variant `{other}` (expected me or scf)"))),
        }
    }
}

/// Weight applied to the SCF cos/sin evaluations of the scaled input `x̂`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub enum Smoothing {
    /// `g(x̂) = exp(−‖x̂‖²/2)`.
    #[default]
    Gaussian,
    /// `g ≡ 1` (plain empirical characteristic function).
    Unit,
}

impl Smoothing {
    pub fn weight(self, sq_norm: f64) -> f64 {
        match self {
            Smoothing::Gaussian => (-0.5 * sq_norm).exp(),
            Smoothing::Unit => 1.0,
        }
    }
}

/// Test locations (ME) or frequencies (SCF) plus the bandwidth θ.
#[derive(Debug, Clone, PartialEq)]
pub struct TestLocations {
    points: Vec<Vec<f64>>,
    variant: Variant,
    bandwidth: f64,
    smoothing: Smoothing,
}

impl TestLocations {
    pub fn new(points: Vec<Vec<f64>>, variant: Variant, bandwidth: f64) -> Result<Self> {
        Self::with_smoothing(points, variant, bandwidth, Smoothing::default())
    }

    pub fn with_smoothing(
        points: Vec<Vec<f64>>,
        variant: Variant,
        bandwidth: f64,
        smoothing: Smoothing,
    ) -> Result<Self> {
        if !(bandwidth > 0.0 && bandwidth.is_finite()) {
            return Err(invalid("bandwidth", format!("must be positive and finite, got {bandwidth}")));
        }
        if points.is_empty() {
            return Err(invalid("points", "need at least one test location"));
        }
        let d = points[0].len();
        for (r, p) in points.iter().enumerate() {
            if p.len() != d {
                return Err(Error::DimensionMismatch {
                    expected: d,
                    got: p.len(),
                });
            }
            if let Some(c) = p.iter().position(|v| !v.is_finite()) {
                return Err(Error::NonFinite { row: r, col: c });
            }
        }
        Ok(Self {
            points,
            variant,
            bandwidth,
            smoothing,
        })
    }

    pub fn points(&self) -> &[Vec<f64>] {
        &self.points
    }

    pub fn variant(&self) -> Variant {
        self.variant
    }

    pub fn bandwidth(&self) -> f64 {
        self.bandwidth
    }

    pub fn smoothing(&self) -> Smoothing {
        self.smoothing
    }

    pub fn dim(&self) -> usize {
        self.points[0].len()
    }

    /// Feature dimension `J`: one per location (ME), two per frequency (SCF).
    pub fn n_features(&self) -> usize {
        match self.variant {
            Variant::Me => self.points.len(),
            Variant::Scf => 2 * self.points.len(),
        }
    }
}

/// Per-sample feature vectors, `n × J`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    data: Vec<f64>,
    n: usize,
    j: usize,
    kappa: f64,
    variant: Variant,
}

impl FeatureMatrix {
    /// Wraps raw rows, checking the `‖z_i‖ ≤ κ√J` bound.
    pub fn new(rows: Vec<Vec<f64>>, kappa: f64, variant: Variant) -> Result<Self> {
        let j = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * j);
        for r in &rows {
            if r.len() != j {
                return Err(Error::DimensionMismatch {
                    expected: j,
                    got: r.len(),
                });
            }
            data.extend_from_slice(r);
        }
        Self::from_flat(data, rows.len(), j, kappa, variant)
    }

    pub(crate) fn from_flat(data: Vec<f64>, n: usize, j: usize, kappa: f64, variant: Variant) -> Result<Self> {
        if n < 2 {
            return Err(Error::TooFewSamples { min: 2, got: n });
        }
        if j == 0 {
            return Err(invalid("J", "need at least one feature"));
        }
        let bound = kappa * (j as f64).sqrt();
        for (i, row) in data.chunks_exact(j).enumerate() {
            let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            if !(norm <= bound) {
                return Err(invalid(
                    "features",
                    format!("row {i} has norm {norm} above the bound κ√J = {bound}"),
                ));
            }
        }
        Ok(Self {
            data,
            n,
            j,
            kappa,
            variant,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn n_features(&self) -> usize {
        self.j
    }

    pub fn kappa(&self) -> f64 {
        self.kappa
    }

    pub fn variant(&self) -> Variant {
        self.variant
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.j..(i + 1) * self.j]
    }

    pub fn rows(&self) -> impl ExactSizeIterator<Item = &[f64]> {
        self.data.chunks_exact(self.j)
    }

    /// Row-wise difference `self − other` (paired SCF form).
    pub fn difference(&self, other: &FeatureMatrix) -> Result<FeatureMatrix> {
        if self.n != other.n {
            return Err(Error::SampleCountMismatch {
                left: self.n,
                right: other.n,
            });
        }
        if self.j != other.j {
            return Err(Error::DimensionMismatch {
                expected: self.j,
                got: other.j,
            });
        }
        let data = self.data.iter().zip(&other.data).map(|(a, b)| a - b).collect();
        FeatureMatrix::from_flat(data, self.n, self.j, self.kappa, self.variant)
    }
}

fn sq_dist(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum()
}

/// `exp(−‖x−y‖²/(2θ²))`.
pub fn gaussian_kernel(x: &[f64], y: &[f64], bandwidth: f64) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::DimensionMismatch {
            expected: x.len(),
            got: y.len(),
        });
    }
    if !(bandwidth > 0.0) {
        return Err(invalid("bandwidth", format!("must be positive, got {bandwidth}")));
    }
    Ok((-sq_dist(x, y) / (2.0 * bandwidth * bandwidth)).exp())
}

fn require_variant(loc: &TestLocations, want: Variant) -> Result<()> {
    if loc.variant != want {
        return Err(invalid(
            "locations",
            format!("expected {} locations, got {}", want.name(), loc.variant.name()),
        ));
    }
    Ok(())
}

fn require_dim(x: &Dataset, loc: &TestLocations) -> Result<()> {
    if x.dim() != loc.dim() {
        return Err(Error::DimensionMismatch {
            expected: loc.dim(),
            got: x.dim(),
        });
    }
    Ok(())
}

fn kernel_rows(x: &Dataset, loc: &TestLocations) -> Vec<f64> {
    let inv = 1.0 / (2.0 * loc.bandwidth * loc.bandwidth);
    let mut out = Vec::with_capacity(x.n() * loc.points.len());
    for row in x.rows() {
        out.extend(loc.points.iter().map(|t| (-sq_dist(row, t) * inv).exp()));
    }
    out
}

/// Rows `[k(x_i, T_j)]_j`: the per-owner ME features.
pub fn me_single_features(x: &Dataset, loc: &TestLocations) -> Result<FeatureMatrix> {
    require_variant(loc, Variant::Me)?;
    require_dim(x, loc)?;
    FeatureMatrix::from_flat(kernel_rows(x, loc), x.n(), loc.points.len(), KAPPA, Variant::Me)
}

/// Rows `[k(x_i, T_j) − k(y_i, T_j)]_j` for paired samples.
pub fn me_difference_features(x: &Dataset, y: &Dataset, loc: &TestLocations) -> Result<FeatureMatrix> {
    require_variant(loc, Variant::Me)?;
    require_dim(x, loc)?;
    require_dim(y, loc)?;
    if x.n() != y.n() {
        return Err(Error::SampleCountMismatch {
            left: x.n(),
            right: y.n(),
        });
    }
    let kx = kernel_rows(x, loc);
    let ky = kernel_rows(y, loc);
    let data = kx.iter().zip(&ky).map(|(a, b)| a - b).collect();
    FeatureMatrix::from_flat(data, x.n(), loc.points.len(), KAPPA, Variant::Me)
}

/// Rows `[g(x̂)cos(x̂·T_j), g(x̂)sin(x̂·T_j)]_j` with `x̂ = x/θ`, interleaved.
pub fn scf_features(x: &Dataset, loc: &TestLocations) -> Result<FeatureMatrix> {
    require_variant(loc, Variant::Scf)?;
    require_dim(x, loc)?;
    let inv_bw = 1.0 / loc.bandwidth;
    let j = loc.n_features();
    let mut data = Vec::with_capacity(x.n() * j);
    let mut scaled = vec![0.0; x.dim()];
    for row in x.rows() {
        for (s, v) in scaled.iter_mut().zip(row) {
            *s = v * inv_bw;
        }
        let g = loc.smoothing.weight(scaled.iter().map(|v| v * v).sum());
        for t in &loc.points {
            let phase: f64 = scaled.iter().zip(t).map(|(a, b)| a * b).sum();
            let (sin, cos) = phase.sin_cos();
            data.push(g * cos);
            data.push(g * sin);
        }
    }
    FeatureMatrix::from_flat(data, x.n(), j, KAPPA, Variant::Scf)
}

/// Paired SCF features: owner-x row minus owner-y row.
pub fn scf_difference_features(x: &Dataset, y: &Dataset, loc: &TestLocations) -> Result<FeatureMatrix> {
    if x.n() != y.n() {
        return Err(Error::SampleCountMismatch {
            left: x.n(),
            right: y.n(),
        });
    }
    scf_features(x, loc)?.difference(&scf_features(y, loc)?)
}

/// Per-owner features for either variant.
pub fn single_features(x: &Dataset, loc: &TestLocations) -> Result<FeatureMatrix> {
    match loc.variant {
        Variant::Me => me_single_features(x, loc),
        Variant::Scf => scf_features(x, loc),
    }
}

/// Paired difference features for either variant.
pub fn difference_features(x: &Dataset, y: &Dataset, loc: &TestLocations) -> Result<FeatureMatrix> {
    match loc.variant {
        Variant::Me => me_difference_features(x, y, loc),
        Variant::Scf => scf_difference_features(x, y, loc),
    }
}

/// Median pairwise Euclidean distance.
///
/// Datasets above [`MEDIAN_SUBSAMPLE`] rows are first subsampled without
/// replacement, with a seed fixed by the dataset shape so the result stays a
/// pure function of the input.
pub fn median_heuristic(x: &Dataset) -> Result<f64> {
    let idx: Vec<usize> = if x.n() > MEDIAN_SUBSAMPLE {
        let mut rng = rng_from_seed(crate::rng::derive_seed(0x6d65_6469_616e, &[x.n() as u64, x.dim() as u64]));
        let mut v = sample(&mut rng, x.n(), MEDIAN_SUBSAMPLE).into_vec();
        v.sort_unstable();
        v
    } else {
        (0..x.n()).collect()
    };
    let mut dists = Vec::with_capacity(idx.len() * (idx.len() - 1) / 2);
    for (a, &i) in idx.iter().enumerate() {
        for &j in &idx[a + 1..] {
            dists.push(sq_dist(x.row(i), x.row(j)).sqrt());
        }
    }
    let m = dists.len();
    let mid = m / 2;
    let (_, upper, _) = dists.select_nth_unstable_by(mid, f64::total_cmp);
    let upper = *upper;
    let med = if m % 2 == 1 {
        upper
    } else {
        let lower = dists[..mid].iter().copied().fold(f64::NEG_INFINITY, f64::max);
        0.5 * (lower + upper)
    };
    if med > 0.0 {
        Ok(med)
    } else {
        Err(Error::DegenerateBandwidth)
    }
}
