//! Mean / covariance summaries of feature rows and the regularised
//! Hotelling-type statistic built from them.

use nalgebra::{DMatrix, DVector};

use crate::error::{invalid, Error, Result};
use crate::features::FeatureMatrix;
use crate::linalg::sym_solve;

/// Fixed regulariser used by the statistic-perturbation test.
pub const TCS_GAMMA: f64 = 1e-3;

/// Empirical mean `w`, second moment `Λ = Σ zzᵀ/(n−1)` and covariance
/// `Σ = Λ − n/(n−1)·wwᵀ`.
#[derive(Debug, Clone, PartialEq)]
pub struct Summary {
    pub w: DVector<f64>,
    pub lambda: DMatrix<f64>,
    pub sigma: DMatrix<f64>,
    pub n: usize,
}

impl Summary {
    pub fn n_features(&self) -> usize {
        self.w.len()
    }

    /// Rebuilds `Σ` from the stored `w` and `Λ`.
    pub fn from_moments(w: DVector<f64>, lambda: DMatrix<f64>, n: usize) -> Result<Self> {
        if n < 2 {
            return Err(Error::TooFewSamples { min: 2, got: n });
        }
        if lambda.nrows() != w.len() || lambda.ncols() != w.len() {
            return Err(Error::DimensionMismatch {
                expected: w.len(),
                got: lambda.nrows(),
            });
        }
        let sigma = covariance_from_moments(&w, &lambda, n);
        Ok(Self { w, lambda, sigma, n })
    }
}

pub(crate) fn covariance_from_moments(w: &DVector<f64>, lambda: &DMatrix<f64>, n: usize) -> DMatrix<f64> {
    let c = n as f64 / (n as f64 - 1.0);
    crate::linalg::symmetrize(&(lambda - (w * w.transpose()) * c))
}

pub fn summarize(z: &FeatureMatrix) -> Summary {
    let n = z.n();
    let j = z.n_features();
    let mut w = DVector::zeros(j);
    let mut lambda = DMatrix::zeros(j, j);
    for row in z.rows() {
        for a in 0..j {
            w[a] += row[a];
            for b in a..j {
                lambda[(a, b)] += row[a] * row[b];
            }
        }
    }
    w /= n as f64;
    let denom = n as f64 - 1.0;
    for a in 0..j {
        for b in a..j {
            let v = lambda[(a, b)] / denom;
            lambda[(a, b)] = v;
            lambda[(b, a)] = v;
        }
    }
    let sigma = covariance_from_moments(&w, &lambda, n);
    Summary { w, lambda, sigma, n }
}

fn check_gamma(gamma: f64) -> Result<()> {
    if gamma > 0.0 && gamma.is_finite() {
        Ok(())
    } else {
        Err(invalid("gamma", format!("regulariser must be positive, got {gamma}")))
    }
}

fn regularised(sigma: &DMatrix<f64>, gamma: f64) -> DMatrix<f64> {
    let mut m = sigma.clone();
    for i in 0..m.nrows() {
        m[(i, i)] += gamma;
    }
    m
}

/// `n · wᵀ(Σ + γI)⁻¹w`.
pub fn statistic(summary: &Summary, gamma: f64) -> Result<f64> {
    statistic_parts(&summary.w, &summary.sigma, summary.n, gamma)
}

/// Same statistic from explicit parts (used for perturbed summaries).
pub fn statistic_parts(w: &DVector<f64>, sigma: &DMatrix<f64>, n: usize, gamma: f64) -> Result<f64> {
    check_gamma(gamma)?;
    if sigma.nrows() != w.len() {
        return Err(Error::DimensionMismatch {
            expected: w.len(),
            got: sigma.nrows(),
        });
    }
    let a = sym_solve(&regularised(sigma, gamma), w)?;
    Ok(n as f64 * w.dot(&a))
}

/// Two-sample statistic with pooled covariance
/// `Σ_p = ((n_x−1)Σ_x + (n_y−1)Σ_y)/(n_x+n_y−2)`:
/// `n_x n_y/(n_x+n_y) · dᵀ(Σ_p + γI)⁻¹d`, `d = w_x − w_y`.
pub fn pooled_statistic(
    wx: &DVector<f64>,
    sigma_x: &DMatrix<f64>,
    nx: usize,
    wy: &DVector<f64>,
    sigma_y: &DMatrix<f64>,
    ny: usize,
    gamma: f64,
) -> Result<f64> {
    if !(gamma >= 0.0 && gamma.is_finite()) {
        return Err(invalid("gamma", format!("regulariser must be nonnegative, got {gamma}")));
    }
    if wx.len() != wy.len() {
        return Err(Error::DimensionMismatch {
            expected: wx.len(),
            got: wy.len(),
        });
    }
    let pooled = pooled_covariance(sigma_x, nx, sigma_y, ny)?;
    let d = wx - wy;
    let a = sym_solve(&regularised(&pooled, gamma), &d)?;
    let (fx, fy) = (nx as f64, ny as f64);
    Ok(fx * fy / (fx + fy) * d.dot(&a))
}

pub fn pooled_covariance(sigma_x: &DMatrix<f64>, nx: usize, sigma_y: &DMatrix<f64>, ny: usize) -> Result<DMatrix<f64>> {
    if nx < 2 || ny < 2 {
        return Err(Error::TooFewSamples { min: 2, got: nx.min(ny) });
    }
    if sigma_x.shape() != sigma_y.shape() {
        return Err(Error::DimensionMismatch {
            expected: sigma_x.nrows(),
            got: sigma_y.nrows(),
        });
    }
    let (fx, fy) = (nx as f64 - 1.0, ny as f64 - 1.0);
    Ok((sigma_x * fx + sigma_y * fy) / (fx + fy))
}

/// Shrinking schedule `c · n^{−1/4}`.
pub fn gamma_schedule(n: usize, c: f64) -> f64 {
    c * (n as f64).powf(-0.25)
}
