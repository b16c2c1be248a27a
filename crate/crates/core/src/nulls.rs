//! Null distributions, thresholds and p-values.

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::error::{invalid, Result};
use crate::linalg::{clamp_eigenvalues, inv_sqrt_spd, sym_eigenvalues};
use crate::rng::rng_from_seed;
use crate::statistic::pooled_covariance;

pub const DEFAULT_MC_SAMPLES: usize = 100_000;
pub const MIN_MC_SAMPLES: usize = 10_000;

#[derive(Debug, Clone, PartialEq)]
pub enum NullKind {
    /// `χ²_J`.
    AsymptoticChi2 { dof: usize },
    /// `Σ_j λ_j χ²_1`.
    WeightedChi2 { weights: Vec<f64> },
    /// `χ²_J + N(0, σ²)`.
    Chi2PlusGaussian { dof: usize, sigma: f64 },
    /// `χ²_{J+2}`, the null under additive χ²(2) noise.
    Chi2ShiftedDof { dof: usize },
}

impl NullKind {
    pub fn name(&self) -> &'static str {
        match self {
            NullKind::AsymptoticChi2 { .. } => "chi2",
            NullKind::WeightedChi2 { .. } => "weighted-chi2",
            NullKind::Chi2PlusGaussian { .. } => "chi2+gaussian",
            NullKind::Chi2ShiftedDof { .. } => "chi2-shifted",
        }
    }
}

/// A null law plus the Monte-Carlo settings used to realise it.
#[derive(Debug, Clone, PartialEq)]
pub struct NullSpec {
    pub kind: NullKind,
    pub mc_samples: usize,
    pub seed: u64,
    /// Use `(count + 1)/(m + 1)` for Monte-Carlo p-values.
    pub smoothed_pvalue: bool,
}

impl NullSpec {
    pub fn new(kind: NullKind, mc_samples: usize, seed: u64) -> Self {
        Self {
            kind,
            mc_samples,
            seed,
            smoothed_pvalue: false,
        }
    }

    pub fn build(&self) -> Result<NullDistribution> {
        NullDistribution::new(self)
    }
}

#[derive(Debug, Clone)]
enum Law {
    Chi2(ChiSquared),
    /// Ascending Monte-Carlo draws.
    Empirical(Vec<f64>),
}

/// A realised null: an exact χ² law or a sorted Monte-Carlo sample. The
/// threshold and p-value of an empirical null are read from the same sample,
/// so `pvalue(s) ≤ α` exactly when `s > threshold(α)`.
#[derive(Debug, Clone)]
pub struct NullDistribution {
    law: Law,
    smoothed: bool,
}

fn chi2(dof: usize) -> Result<ChiSquared> {
    if dof == 0 {
        return Err(invalid("dof", "must be at least 1"));
    }
    ChiSquared::new(dof as f64).map_err(|e| invalid("dof", e.to_string()))
}

fn check_alpha(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha < 1.0 {
        Ok(())
    } else {
        Err(invalid("alpha", format!("must lie in (0, 1), got {alpha}")))
    }
}

impl NullDistribution {
    pub fn new(spec: &NullSpec) -> Result<Self> {
        let law = match &spec.kind {
            NullKind::AsymptoticChi2 { dof } => Law::Chi2(chi2(*dof)?),
            NullKind::Chi2ShiftedDof { dof } => Law::Chi2(chi2(dof + 2)?),
            NullKind::WeightedChi2 { weights } => {
                if weights.is_empty() || weights.iter().any(|w| !w.is_finite()) {
                    return Err(invalid("weights", "need at least one finite weight"));
                }
                check_mc(spec.mc_samples)?;
                let mut rng = rng_from_seed(spec.seed);
                Law::Empirical(sorted((0..spec.mc_samples).map(|_| {
                    weights
                        .iter()
                        .map(|w| w * rng.sample::<f64, _>(StandardNormal).powi(2))
                        .sum()
                })))
            }
            NullKind::Chi2PlusGaussian { dof, sigma } => {
                if *dof == 0 {
                    return Err(invalid("dof", "must be at least 1"));
                }
                if !(*sigma >= 0.0 && sigma.is_finite()) {
                    return Err(invalid("sigma", format!("must be nonnegative, got {sigma}")));
                }
                check_mc(spec.mc_samples)?;
                let mut rng = rng_from_seed(spec.seed);
                Law::Empirical(sorted((0..spec.mc_samples).map(|_| {
                    let c: f64 = (0..*dof).map(|_| rng.sample::<f64, _>(StandardNormal).powi(2)).sum();
                    c + sigma * rng.sample::<f64, _>(StandardNormal)
                })))
            }
        };
        Ok(Self {
            law,
            smoothed: spec.smoothed_pvalue,
        })
    }

    /// Level-α critical value; reject when the statistic exceeds it.
    pub fn threshold(&self, alpha: f64) -> Result<f64> {
        check_alpha(alpha)?;
        Ok(match &self.law {
            Law::Chi2(d) => d.inverse_cdf(1.0 - alpha),
            Law::Empirical(x) => {
                let m = x.len();
                let q = exceed_budget(alpha, m);
                x[m - q - 1]
            }
        })
    }

    /// Upper-tail probability of `s`. Monte-Carlo nulls count draws `≥ s`.
    pub fn pvalue(&self, s: f64) -> f64 {
        match &self.law {
            Law::Chi2(d) => {
                if s <= 0.0 {
                    1.0
                } else {
                    d.sf(s)
                }
            }
            Law::Empirical(x) => {
                let below = x.partition_point(|&v| v < s);
                let count = x.len() - below;
                if self.smoothed {
                    (count + 1) as f64 / (x.len() + 1) as f64
                } else {
                    count as f64 / x.len() as f64
                }
            }
        }
    }

    /// Monte-Carlo draws, ascending; `None` for exact laws.
    pub fn samples(&self) -> Option<&[f64]> {
        match &self.law {
            Law::Empirical(x) => Some(x),
            Law::Chi2(_) => None,
        }
    }
}

/// Number of draws allowed strictly above the threshold: `⌊αm⌋`, capped so
/// the threshold index stays valid.
fn exceed_budget(alpha: f64, m: usize) -> usize {
    ((alpha * m as f64).floor() as usize).min(m - 1)
}

fn check_mc(m: usize) -> Result<()> {
    if m >= MIN_MC_SAMPLES {
        Ok(())
    } else {
        Err(invalid("mc_samples", format!("need at least {MIN_MC_SAMPLES}, got {m}")))
    }
}

fn sorted(it: impl Iterator<Item = f64>) -> Vec<f64> {
    let mut v: Vec<f64> = it.collect();
    v.sort_by(f64::total_cmp);
    v
}

/// `λ̃_j = (τ_j + nσ²)/(τ_j + γ)` with `τ` the eigenvalues of `Σ̃`, floored at 0.
pub fn tcmc_null_weights(sigma: &DMatrix<f64>, gamma: f64, n: usize, sigma_mean: f64) -> Result<Vec<f64>> {
    if !(gamma > 0.0) {
        return Err(invalid("gamma", format!("must be positive, got {gamma}")));
    }
    let add = n as f64 * sigma_mean * sigma_mean;
    Ok(sym_eigenvalues(sigma)
        .into_iter()
        .map(|t| {
            let t = t.max(0.0);
            (t + add) / (t + gamma)
        })
        .collect())
}

/// Eigenvalues of
/// `n_x n_y/(n_x+n_y) · P^{-1/2}(Σ_x/n_x + Σ_y/n_y + (σ_x²+σ_y²)I)P^{-1/2}`,
/// `P = Σ_pool + γI`, after flooring both covariances' eigenvalues at 0.
pub fn nte_null_weights(
    sigma_x: &DMatrix<f64>,
    sigma_y: &DMatrix<f64>,
    nx: usize,
    ny: usize,
    sigma_mean_x: f64,
    sigma_mean_y: f64,
    gamma: f64,
) -> Result<Vec<f64>> {
    if !(gamma > 0.0) {
        return Err(invalid("gamma", format!("must be positive, got {gamma}")));
    }
    let sx = clamp_eigenvalues(sigma_x, 0.0);
    let sy = clamp_eigenvalues(sigma_y, 0.0);
    let j = sx.nrows();
    let pooled = pooled_covariance(&sx, nx, &sy, ny)? + DMatrix::identity(j, j) * gamma;
    let root = inv_sqrt_spd(&pooled)?;
    let (fx, fy) = (nx as f64, ny as f64);
    let middle = &sx / fx + &sy / fy
        + DMatrix::identity(j, j) * (sigma_mean_x * sigma_mean_x + sigma_mean_y * sigma_mean_y);
    let c = (&root * middle * &root) * (fx * fy / (fx + fy));
    Ok(sym_eigenvalues(&crate::linalg::symmetrize(&c)))
}

/// Monte-Carlo `(1−α)`-quantile of `Σ_j λ_j χ²_1`.
pub fn weighted_chi2_threshold(weights: &[f64], alpha: f64, mc_samples: usize, seed: u64) -> Result<f64> {
    NullSpec::new(NullKind::WeightedChi2 { weights: weights.to_vec() }, mc_samples, seed)
        .build()?
        .threshold(alpha)
}

/// Monte-Carlo `(1−α)`-quantile of `χ²_J + N(0, σ_η²)`.
pub fn tcs_null_threshold(dof: usize, sigma_stat: f64, alpha: f64, mc_samples: usize, seed: u64) -> Result<f64> {
    NullSpec::new(NullKind::Chi2PlusGaussian { dof, sigma: sigma_stat }, mc_samples, seed)
        .build()?
        .threshold(alpha)
}

/// `(1−α)`-quantile of `χ²(dof)`, computed deterministically.
pub fn chi2_threshold(dof: usize, alpha: f64) -> Result<f64> {
    check_alpha(alpha)?;
    Ok(chi2(dof)?.inverse_cdf(1.0 - alpha))
}

/// Upper-tail probability of `s` under `null`.
pub fn pvalue(null: &NullSpec, s: f64) -> Result<f64> {
    Ok(null.build()?.pvalue(s))
}
