//! Sensitivity bounds, Gaussian mechanisms and privacy accounting.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Exp, StandardNormal};
use statrs::function::erf::erfc;

use crate::error::{invalid, Error, Result};
use crate::linalg::{check_symmetric, clamp_eigenvalues};
use crate::rng::DpRng;
use crate::statistic::{covariance_from_moments, Summary};

/// Eigenvalue floor applied to the perturbed second-moment matrix.
pub const DEFAULT_CLAMP: f64 = 0.01;
/// Fraction of the budget spent on the mean (the rest goes to `Λ`).
pub const DEFAULT_SPLIT: f64 = 0.5;

const SIGMA_RTOL: f64 = 1e-9;

/// An `(ε, δ)` pair with `ε > 0` and `0 < δ < 1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PrivacyBudget {
    epsilon: f64,
    delta: f64,
}

impl PrivacyBudget {
    pub fn new(epsilon: f64, delta: f64) -> Result<Self> {
        if !(epsilon > 0.0 && epsilon.is_finite()) {
            return Err(invalid("epsilon", format!("must be positive and finite, got {epsilon}")));
        }
        if !(delta > 0.0 && delta < 1.0) {
            return Err(invalid("delta", format!("must lie in (0, 1), got {delta}")));
        }
        Ok(Self { epsilon, delta })
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    /// `(frac·ε, frac·δ)` and the remainder; the parts sum back exactly.
    pub fn split(&self, frac: f64) -> Result<(PrivacyBudget, PrivacyBudget)> {
        if !(frac > 0.0 && frac < 1.0) {
            return Err(invalid("split", format!("must lie in (0, 1), got {frac}")));
        }
        let (e1, d1) = (frac * self.epsilon, frac * self.delta);
        Ok((
            PrivacyBudget::new(e1, d1)?,
            PrivacyBudget::new(self.epsilon - e1, self.delta - d1)?,
        ))
    }
}

/// How a given quantity was perturbed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Mechanism {
    #[default]
    None,
    AnalyticGaussian,
    /// Symmetric Gaussian noise on `Λ` followed by an eigenvalue clamp.
    AnalyzeGauss,
    /// Additive χ²(2) noise on the statistic. No formal guarantee.
    Chi2Experimental,
}

impl Mechanism {
    pub fn name(self) -> &'static str {
        match self {
            Mechanism::None => "none",
            Mechanism::AnalyticGaussian => "analytic-gaussian",
            Mechanism::AnalyzeGauss => "analyze-gauss",
            Mechanism::Chi2Experimental => "chi2-experimental",
        }
    }
}

/// Noise scales used along one release path. Zero means "not perturbed".
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct NoiseRecord {
    /// Per-coordinate std of the mean noise, `σ_n`.
    pub sigma_mean: f64,
    /// Per-entry std of the second-moment noise, `β`.
    pub beta_cov: f64,
    /// Std of the statistic noise, `σ_η`.
    pub sigma_stat: f64,
    pub mean_mechanism: Mechanism,
    pub cov_mechanism: Mechanism,
    pub stat_mechanism: Mechanism,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PrivateSummary {
    pub w: DVector<f64>,
    pub lambda: DMatrix<f64>,
    /// `Λ̃ − n/(n−1)·w̃w̃ᵀ`; may be indefinite.
    pub sigma: DMatrix<f64>,
    pub n: usize,
    pub noise: NoiseRecord,
    pub budget_spent: PrivacyBudget,
}

fn check_kjn(kappa: f64, j: usize, n: usize, min_n: usize) -> Result<()> {
    if !(kappa > 0.0) {
        return Err(invalid("kappa", format!("must be positive, got {kappa}")));
    }
    if j == 0 {
        return Err(invalid("J", "must be at least 1"));
    }
    if n < min_n {
        return Err(Error::TooFewSamples { min: min_n, got: n });
    }
    Ok(())
}

/// L2 sensitivity of the mean: `κ√J/n`.
pub fn sens_mean(kappa: f64, j: usize, n: usize) -> Result<f64> {
    check_kjn(kappa, j, n, 1)?;
    Ok(kappa * (j as f64).sqrt() / n as f64)
}

/// Frobenius sensitivity of `Λ`: `κ²J/(n−1)`.
pub fn sens_second_moment(kappa: f64, j: usize, n: usize) -> Result<f64> {
    check_kjn(kappa, j, n, 2)?;
    Ok(kappa * kappa * j as f64 / (n as f64 - 1.0))
}

/// Sensitivity bound for the statistic:
/// `4κ²J√J/(nγ) · (1 + κ²J/(n−1))`.
pub fn sens_statistic(kappa: f64, j: usize, n: usize, gamma: f64) -> Result<f64> {
    check_kjn(kappa, j, n, 2)?;
    if !(gamma > 0.0) {
        return Err(invalid("gamma", format!("must be positive, got {gamma}")));
    }
    let (k2, jf, nf) = (kappa * kappa, j as f64, n as f64);
    Ok(4.0 * k2 * jf * jf.sqrt() / (nf * gamma) * (1.0 + k2 * jf / (nf - 1.0)))
}

/// Classical calibration `Δ√(2 ln(1.25/δ))/ε`, valid only for `ε < 1`.
pub fn gaussian_sigma_classical(budget: PrivacyBudget, sensitivity: f64) -> Result<f64> {
    if budget.epsilon >= 1.0 {
        return Err(Error::ClassicalEpsilonRange(budget.epsilon));
    }
    check_sensitivity(sensitivity)?;
    Ok(sensitivity * (2.0 * (1.25 / budget.delta).ln()).sqrt() / budget.epsilon)
}

fn check_sensitivity(s: f64) -> Result<()> {
    if s >= 0.0 && s.is_finite() {
        Ok(())
    } else {
        Err(invalid("sensitivity", format!("must be nonnegative and finite, got {s}")))
    }
}

/// `ln Φ(x)`, accurate far into the lower tail.
pub(crate) fn log_norm_cdf(x: f64) -> f64 {
    if x > -30.0 {
        (0.5 * erfc(-x / std::f64::consts::SQRT_2)).ln()
    } else {
        let x2 = x * x;
        let series = 1.0 - 1.0 / x2 + 3.0 / (x2 * x2) - 15.0 / (x2 * x2 * x2);
        -0.5 * x2 - (-x).ln() - 0.5 * (2.0 * std::f64::consts::PI).ln() + series.ln()
    }
}

fn norm_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

/// Left side of the Gaussian privacy-profile condition at noise ratio
/// `r = σ/Δ`: `Φ(1/(2r) − εr) − e^ε Φ(−1/(2r) − εr)`.
pub fn gaussian_profile(epsilon: f64, ratio: f64) -> f64 {
    let a = 0.5 / ratio - epsilon * ratio;
    let b = -0.5 / ratio - epsilon * ratio;
    norm_cdf(a) - (epsilon + log_norm_cdf(b)).exp()
}

/// Smallest `σ` meeting the exact Gaussian privacy profile at `(ε, δ)`.
pub fn gaussian_sigma_analytic(budget: PrivacyBudget, sensitivity: f64) -> Result<f64> {
    check_sensitivity(sensitivity)?;
    if sensitivity == 0.0 {
        return Ok(0.0);
    }
    let (eps, delta) = (budget.epsilon, budget.delta);
    let ok = |r: f64| gaussian_profile(eps, r) <= delta;
    let mut hi = 1.0;
    let mut iters = 0;
    while !ok(hi) {
        hi *= 2.0;
        iters += 1;
        if iters > 1100 {
            return Err(Error::RootNotFound(format!("no σ upper bracket for ε={eps}, δ={delta}")));
        }
    }
    let mut lo = hi;
    while ok(lo) {
        lo *= 0.5;
        iters += 1;
        if iters > 2200 {
            return Err(Error::RootNotFound(format!("no σ lower bracket for ε={eps}, δ={delta}")));
        }
    }
    while (hi - lo) > SIGMA_RTOL * hi * 1e-3 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if ok(mid) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(hi * sensitivity)
}

/// `w + N(0, σ²I)`.
pub fn perturb_mean(w: &DVector<f64>, sigma: f64, rng: &mut DpRng) -> Result<DVector<f64>> {
    if !(sigma >= 0.0) {
        return Err(invalid("sigma", format!("must be nonnegative, got {sigma}")));
    }
    if sigma == 0.0 {
        return Ok(w.clone());
    }
    Ok(w.map(|v| v + sigma * rng.sample::<f64, _>(StandardNormal)))
}

/// Noise std for the second-moment release:
/// `κ²J√(2 ln(1.25/δ₂))/((n−1)ε₂)`.
pub fn second_moment_beta(kappa: f64, j: usize, n: usize, budget: PrivacyBudget) -> Result<f64> {
    Ok(sens_second_moment(kappa, j, n)? * (2.0 * (1.25 / budget.delta).ln()).sqrt() / budget.epsilon)
}

/// Adds symmetric `N(0, β²)` noise (upper triangle drawn row by row, then
/// mirrored) and raises eigenvalues below `clamp` to `clamp`.
pub fn perturb_second_moment(lambda: &DMatrix<f64>, beta: f64, clamp: f64, rng: &mut DpRng) -> Result<DMatrix<f64>> {
    check_symmetric(lambda)?;
    if !(beta >= 0.0) {
        return Err(invalid("beta", format!("must be nonnegative, got {beta}")));
    }
    let j = lambda.nrows();
    let mut out = lambda.clone();
    if beta > 0.0 {
        for a in 0..j {
            for b in a..j {
                let e = beta * rng.sample::<f64, _>(StandardNormal);
                out[(a, b)] += e;
                if a != b {
                    out[(b, a)] += e;
                }
            }
        }
    }
    Ok(clamp_eigenvalues(&out, clamp))
}

/// Knobs for [`make_private_summary`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PerturbOptions {
    pub split: f64,
    pub clamp: f64,
    pub kappa: f64,
    /// When false, nothing is perturbed or clamped (used to compare against
    /// the non-private path).
    pub noise: bool,
}

impl Default for PerturbOptions {
    fn default() -> Self {
        Self {
            split: DEFAULT_SPLIT,
            clamp: DEFAULT_CLAMP,
            kappa: crate::features::KAPPA,
            noise: true,
        }
    }
}

/// Releases `(w̃, Λ̃)`: the mean through the analytic mechanism with
/// `split·(ε, δ)`, `Λ` with the remainder.
pub fn make_private_summary(
    summary: &Summary,
    budget: PrivacyBudget,
    opts: &PerturbOptions,
    rng: &mut DpRng,
) -> Result<PrivateSummary> {
    let (b_mean, b_cov) = budget.split(opts.split)?;
    let (j, n) = (summary.n_features(), summary.n);
    if !opts.noise {
        return Ok(PrivateSummary {
            w: summary.w.clone(),
            lambda: summary.lambda.clone(),
            sigma: summary.sigma.clone(),
            n,
            noise: NoiseRecord::default(),
            budget_spent: budget,
        });
    }
    let sigma_mean = gaussian_sigma_analytic(b_mean, sens_mean(opts.kappa, j, n)?)?;
    let beta = second_moment_beta(opts.kappa, j, n, b_cov)?;
    let w = perturb_mean(&summary.w, sigma_mean, rng)?;
    let lambda = perturb_second_moment(&summary.lambda, beta, opts.clamp, rng)?;
    let sigma = covariance_from_moments(&w, &lambda, n);
    Ok(PrivateSummary {
        w,
        lambda,
        sigma,
        n,
        noise: NoiseRecord {
            sigma_mean,
            beta_cov: beta,
            mean_mechanism: Mechanism::AnalyticGaussian,
            cov_mechanism: Mechanism::AnalyzeGauss,
            ..NoiseRecord::default()
        },
        budget_spent: budget,
    })
}

/// Releases `s + N(0, σ_η²)` with `σ_η` calibrated to [`sens_statistic`].
/// Returns the noisy value and `σ_η`.
pub fn perturb_statistic(
    value: f64,
    budget: PrivacyBudget,
    kappa: f64,
    j: usize,
    n: usize,
    gamma: f64,
    rng: &mut DpRng,
) -> Result<(f64, f64)> {
    let sigma = gaussian_sigma_analytic(budget, sens_statistic(kappa, j, n, gamma)?)?;
    Ok((value + sigma * rng.sample::<f64, _>(StandardNormal), sigma))
}

/// Output of [`perturb_statistic_chi2`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Chi2Release {
    pub value: f64,
    pub warning: &'static str,
}

pub const CHI2_WARNING: &str =
    "chi-square noise mechanism is experimental: it gives no privacy guarantee when the statistic is near zero";

/// Adds χ²(2) noise to the statistic. Experimental: no `(ε, δ)` accounting.
pub fn perturb_statistic_chi2(value: f64, rng: &mut DpRng) -> Chi2Release {
    let exp = Exp::new(0.5).expect("rate 0.5 is valid");
    Chi2Release {
        value: value + rng.sample(exp),
        warning: CHI2_WARNING,
    }
}

/// Total loss of `L` releases at `(ε, δ)` each:
/// `ε_tot = √(2L ln(1/δ′))ε + Lε(e^ε − 1)`, `δ_tot = Lδ + δ′`.
pub fn compose_total(epsilon: f64, delta: f64, releases: usize, delta_slack: f64) -> Result<(f64, f64)> {
    if !(epsilon >= 0.0 && delta >= 0.0 && delta_slack >= 0.0) {
        return Err(invalid("budget", "ε, δ and δ′ must be nonnegative"));
    }
    if releases == 0 {
        return Err(invalid("L", "need at least one release"));
    }
    if !(delta_slack > 0.0) {
        return Err(invalid("delta_prime", "δ′ must be positive (ln(1/δ′) diverges at 0)"));
    }
    let l = releases as f64;
    let eps_tot = (2.0 * l * (1.0 / delta_slack).ln()).sqrt() * epsilon + l * epsilon * epsilon.exp_m1();
    Ok((eps_tot, l * delta + delta_slack))
}

/// Per-release `ε` whose `L`-fold composition equals `ε_tot`.
pub fn per_release_epsilon(eps_total: f64, releases: usize, delta_slack: f64) -> Result<f64> {
    if !(eps_total > 0.0 && eps_total.is_finite()) {
        return Err(invalid("epsilon_total", format!("must be positive, got {eps_total}")));
    }
    let f = |e: f64| compose_total(e, 0.0, releases, delta_slack).map(|(t, _)| t);
    if !(f(1.0)? > 0.0) {
        return Err(Error::RootNotFound(format!(
            "composition is flat in ε for L={releases}, δ′={delta_slack}"
        )));
    }
    let mut hi = 1.0;
    while f(hi)? < eps_total {
        hi *= 2.0;
        if hi > 1e6 {
            return Err(Error::RootNotFound(format!("no ε bracket for ε_tot={eps_total}")));
        }
    }
    let mut lo = 0.0;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if f(mid)? < eps_total {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}
