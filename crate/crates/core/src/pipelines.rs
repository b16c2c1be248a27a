//! End-to-end tests: split, choose locations, release, score, decide.
//!
//! Randomness is split by role. The train/test split, location sampling and
//! Monte-Carlo nulls come from the tester's substream of `cfg.seed`; the
//! mechanisms draw from generators owned by the releasing party. With matched
//! seeds the settings therefore see the same split and the same locations.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{invalid, Error, Result};
use crate::features::{difference_features, median_heuristic, single_features, Dataset, TestLocations, Variant};
use crate::nulls::{nte_null_weights, tcmc_null_weights, NullKind, NullSpec, DEFAULT_MC_SAMPLES};
use crate::optimize::{optimize_locations, OptimizerParams};
use crate::privacy::{
    compose_total, make_private_summary, per_release_epsilon, perturb_statistic, Mechanism, NoiseRecord,
    PerturbOptions, PrivacyBudget,
};
use crate::rng::{derive_seed, stream, substream, DpRng};
use crate::statistic::{gamma_schedule, pooled_statistic, statistic, statistic_parts, summarize, TCS_GAMMA};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Setting {
    NonPrivate,
    /// Trusted curator perturbs mean and covariance.
    Tcmc,
    /// Trusted curator perturbs the statistic.
    Tcs,
    /// No trusted entity: each owner releases its own summary.
    Nte,
}

impl Setting {
    pub fn name(self) -> &'static str {
        match self {
            Setting::NonPrivate => "nonprivate",
            Setting::Tcmc => "tcmc",
            Setting::Tcs => "tcs",
            Setting::Nte => "nte",
        }
    }

    pub const ALL: [Setting; 4] = [Setting::NonPrivate, Setting::Tcmc, Setting::Tcs, Setting::Nte];
}

impl std::str::FromStr for Setting {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Setting::ALL
            .into_iter()
            .find(|v| v.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| invalid("setting", format!("unknown setting `{s}` (expected nonprivate, tcmc, tcs or nte)")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum GammaPolicy {
    Fixed(f64),
    /// `c · n^{−1/4}` with `n` the test-split size.
    Schedule { c: f64 },
}

impl Default for GammaPolicy {
    fn default() -> Self {
        GammaPolicy::Fixed(TCS_GAMMA)
    }
}

impl GammaPolicy {
    pub fn value(self, n: usize) -> f64 {
        match self {
            GammaPolicy::Fixed(g) => g,
            GammaPolicy::Schedule { c } => gamma_schedule(n, c),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum LocationPolicy {
    /// Gaussian-fit initialisation refined by gradient ascent on the paired
    /// training statistic.
    Optimize,
    /// Gaussian-fit sample with median-heuristic bandwidth.
    SampleMedian,
    /// Private argmax over candidate locations, with `L`-fold composition
    /// slack `delta_slack`.
    Grid {
        candidates: Vec<TestLocations>,
        delta_slack: f64,
    },
    Fixed(TestLocations),
}

/// Which null scores the statistic.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum NullChoice {
    /// Noise-aware approximation for the setting.
    #[default]
    Corrected,
    /// Plain `χ²_J`, ignoring the privacy noise.
    Asymptotic,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TestConfig {
    pub setting: Setting,
    pub variant: Variant,
    pub n_features: usize,
    pub alpha: f64,
    pub budget: PrivacyBudget,
    pub train_frac: f64,
    pub gamma: GammaPolicy,
    pub locations: LocationPolicy,
    pub null: NullChoice,
    pub mc_samples: usize,
    pub perturb: PerturbOptions,
    pub optimizer: OptimizerParams,
    pub seed: u64,
}

impl TestConfig {
    /// Defaults: `J = 5`, `α = 0.01`, 20% training split, `γ = 0.001`,
    /// optimised locations (sampled for NTE), corrected null.
    pub fn new(setting: Setting, variant: Variant, budget: PrivacyBudget, seed: u64) -> Self {
        Self {
            setting,
            variant,
            n_features: 5,
            alpha: 0.01,
            budget,
            train_frac: 0.2,
            gamma: GammaPolicy::default(),
            locations: match setting {
                Setting::Nte => LocationPolicy::SampleMedian,
                _ => LocationPolicy::Optimize,
            },
            null: NullChoice::Corrected,
            mc_samples: DEFAULT_MC_SAMPLES,
            perturb: PerturbOptions::default(),
            optimizer: OptimizerParams::default(),
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_features == 0 {
            return Err(invalid("J", "must be at least 1"));
        }
        if self.variant == Variant::Scf && !self.n_features.is_multiple_of(2) {
            return Err(invalid("J", format!("SCF needs an even feature count, got {}", self.n_features)));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(invalid("alpha", format!("must lie in (0, 1), got {}", self.alpha)));
        }
        if !(self.train_frac > 0.0 && self.train_frac < 1.0) {
            return Err(invalid("train_frac", format!("must lie in (0, 1), got {}", self.train_frac)));
        }
        if self.setting == Setting::Nte && self.locations == LocationPolicy::Optimize {
            return Err(invalid(
                "locations",
                "no party holds both samples without a trusted curator; use sample-median or grid",
            ));
        }
        Ok(())
    }

    fn null_seed(&self) -> u64 {
        derive_seed(self.seed, &[stream::TESTER, 1])
    }
}

/// Accounting for a private grid search.
#[derive(Debug, Clone, PartialEq)]
pub struct GridReport {
    pub releases: usize,
    pub per_release: PrivacyBudget,
    pub delta_slack: f64,
    /// `(ε_tot, δ_tot)` recomposed from the per-release budget.
    pub composed: (f64, f64),
    pub statistics: Vec<f64>,
    pub selected: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TestOutcome {
    pub setting: Setting,
    pub statistic: f64,
    pub threshold: f64,
    pub p_value: f64,
    pub reject: bool,
    pub null_kind: NullKind,
    /// Budget spent on the test split (per owner for NTE); `None` when nothing is released privately.
    pub budget_spent: Option<PrivacyBudget>,
    /// Curator noise, or owner-x noise for NTE.
    pub noise: NoiseRecord,
    /// Owner-y noise for NTE.
    pub noise_y: Option<NoiseRecord>,
    pub locations: TestLocations,
    pub n_test: usize,
    pub grid: Option<GridReport>,
    pub seed: u64,
}

/// Train and test splits of both samples.
#[derive(Debug, Clone)]
pub struct SplitData {
    pub train_x: Dataset,
    pub train_y: Dataset,
    pub test_x: Dataset,
    pub test_y: Dataset,
}

fn split_indices(n: usize, frac: f64, rng: &mut DpRng) -> Result<(Vec<usize>, Vec<usize>)> {
    let n_train = (frac * n as f64).round() as usize;
    if n_train < 2 || n - n_train < 2 {
        return Err(invalid(
            "train_frac",
            format!("split of {n} rows leaves {n_train} train / {} test; both need at least 2", n - n_train),
        ));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(rng);
    let mut train = idx[..n_train].to_vec();
    let mut test = idx[n_train..].to_vec();
    train.sort_unstable();
    test.sort_unstable();
    Ok((train, test))
}

/// Disjoint random split. Equal-size samples are split with one permutation
/// so paired rows stay paired; otherwise each sample is split on its own.
pub fn split_train_test(x: &Dataset, y: &Dataset, train_frac: f64, rng: &mut DpRng) -> Result<SplitData> {
    if x.dim() != y.dim() {
        return Err(Error::DimensionMismatch {
            expected: x.dim(),
            got: y.dim(),
        });
    }
    let (tx, sx) = split_indices(x.n(), train_frac, rng)?;
    let (ty, sy) = if x.n() == y.n() {
        (tx.clone(), sx.clone())
    } else {
        split_indices(y.n(), train_frac, rng)?
    };
    Ok(SplitData {
        train_x: x.select(&tx, format!("{}:train", x.label()))?,
        train_y: y.select(&ty, format!("{}:train", y.label()))?,
        test_x: x.select(&sx, format!("{}:test", x.label()))?,
        test_y: y.select(&sy, format!("{}:test", y.label()))?,
    })
}

/// The split `cfg` will use for `(x, y)`.
pub fn split_for(x: &Dataset, y: &Dataset, cfg: &TestConfig) -> Result<SplitData> {
    split_train_test(x, y, cfg.train_frac, &mut substream(cfg.seed, stream::TESTER))
}

/// ME: `J` points from `N(mean, diag(var))` of the pool. SCF: `J/2`
/// frequencies from `N(0, I)` in bandwidth-scaled space. Bandwidth from the
/// median heuristic on the pool.
pub fn sample_locations(pool: &Dataset, n_features: usize, variant: Variant, rng: &mut DpRng) -> Result<TestLocations> {
    let bw = median_heuristic(pool)?;
    let d = pool.dim();
    let points = match variant {
        Variant::Me => {
            let nf = pool.n() as f64;
            let mut mean = vec![0.0; d];
            for row in pool.rows() {
                for (m, v) in mean.iter_mut().zip(row) {
                    *m += v / nf;
                }
            }
            let mut var = vec![0.0; d];
            for row in pool.rows() {
                for ((s, v), m) in var.iter_mut().zip(row).zip(&mean) {
                    *s += (v - m) * (v - m) / (nf - 1.0);
                }
            }
            (0..n_features)
                .map(|_| {
                    mean.iter()
                        .zip(&var)
                        .map(|(m, v)| m + v.sqrt() * rng.sample::<f64, _>(StandardNormal))
                        .collect()
                })
                .collect()
        }
        Variant::Scf => {
            if !n_features.is_multiple_of(2) {
                return Err(invalid("J", "SCF needs an even feature count"));
            }
            (0..n_features / 2)
                .map(|_| (0..d).map(|_| rng.sample(StandardNormal)).collect())
                .collect()
        }
    };
    TestLocations::new(points, variant, bw)
}

/// Private grid search: each owner releases a private summary per candidate
/// at a per-release budget whose `L`-fold composition equals `total`; the
/// tester keeps the candidate with the largest pooled statistic.
#[allow(clippy::too_many_arguments)]
pub fn grid_select_location(
    candidates: &[TestLocations],
    x: &Dataset,
    y: &Dataset,
    total: PrivacyBudget,
    delta_slack: f64,
    gamma: f64,
    opts: &PerturbOptions,
    rng_x: &mut DpRng,
    rng_y: &mut DpRng,
) -> Result<(TestLocations, GridReport)> {
    let l = candidates.len();
    if l == 0 {
        return Err(invalid("grid", "need at least one candidate"));
    }
    if !(delta_slack > 0.0 && delta_slack < total.delta()) {
        return Err(invalid(
            "delta_slack",
            format!("must lie in (0, δ = {}), got {delta_slack}", total.delta()),
        ));
    }
    let eps = per_release_epsilon(total.epsilon(), l, delta_slack)?;
    let per_release = PrivacyBudget::new(eps, (total.delta() - delta_slack) / l as f64)?;
    let composed = compose_total(per_release.epsilon(), per_release.delta(), l, delta_slack)?;
    let mut statistics = Vec::with_capacity(l);
    for loc in candidates {
        let sx = make_private_summary(&summarize(&single_features(x, loc)?), per_release, opts, rng_x)?;
        let sy = make_private_summary(&summarize(&single_features(y, loc)?), per_release, opts, rng_y)?;
        let s = pooled_statistic(&sx.w, &sx.sigma, sx.n, &sy.w, &sy.sigma, sy.n, gamma).unwrap_or(f64::NEG_INFINITY);
        statistics.push(if s.is_finite() { s } else { f64::NEG_INFINITY });
    }
    let selected = statistics
        .iter()
        .enumerate()
        .fold(0, |best, (i, v)| if *v > statistics[best] { i } else { best });
    Ok((
        candidates[selected].clone(),
        GridReport {
            releases: l,
            per_release,
            delta_slack,
            composed,
            statistics,
            selected,
        },
    ))
}

/// Locations `cfg` selects on the given split (without any grid report).
pub fn choose_locations(split: &SplitData, cfg: &TestConfig) -> Result<TestLocations> {
    Ok(choose_locations_inner(split, cfg)?.0)
}

fn choose_locations_inner(split: &SplitData, cfg: &TestConfig) -> Result<(TestLocations, Option<GridReport>)> {
    let mut rng = substream(derive_seed(cfg.seed, &[stream::TESTER, 2]), 0);
    let pool = || split.train_x.stack(&split.train_y, "train-pool");
    match &cfg.locations {
        LocationPolicy::Fixed(loc) => Ok((loc.clone(), None)),
        LocationPolicy::SampleMedian => Ok((sample_locations(&pool()?, cfg.n_features, cfg.variant, &mut rng)?, None)),
        LocationPolicy::Optimize => {
            let init = sample_locations(&pool()?, cfg.n_features, cfg.variant, &mut rng)?;
            let gamma = cfg.gamma.value(split.train_x.n());
            let out = optimize_locations(&split.train_x, &split.train_y, &init, gamma, cfg.optimizer)?;
            Ok((out.locations, None))
        }
        LocationPolicy::Grid {
            candidates,
            delta_slack,
        } => {
            let gamma = cfg.gamma.value(split.train_x.n().min(split.train_y.n()));
            let mut rx = substream(derive_seed(cfg.seed, &[stream::OWNER_X, 1]), 0);
            let mut ry = substream(derive_seed(cfg.seed, &[stream::OWNER_Y, 1]), 0);
            let (loc, report) = grid_select_location(
                candidates,
                &split.train_x,
                &split.train_y,
                cfg.budget,
                *delta_slack,
                gamma,
                &cfg.perturb,
                &mut rx,
                &mut ry,
            )?;
            Ok((loc, Some(report)))
        }
    }
}

/// A statistic plus everything needed to score it under either null.
struct Scored {
    statistic: f64,
    corrected: NullKind,
    dof: usize,
    budget_spent: Option<PrivacyBudget>,
    noise: NoiseRecord,
    noise_y: Option<NoiseRecord>,
    n_test: usize,
}

fn decide(
    cfg: &TestConfig,
    scored: &Scored,
    null: NullChoice,
    locations: &TestLocations,
    grid: &Option<GridReport>,
) -> Result<TestOutcome> {
    let kind = match null {
        NullChoice::Corrected => scored.corrected.clone(),
        NullChoice::Asymptotic => NullKind::AsymptoticChi2 { dof: scored.dof },
    };
    let dist = NullSpec::new(kind.clone(), cfg.mc_samples, cfg.null_seed()).build()?;
    let threshold = dist.threshold(cfg.alpha)?;
    let p_value = dist.pvalue(scored.statistic);
    Ok(TestOutcome {
        setting: cfg.setting,
        statistic: scored.statistic,
        threshold,
        p_value,
        reject: scored.statistic > threshold,
        null_kind: kind,
        budget_spent: scored.budget_spent,
        noise: scored.noise,
        noise_y: scored.noise_y,
        locations: locations.clone(),
        n_test: scored.n_test,
        grid: grid.clone(),
        seed: cfg.seed,
    })
}

fn require_paired(x: &Dataset, y: &Dataset) -> Result<()> {
    if x.n() != y.n() {
        return Err(Error::SampleCountMismatch {
            left: x.n(),
            right: y.n(),
        });
    }
    Ok(())
}

fn score(split: &SplitData, loc: &TestLocations, cfg: &TestConfig, rng_x: &mut DpRng, rng_y: &mut DpRng) -> Result<Scored> {
    let dof = loc.n_features();
    let asymptotic = NullKind::AsymptoticChi2 { dof };
    match cfg.setting {
        Setting::NonPrivate | Setting::Tcmc | Setting::Tcs => {
            require_paired(&split.test_x, &split.test_y)?;
            let z = difference_features(&split.test_x, &split.test_y, loc)?;
            let s = summarize(&z);
            let n = s.n;
            let gamma = cfg.gamma.value(n);
            match cfg.setting {
                Setting::NonPrivate => Ok(Scored {
                    statistic: statistic(&s, gamma)?,
                    corrected: asymptotic,
                    dof,
                    budget_spent: None,
                    noise: NoiseRecord::default(),
                    noise_y: None,
                    n_test: n,
                }),
                Setting::Tcmc => {
                    let p = make_private_summary(&s, cfg.budget, &cfg.perturb, rng_x)?;
                    let stat = statistic_parts(&p.w, &p.sigma, n, gamma)?;
                    let corrected = if cfg.perturb.noise {
                        NullKind::WeightedChi2 {
                            weights: tcmc_null_weights(&p.sigma, gamma, n, p.noise.sigma_mean)?,
                        }
                    } else {
                        asymptotic
                    };
                    Ok(Scored {
                        statistic: stat,
                        corrected,
                        dof,
                        budget_spent: Some(p.budget_spent),
                        noise: p.noise,
                        noise_y: None,
                        n_test: n,
                    })
                }
                _ => {
                    let raw = statistic(&s, gamma)?;
                    let (stat, sigma) = if cfg.perturb.noise {
                        perturb_statistic(raw, cfg.budget, cfg.perturb.kappa, dof, n, gamma, rng_x)?
                    } else {
                        (raw, 0.0)
                    };
                    let corrected = if sigma > 0.0 {
                        NullKind::Chi2PlusGaussian { dof, sigma }
                    } else {
                        asymptotic
                    };
                    Ok(Scored {
                        statistic: stat,
                        corrected,
                        dof,
                        budget_spent: Some(cfg.budget),
                        noise: NoiseRecord {
                            sigma_stat: sigma,
                            stat_mechanism: if sigma > 0.0 { Mechanism::AnalyticGaussian } else { Mechanism::None },
                            ..NoiseRecord::default()
                        },
                        noise_y: None,
                        n_test: n,
                    })
                }
            }
        }
        Setting::Nte => {
            let sx = summarize(&single_features(&split.test_x, loc)?);
            let sy = summarize(&single_features(&split.test_y, loc)?);
            let (nx, ny) = (sx.n, sy.n);
            let gamma = cfg.gamma.value(nx.min(ny));
            let px = make_private_summary(&sx, cfg.budget, &cfg.perturb, rng_x)?;
            let py = make_private_summary(&sy, cfg.budget, &cfg.perturb, rng_y)?;
            let stat = pooled_statistic(&px.w, &px.sigma, nx, &py.w, &py.sigma, ny, gamma)?;
            let corrected = if cfg.perturb.noise {
                NullKind::WeightedChi2 {
                    weights: nte_null_weights(
                        &px.sigma,
                        &py.sigma,
                        nx,
                        ny,
                        px.noise.sigma_mean,
                        py.noise.sigma_mean,
                        gamma,
                    )?,
                }
            } else {
                asymptotic
            };
            Ok(Scored {
                statistic: stat,
                corrected,
                dof,
                budget_spent: Some(cfg.budget),
                noise: px.noise,
                noise_y: Some(py.noise),
                n_test: nx.min(ny),
            })
        }
    }
}

/// Runs `cfg` once and scores the same released statistic under each
/// requested null. The noise generators are `rng_x` (curator or owner x)
/// and `rng_y` (owner y; unused outside NTE).
pub fn run_with_nulls(
    x: &Dataset,
    y: &Dataset,
    cfg: &TestConfig,
    nulls: &[NullChoice],
    rng_x: &mut DpRng,
    rng_y: &mut DpRng,
) -> Result<Vec<TestOutcome>> {
    cfg.validate()?;
    let split = split_for(x, y, cfg)?;
    let (loc, grid) = choose_locations_inner(&split, cfg)?;
    let scored = score(&split, &loc, cfg, rng_x, rng_y)?;
    nulls.iter().map(|&n| decide(cfg, &scored, n, &loc, &grid)).collect()
}

fn run_one(x: &Dataset, y: &Dataset, cfg: &TestConfig, rng_x: &mut DpRng, rng_y: &mut DpRng) -> Result<TestOutcome> {
    Ok(run_with_nulls(x, y, cfg, &[cfg.null], rng_x, rng_y)?.remove(0))
}

fn with_setting(cfg: &TestConfig, setting: Setting) -> TestConfig {
    TestConfig {
        setting,
        ..cfg.clone()
    }
}

/// Non-private test scored against `χ²_J`.
pub fn run_nonprivate(x: &Dataset, y: &Dataset, cfg: &TestConfig) -> Result<TestOutcome> {
    let mut unused = substream(cfg.seed, stream::CURATOR);
    let mut unused_y = substream(cfg.seed, stream::OWNER_Y);
    run_one(x, y, &with_setting(cfg, Setting::NonPrivate), &mut unused, &mut unused_y)
}

/// Curator releases a private mean and covariance of the difference features.
pub fn run_tcmc(x: &Dataset, y: &Dataset, cfg: &TestConfig, rng: &mut DpRng) -> Result<TestOutcome> {
    let mut unused = substream(cfg.seed, stream::OWNER_Y);
    run_one(x, y, &with_setting(cfg, Setting::Tcmc), rng, &mut unused)
}

/// Curator releases the statistic plus Gaussian noise.
pub fn run_tcs(x: &Dataset, y: &Dataset, cfg: &TestConfig, rng: &mut DpRng) -> Result<TestOutcome> {
    let mut unused = substream(cfg.seed, stream::OWNER_Y);
    run_one(x, y, &with_setting(cfg, Setting::Tcs), rng, &mut unused)
}

/// Each owner releases its own private summary; the tester pools them.
pub fn run_nte(x: &Dataset, y: &Dataset, cfg: &TestConfig, rng_x: &mut DpRng, rng_y: &mut DpRng) -> Result<TestOutcome> {
    run_one(x, y, &with_setting(cfg, Setting::Nte), rng_x, rng_y)
}

/// Runs `cfg.setting` with noise generators derived from `cfg.seed`.
pub fn run_test(x: &Dataset, y: &Dataset, cfg: &TestConfig) -> Result<TestOutcome> {
    let (mut a, mut b) = party_rngs(cfg);
    run_one(x, y, cfg, &mut a, &mut b)
}

/// Default noise generators for `cfg`: the curator (or owner x) and owner y.
pub fn party_rngs(cfg: &TestConfig) -> (DpRng, DpRng) {
    let first = match cfg.setting {
        Setting::Nte => stream::OWNER_X,
        _ => stream::CURATOR,
    };
    (substream(cfg.seed, first), substream(cfg.seed, stream::OWNER_Y))
}
