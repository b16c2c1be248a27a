//! Reproducible sweeps over ε or n with per-trial CSV output.
//!
//! Trial seeds are `derive_seed(master_seed, [hash(setting), sweep index,
//! trial index])`, where `setting` is the base name (`tcmc` for both `tcmc`
//! and `tcmc_asym`). A corrected setting and its `_asym` twin therefore see
//! the same data and noise and differ only in the null used for scoring.

use std::fmt::Write as _;
use std::path::Path;

use rand::seq::index::sample;
use rayon::prelude::*;
use serde::Deserialize;

use crate::error::{Error, Result};
use crate::features::{Dataset, Variant};
use crate::optimize::OptimizerParams;
use crate::pipelines::{party_rngs, run_with_nulls, LocationPolicy, NullChoice, Setting, TestConfig, TestOutcome};
use crate::privacy::PrivacyBudget;
use crate::rng::{derive_seed, label_hash, stream, substream};
use crate::synthgen::{gen_blobs, gen_gmd, gen_gvd, gen_sg, load_csv, BlobsParams};

pub const SEED_ENV: &str = "DPK2ST_SEED";

pub const RESULT_COLUMNS: [&str; 15] = [
    "setting",
    "variant",
    "dataset",
    "epsilon",
    "delta",
    "n",
    "trial_index",
    "statistic",
    "threshold",
    "p_value",
    "reject",
    "sigma_mean",
    "beta_cov",
    "sigma_stat",
    "seed",
];

pub const AGGREGATE_COLUMNS: [&str; 4] = ["setting", "sweep_value", "rejection_rate", "trials"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SweepAxis {
    Epsilon,
    N,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LocationChoice {
    /// Optimised for the curator settings, sampled for NTE.
    Optimize,
    Sample,
}

fn default_dataset() -> String {
    "sg".into()
}
fn default_variant() -> String {
    "me".into()
}
fn default_settings() -> Vec<String> {
    vec!["nonprivate".into(), "tcmc".into(), "tcs".into(), "nte".into()]
}
fn default_n() -> usize {
    2000
}
fn default_epsilon() -> f64 {
    2.5
}
fn default_delta() -> f64 {
    1e-5
}
fn default_j() -> usize {
    5
}
fn default_alpha() -> f64 {
    0.01
}
fn default_gamma() -> f64 {
    1e-3
}
fn default_train_frac() -> f64 {
    0.2
}
fn default_trials() -> usize {
    500
}
fn default_mc() -> usize {
    crate::nulls::DEFAULT_MC_SAMPLES
}
fn default_locations() -> LocationChoice {
    LocationChoice::Optimize
}
fn default_steps() -> usize {
    OptimizerParams::default().steps
}
fn default_rate() -> f64 {
    OptimizerParams::default().rate
}

/// Flat TOML experiment description.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// `sg`, `gmd`, `gvd`, `blobs` or `csv`.
    #[serde(default = "default_dataset")]
    pub dataset: String,
    pub x_csv: Option<String>,
    pub y_csv: Option<String>,
    #[serde(default)]
    pub csv_header: bool,
    #[serde(default = "default_variant")]
    pub variant: String,
    /// Any of `nonprivate`, `tcmc`, `tcs`, `nte`, `tcmc_asym`, `tcs_asym`,
    /// `nte_asym`, `nonprivate_asym`.
    #[serde(default = "default_settings")]
    pub settings: Vec<String>,
    pub sweep: SweepAxis,
    pub values: Vec<f64>,
    /// Test-split size when sweeping ε.
    #[serde(default = "default_n")]
    pub n: usize,
    /// ε when sweeping n.
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    #[serde(default = "default_delta")]
    pub delta: f64,
    #[serde(default = "default_j")]
    pub j: usize,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default = "default_gamma")]
    pub gamma: f64,
    /// When set, `γ = c·n^{−1/4}` replaces the fixed `gamma`.
    pub gamma_schedule_c: Option<f64>,
    #[serde(default = "default_train_frac")]
    pub train_frac: f64,
    #[serde(default = "default_trials")]
    pub trials: usize,
    #[serde(default)]
    pub master_seed: u64,
    #[serde(default = "default_mc")]
    pub mc_samples: usize,
    #[serde(default = "default_locations")]
    pub locations: LocationChoice,
    #[serde(default = "default_steps")]
    pub optimizer_steps: usize,
    #[serde(default = "default_rate")]
    pub optimizer_rate: f64,
    pub blobs_grid_size: Option<usize>,
    pub blobs_spacing: Option<f64>,
    pub blobs_stretch: Option<f64>,
    pub blobs_base_std: Option<f64>,
}

/// A configured setting column: base pipeline plus null choice.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SettingSpec {
    pub setting: Setting,
    pub null: NullChoice,
}

impl SettingSpec {
    pub fn parse(s: &str) -> Result<Self> {
        let (base, null) = match s.strip_suffix("_asym") {
            Some(b) => (b, NullChoice::Asymptotic),
            None => (s, NullChoice::Corrected),
        };
        Ok(Self {
            setting: base.parse()?,
            null,
        })
    }

    pub fn name(&self) -> String {
        match self.null {
            NullChoice::Corrected => self.setting.name().to_string(),
            NullChoice::Asymptotic => format!("{}_asym", self.setting.name()),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| Error::Config(vec![e.to_string()]))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads, applies the seed override from the environment, and validates.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut cfg: ExperimentConfig = toml::from_str(&text).map_err(|e| Error::Config(vec![e.to_string()]))?;
        if let Ok(v) = std::env::var(SEED_ENV) {
            cfg.master_seed = v
                .trim()
                .parse()
                .map_err(|_| Error::Config(vec![format!("{SEED_ENV}=`{v}` is not an unsigned integer")]))?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reports every problem at once.
    pub fn validate(&self) -> Result<()> {
        let mut errs = Vec::new();
        let datasets = ["sg", "gmd", "gvd", "blobs", "csv"];
        if !datasets.contains(&self.dataset.as_str()) {
            errs.push(format!("dataset `{}` is not one of {}", self.dataset, datasets.join(", ")));
        }
        if self.dataset == "csv" && (self.x_csv.is_none() || self.y_csv.is_none()) {
            errs.push("dataset `csv` needs both x_csv and y_csv".into());
        }
        let variant = self.variant.parse::<Variant>();
        if let Err(e) = &variant {
            errs.push(e.to_string());
        }
        if self.settings.is_empty() {
            errs.push("settings must list at least one setting".into());
        }
        let mut seen = Vec::new();
        for s in &self.settings {
            match SettingSpec::parse(s) {
                Ok(spec) if seen.contains(&spec) => errs.push(format!("setting `{s}` is listed twice")),
                Ok(spec) => seen.push(spec),
                Err(e) => errs.push(e.to_string()),
            }
        }
        if self.values.is_empty() {
            errs.push("values must be nonempty".into());
        }
        for v in &self.values {
            if !(*v > 0.0 && v.is_finite()) {
                errs.push(format!("sweep value {v} must be positive"));
            }
            if self.sweep == SweepAxis::N && v.fract() != 0.0 {
                errs.push(format!("sample-size sweep value {v} must be an integer"));
            }
        }
        if self.trials == 0 {
            errs.push("trials must be at least 1".into());
        }
        if self.j == 0 {
            errs.push("j must be at least 1".into());
        }
        if matches!(variant, Ok(Variant::Scf)) && !self.j.is_multiple_of(2) {
            errs.push(format!("variant scf needs an even j, got {}", self.j));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            errs.push(format!("alpha {} must lie in (0, 1)", self.alpha));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            errs.push(format!("delta {} must lie in (0, 1)", self.delta));
        }
        if self.sweep == SweepAxis::N && !(self.epsilon > 0.0) {
            errs.push(format!("epsilon {} must be positive", self.epsilon));
        }
        if !(self.gamma > 0.0) {
            errs.push(format!("gamma {} must be positive", self.gamma));
        }
        if let Some(c) = self.gamma_schedule_c {
            if !(c > 0.0) {
                errs.push(format!("gamma_schedule_c {c} must be positive"));
            }
        }
        if !(self.train_frac > 0.0 && self.train_frac < 1.0) {
            errs.push(format!("train_frac {} must lie in (0, 1)", self.train_frac));
        }
        if self.mc_samples < crate::nulls::MIN_MC_SAMPLES {
            errs.push(format!("mc_samples must be at least {}", crate::nulls::MIN_MC_SAMPLES));
        }
        if !(self.optimizer_rate > 0.0) {
            errs.push("optimizer_rate must be positive".into());
        }
        if self.sweep == SweepAxis::Epsilon && self.n < 2 {
            errs.push("n must be at least 2".into());
        }
        if let Err(e) = self.blobs_params().validate() {
            errs.push(e.to_string());
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(errs))
        }
    }

    pub fn blobs_params(&self) -> BlobsParams {
        let d = BlobsParams::default();
        BlobsParams {
            grid_size: self.blobs_grid_size.unwrap_or(d.grid_size),
            spacing: self.blobs_spacing.unwrap_or(d.spacing),
            stretch: self.blobs_stretch.unwrap_or(d.stretch),
            base_std: self.blobs_base_std.unwrap_or(d.base_std),
        }
    }

    pub fn setting_specs(&self) -> Result<Vec<SettingSpec>> {
        self.settings.iter().map(|s| SettingSpec::parse(s)).collect()
    }

    /// `(ε, test size)` at a sweep point.
    fn point(&self, value: f64) -> (f64, usize) {
        match self.sweep {
            SweepAxis::Epsilon => (value, self.n),
            SweepAxis::N => (self.epsilon, value as usize),
        }
    }

    /// Total rows drawn so the test split has `n_test` rows.
    pub fn total_rows(&self, n_test: usize) -> usize {
        (n_test as f64 / (1.0 - self.train_frac)).round() as usize
    }

    fn test_config(&self, setting: Setting, epsilon: f64, seed: u64) -> Result<TestConfig> {
        let variant: Variant = self.variant.parse()?;
        let mut cfg = TestConfig::new(setting, variant, PrivacyBudget::new(epsilon, self.delta)?, seed);
        cfg.n_features = self.j;
        cfg.alpha = self.alpha;
        cfg.train_frac = self.train_frac;
        cfg.gamma = match self.gamma_schedule_c {
            Some(c) => crate::pipelines::GammaPolicy::Schedule { c },
            None => crate::pipelines::GammaPolicy::Fixed(self.gamma),
        };
        cfg.mc_samples = self.mc_samples;
        cfg.optimizer = OptimizerParams {
            steps: self.optimizer_steps,
            rate: self.optimizer_rate,
        };
        if self.locations == LocationChoice::Sample {
            cfg.locations = LocationPolicy::SampleMedian;
        }
        Ok(cfg)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResultRow {
    pub setting: String,
    pub variant: String,
    pub dataset: String,
    pub epsilon: f64,
    pub delta: f64,
    pub n: usize,
    pub trial_index: usize,
    pub statistic: f64,
    pub threshold: f64,
    pub p_value: f64,
    pub reject: bool,
    pub sigma_mean: f64,
    pub beta_cov: f64,
    pub sigma_stat: f64,
    pub seed: u64,
    pub sweep_index: usize,
    pub sweep_value: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AggregateRow {
    pub setting: String,
    pub sweep_value: f64,
    pub rejection_rate: f64,
    pub trials: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentResults {
    pub rows: Vec<ResultRow>,
    pub aggregate: Vec<AggregateRow>,
}

/// Seed shared by a base setting's corrected and asymptotic rows.
pub fn trial_seed(master: u64, setting: Setting, sweep_index: usize, trial: usize) -> u64 {
    derive_seed(master, &[label_hash(setting.name()), sweep_index as u64, trial as u64])
}

enum Source {
    Synthetic,
    Files(Dataset, Dataset),
}

fn subsample(x: &Dataset, n: usize, rng: &mut crate::rng::DpRng) -> Result<Dataset> {
    if n > x.n() {
        return Err(Error::TooFewSamples { min: n, got: x.n() });
    }
    let mut idx = sample(rng, x.n(), n).into_vec();
    idx.sort_unstable();
    x.select(&idx, x.label().to_string())
}

impl Source {
    fn draw(&self, cfg: &ExperimentConfig, n_total: usize, seed: u64) -> Result<(Dataset, Dataset)> {
        let mut rng = substream(seed, stream::DATA);
        match self {
            Source::Files(x, y) => match cfg.sweep {
                SweepAxis::Epsilon => Ok((x.clone(), y.clone())),
                SweepAxis::N => Ok((subsample(x, n_total, &mut rng)?, subsample(y, n_total, &mut rng)?)),
            },
            Source::Synthetic => match cfg.dataset.as_str() {
                "sg" => gen_sg(n_total, &mut rng),
                "gmd" => gen_gmd(n_total, &mut rng),
                "gvd" => gen_gvd(n_total, &mut rng),
                _ => gen_blobs(n_total, &cfg.blobs_params(), &mut rng),
            },
        }
    }
}

/// `(null, outcome, sweep index, trial index, trial seed)` for one scored null.
type Scored = (NullChoice, TestOutcome, usize, usize, u64);

/// Runs every (setting, sweep point, trial) on up to `jobs` threads.
pub fn run_experiment(cfg: &ExperimentConfig, jobs: usize) -> Result<ExperimentResults> {
    cfg.validate()?;
    let specs = cfg.setting_specs()?;
    let source = if cfg.dataset == "csv" {
        let (xp, yp) = (cfg.x_csv.as_deref().unwrap_or(""), cfg.y_csv.as_deref().unwrap_or(""));
        Source::Files(load_csv(xp, cfg.csv_header)?, load_csv(yp, cfg.csv_header)?)
    } else {
        Source::Synthetic
    };
    // One unit per (base setting, sweep point, trial), scoring every null requested for that base.
    let mut bases: Vec<(Setting, Vec<NullChoice>)> = Vec::new();
    for spec in &specs {
        match bases.iter_mut().find(|(s, _)| *s == spec.setting) {
            Some((_, nulls)) => nulls.push(spec.null),
            None => bases.push((spec.setting, vec![spec.null])),
        }
    }
    let mut units = Vec::new();
    for (b, _) in bases.iter().enumerate() {
        for s in 0..cfg.values.len() {
            for t in 0..cfg.trials {
                units.push((b, s, t));
            }
        }
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::Io(std::io::Error::other(e)))?;
    let outcomes: Vec<Vec<Scored>> = pool.install(|| {
        units
            .par_iter()
            .map(|&(b, s, t)| {
                let (setting, nulls) = &bases[b];
                let (eps, n_test) = cfg.point(cfg.values[s]);
                let seed = trial_seed(cfg.master_seed, *setting, s, t);
                let (x, y) = source.draw(cfg, cfg.total_rows(n_test), seed)?;
                let tc = cfg.test_config(*setting, eps, seed)?;
                let (mut ra, mut rb) = party_rngs(&tc);
                let outs = run_with_nulls(&x, &y, &tc, nulls, &mut ra, &mut rb).map_err(|e| {
                    Error::Config(vec![format!(
                        "{} at sweep value {} trial {t}: {e}",
                        setting.name(),
                        cfg.values[s]
                    )])
                })?;
                Ok(nulls.iter().copied().zip(outs).map(|(nl, o)| (nl, o, s, t, seed)).collect())
            })
            .collect::<Result<Vec<_>>>()
    })?;
    let mut rows = Vec::new();
    for (order, spec) in specs.iter().enumerate() {
        for unit in &outcomes {
            for (null, o, s, t, seed) in unit {
                if o.setting != spec.setting || *null != spec.null {
                    continue;
                }
                let (eps, _) = cfg.point(cfg.values[*s]);
                let noise_y = o.noise_y.unwrap_or_default();
                rows.push((
                    order,
                    ResultRow {
                        setting: spec.name(),
                        variant: cfg.variant.to_ascii_lowercase(),
                        dataset: cfg.dataset.clone(),
                        epsilon: eps,
                        delta: cfg.delta,
                        n: o.n_test,
                        trial_index: *t,
                        statistic: o.statistic,
                        threshold: o.threshold,
                        p_value: o.p_value,
                        reject: o.reject,
                        sigma_mean: o.noise.sigma_mean.max(noise_y.sigma_mean),
                        beta_cov: o.noise.beta_cov.max(noise_y.beta_cov),
                        sigma_stat: o.noise.sigma_stat,
                        seed: *seed,
                        sweep_index: *s,
                        sweep_value: cfg.values[*s],
                    },
                ));
            }
        }
    }
    rows.sort_by_key(|(order, r)| (*order, r.sweep_index, r.trial_index));
    let rows: Vec<ResultRow> = rows.into_iter().map(|(_, r)| r).collect();
    let aggregate = aggregate(&rows);
    Ok(ExperimentResults { rows, aggregate })
}

/// Rejection rate per (setting, sweep point), in row order.
pub fn aggregate(rows: &[ResultRow]) -> Vec<AggregateRow> {
    let mut out: Vec<AggregateRow> = Vec::new();
    let mut counts: Vec<usize> = Vec::new();
    for r in rows {
        match out
            .iter()
            .position(|a| a.setting == r.setting && a.sweep_value.to_bits() == r.sweep_value.to_bits())
        {
            Some(i) => {
                out[i].trials += 1;
                counts[i] += usize::from(r.reject);
            }
            None => {
                out.push(AggregateRow {
                    setting: r.setting.clone(),
                    sweep_value: r.sweep_value,
                    rejection_rate: 0.0,
                    trials: 1,
                });
                counts.push(usize::from(r.reject));
            }
        }
    }
    for (a, c) in out.iter_mut().zip(counts) {
        a.rejection_rate = c as f64 / a.trials as f64;
    }
    out
}

fn num(v: f64) -> String {
    format!("{v}")
}

pub fn results_csv(rows: &[ResultRow]) -> String {
    let mut s = RESULT_COLUMNS.join(",");
    s.push('\n');
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            r.setting,
            r.variant,
            r.dataset,
            num(r.epsilon),
            num(r.delta),
            r.n,
            r.trial_index,
            num(r.statistic),
            num(r.threshold),
            num(r.p_value),
            u8::from(r.reject),
            num(r.sigma_mean),
            num(r.beta_cov),
            num(r.sigma_stat),
            r.seed
        );
    }
    s
}

pub fn aggregate_csv(rows: &[AggregateRow]) -> String {
    let mut s = AGGREGATE_COLUMNS.join(",");
    s.push('\n');
    for a in rows {
        let _ = writeln!(s, "{},{},{},{}", a.setting, num(a.sweep_value), num(a.rejection_rate), a.trials);
    }
    s
}

/// Writes `results.csv` and `aggregate.csv` into `dir`.
pub fn write_results(results: &ExperimentResults, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join("results.csv"), results_csv(&results.rows))?;
    std::fs::write(dir.join("aggregate.csv"), aggregate_csv(&results.aggregate))?;
    Ok(())
}
