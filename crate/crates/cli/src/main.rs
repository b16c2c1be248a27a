use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use dpk2st::experiment::{run_experiment, write_results, ExperimentConfig};
use dpk2st::pipelines::{run_test, GammaPolicy, LocationPolicy, Setting, TestConfig, TestOutcome};
use dpk2st::privacy::{compose_total, per_release_epsilon, sens_mean, sens_second_moment, sens_statistic};
use dpk2st::synthgen::load_csv;
use dpk2st::{PrivacyBudget, Variant};

#[derive(Parser)]
#[command(name = "dpk2st", version, about = "Differentially private kernel two-sample tests")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one test on two CSV samples. Exit code 0: no rejection, 1: rejection.
    Test(TestArgs),
    /// Run a TOML-described sweep and write results.csv and aggregate.csv.
    Experiment(ExperimentArgs),
    /// Print the mean, second-moment and statistic sensitivities.
    Sensitivity(SensitivityArgs),
    /// Compose a per-release budget over L releases, or invert with --invert.
    Compose(ComposeArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum SettingArg {
    Nonprivate,
    Tcmc,
    Tcs,
    Nte,
}

#[derive(Clone, Copy, ValueEnum)]
enum VariantArg {
    Me,
    Scf,
}

#[derive(Clone, Copy, ValueEnum)]
enum LocationArg {
    Optimize,
    Sample,
}

#[derive(Args)]
struct TestArgs {
    #[arg(long)]
    x: PathBuf,
    #[arg(long)]
    y: PathBuf,
    /// Skip the first line of each CSV.
    #[arg(long)]
    header: bool,
    #[arg(long, value_enum, default_value = "tcmc")]
    setting: SettingArg,
    #[arg(long, value_enum, default_value = "me")]
    variant: VariantArg,
    #[arg(long, default_value_t = 2.5)]
    eps: f64,
    #[arg(long, default_value_t = 1e-5)]
    delta: f64,
    #[arg(long, default_value_t = 5)]
    n_locations: usize,
    #[arg(long, default_value_t = 0.01)]
    alpha: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1e-3)]
    gamma: f64,
    /// Defaults to optimize, or sample for nte.
    #[arg(long, value_enum)]
    locations: Option<LocationArg>,
    #[arg(long, default_value_t = 100_000)]
    mc_samples: usize,
}

#[derive(Args)]
struct ExperimentArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long, default_value = "results")]
    out: PathBuf,
    #[arg(long, default_value_t = 1)]
    jobs: usize,
}

#[derive(Args)]
struct SensitivityArgs {
    #[arg(long, default_value_t = 2.0)]
    kappa: f64,
    #[arg(long)]
    j: usize,
    #[arg(long)]
    n: usize,
    #[arg(long)]
    gamma: f64,
}

#[derive(Args)]
struct ComposeArgs {
    /// Per-release ε, or the total ε with --invert.
    #[arg(long)]
    eps: f64,
    /// Per-release δ (ignored with --invert).
    #[arg(long, default_value_t = 0.0)]
    delta: f64,
    #[arg(long = "releases", short = 'l', value_parser = clap::value_parser!(u64).range(1..))]
    releases: u64,
    #[arg(long)]
    delta_prime: f64,
    #[arg(long)]
    invert: bool,
}

/// Six significant digits; scientific outside `[1e-2, 1e6)`.
fn sig6(v: f64) -> String {
    if v == 0.0 || !v.is_finite() {
        return format!("{v}");
    }
    let exp = v.abs().log10().floor() as i32;
    if !(-2..6).contains(&exp) {
        format!("{v:.5e}")
    } else {
        format!("{v:.*}", (5 - exp) as usize)
    }
}

fn print_outcome(o: &TestOutcome, cfg: &TestConfig) {
    println!("setting: {}", o.setting.name());
    println!("variant: {}", cfg.variant.name());
    println!("statistic: {}", o.statistic);
    println!("threshold: {}", o.threshold);
    println!("p_value: {}", o.p_value);
    println!("decision: {}", if o.reject { "reject" } else { "accept" });
    println!("null: {}", o.null_kind.name());
    match o.budget_spent {
        Some(b) => println!("budget: epsilon={} delta={}", b.epsilon(), b.delta()),
        None => println!("budget: none"),
    }
    println!(
        "noise: sigma_mean={} beta_cov={} sigma_stat={}",
        o.noise.sigma_mean, o.noise.beta_cov, o.noise.sigma_stat
    );
    if let Some(ny) = o.noise_y {
        println!("noise_y: sigma_mean={} beta_cov={}", ny.sigma_mean, ny.beta_cov);
    }
    println!("bandwidth: {}", o.locations.bandwidth());
    println!("n_test: {}", o.n_test);
    println!("seed: {}", o.seed);
}

fn cmd_test(a: &TestArgs) -> dpk2st::Result<bool> {
    let x = load_csv(&a.x, a.header)?;
    let y = load_csv(&a.y, a.header)?;
    let setting = match a.setting {
        SettingArg::Nonprivate => Setting::NonPrivate,
        SettingArg::Tcmc => Setting::Tcmc,
        SettingArg::Tcs => Setting::Tcs,
        SettingArg::Nte => Setting::Nte,
    };
    let variant = match a.variant {
        VariantArg::Me => Variant::Me,
        VariantArg::Scf => Variant::Scf,
    };
    let mut cfg = TestConfig::new(setting, variant, PrivacyBudget::new(a.eps, a.delta)?, a.seed);
    cfg.n_features = a.n_locations;
    cfg.alpha = a.alpha;
    cfg.gamma = GammaPolicy::Fixed(a.gamma);
    cfg.mc_samples = a.mc_samples;
    match a.locations {
        Some(LocationArg::Optimize) => cfg.locations = LocationPolicy::Optimize,
        Some(LocationArg::Sample) => cfg.locations = LocationPolicy::SampleMedian,
        None => {}
    }
    let out = run_test(&x, &y, &cfg)?;
    print_outcome(&out, &cfg);
    Ok(out.reject)
}

fn cmd_experiment(a: &ExperimentArgs) -> dpk2st::Result<()> {
    let cfg = ExperimentConfig::load(&a.config)?;
    let res = run_experiment(&cfg, a.jobs)?;
    write_results(&res, &a.out)?;
    println!("wrote {} rows to {}", res.rows.len(), a.out.join("results.csv").display());
    for g in &res.aggregate {
        println!("{} {} {}", g.setting, g.sweep_value, g.rejection_rate);
    }
    Ok(())
}

fn cmd_sensitivity(a: &SensitivityArgs) -> dpk2st::Result<()> {
    let m = sens_mean(a.kappa, a.j, a.n)?;
    let s2 = sens_second_moment(a.kappa, a.j, a.n)?;
    let st = sens_statistic(a.kappa, a.j, a.n, a.gamma)?;
    println!("sens_mean: {}", sig6(m));
    println!("sens_second_moment: {}", sig6(s2));
    println!("sens_statistic: {}", sig6(st));
    Ok(())
}

fn cmd_compose(a: &ComposeArgs) -> dpk2st::Result<()> {
    let l = a.releases as usize;
    if a.invert {
        println!("epsilon_per_release: {}", sig6(per_release_epsilon(a.eps, l, a.delta_prime)?));
    } else {
        let (e, d) = compose_total(a.eps, a.delta, l, a.delta_prime)?;
        println!("epsilon_total: {}", sig6(e));
        println!("delta_total: {}", sig6(d));
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Test(a) => cmd_test(a).map(|reject| if reject { 1 } else { 0 }),
        Command::Experiment(a) => cmd_experiment(a).map(|_| 0),
        Command::Sensitivity(a) => cmd_sensitivity(a).map(|_| 0),
        Command::Compose(a) => cmd_compose(a).map(|_| 0),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
