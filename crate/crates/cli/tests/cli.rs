use std::path::PathBuf;
use std::process::{Command, Output};

use dpk2st::rng::rng_from_seed;
use dpk2st::synthgen::{gen_gmd, gen_sg, write_csv};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_dpk2st"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn scratch(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("dpk2st-cli-{}-{name}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

fn field<'a>(text: &'a str, key: &str) -> &'a str {
    text.lines()
        .find_map(|l| l.strip_prefix(key).and_then(|r| r.strip_prefix(": ")))
        .unwrap_or_else(|| panic!("no {key} in {text}"))
}

#[test]
fn sensitivity_prints_six_digits() {
    let o = run(&["sensitivity", "--kappa", "2", "--j", "5", "--n", "10000", "--gamma", "0.001"]);
    assert!(o.status.success());
    let text = stdout(&o);
    assert_eq!(field(&text, "sens_mean"), "4.47214e-4");
    assert_eq!(field(&text, "sens_second_moment"), "2.00020e-3");
    assert_eq!(field(&text, "sens_statistic"), "17.9243");
}

#[test]
fn sensitivity_without_n_is_a_usage_error() {
    let o = run(&["sensitivity", "--j", "5", "--gamma", "0.001"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("--n"));
}

#[test]
fn sensitivity_rejects_zero_gamma() {
    let o = run(&["sensitivity", "--j", "5", "--n", "100", "--gamma", "0"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).starts_with("error:"));
}

#[test]
fn compose_and_invert() {
    let o = run(&["compose", "--eps", "0.1", "--delta", "1e-6", "-l", "100", "--delta-prime", "1e-6"]);
    assert!(o.status.success());
    let text = stdout(&o);
    let eps: f64 = field(&text, "epsilon_total").parse().unwrap();
    assert!((eps - 6.308).abs() < 1e-3);
    assert_eq!(field(&text, "delta_total"), "1.01000e-4");

    let o = run(&["compose", "--eps", &eps.to_string(), "-l", "100", "--delta-prime", "1e-6", "--invert"]);
    assert!(o.status.success());
    let back: f64 = field(&stdout(&o), "epsilon_per_release").parse().unwrap();
    assert!((back - 0.1).abs() < 1e-6);
}

#[test]
fn compose_with_zero_releases_is_a_usage_error() {
    let o = run(&["compose", "--eps", "0.1", "-l", "0", "--delta-prime", "1e-6"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn identical_files_are_not_rejected() {
    let dir = scratch("same");
    let (x, _) = gen_sg(400, &mut rng_from_seed(1)).unwrap();
    let p = dir.join("x.csv");
    write_csv(&x, &p).unwrap();
    let p = p.to_str().unwrap();
    let o = run(&["test", "--x", p, "--y", p, "--setting", "nonprivate", "--seed", "3"]);
    assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
    assert_eq!(field(&stdout(&o), "decision"), "accept");
}

#[test]
fn shifted_mean_is_rejected() {
    let dir = scratch("gmd");
    let (x, y) = gen_gmd(2500, &mut rng_from_seed(2)).unwrap();
    let (px, py) = (dir.join("x.csv"), dir.join("y.csv"));
    write_csv(&x, &px).unwrap();
    write_csv(&y, &py).unwrap();
    let o = run(&[
        "test",
        "--x",
        px.to_str().unwrap(),
        "--y",
        py.to_str().unwrap(),
        "--setting",
        "tcs",
        "--eps",
        "2.5",
        "--seed",
        "5",
    ]);
    assert_eq!(o.status.code(), Some(1), "{}", stdout(&o));
    assert_eq!(field(&stdout(&o), "decision"), "reject");
}

#[test]
fn missing_file_exits_with_two() {
    let o = run(&["test", "--x", "/nonexistent/x.csv", "--y", "/nonexistent/y.csv"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(!o.stderr.is_empty());
}

const SMALL: &str = r#"
dataset = "sg"
settings = ["tcmc", "tcmc_asym"]
sweep = "epsilon"
values = [1.0, 2.5]
n = 200
trials = 3
mc_samples = 10000
locations = "sample"
master_seed = 11
"#;

#[test]
fn experiment_is_deterministic_and_honours_seed_override() {
    let dir = scratch("exp");
    let cfg = dir.join("run.toml");
    std::fs::write(&cfg, SMALL).unwrap();
    let go = |out: &str, seed: Option<&str>| {
        let mut c = bin();
        c.args(["experiment", "--config", cfg.to_str().unwrap(), "--out", dir.join(out).to_str().unwrap()]);
        c.env_remove("DPK2ST_SEED");
        if let Some(s) = seed {
            c.env("DPK2ST_SEED", s);
        }
        let o = c.output().unwrap();
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        std::fs::read_to_string(dir.join(out).join("results.csv")).unwrap()
    };
    let a = go("a", None);
    let b = go("b", None);
    let c = go("c", Some("12"));
    assert_eq!(a, b);
    assert_ne!(a, c);
    assert_eq!(a.lines().count(), 1 + 2 * 2 * 3);
    assert!(a.starts_with("setting,variant,dataset,epsilon,delta,n,trial_index,statistic,threshold,p_value,reject,"));
    let agg = std::fs::read_to_string(dir.join("a").join("aggregate.csv")).unwrap();
    assert_eq!(agg.lines().count(), 1 + 2 * 2);
}

#[test]
fn invalid_config_lists_errors_before_running() {
    let dir = scratch("bad");
    let cfg = dir.join("bad.toml");
    std::fs::write(&cfg, "dataset = \"sg\"\nsettings = [\"tcmc\"]\nvalues = []\ntrials = 0\n").unwrap();
    let o = run(&["experiment", "--config", cfg.to_str().unwrap(), "--out", dir.join("o").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(!dir.join("o").join("results.csv").exists());
}

#[test]
fn shipped_configs_validate() {
    let dir = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    for entry in std::fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        let cfg = dpk2st::experiment::ExperimentConfig::load(&path).unwrap();
        cfg.validate().unwrap_or_else(|e| panic!("{}: {e}", path.display()));
    }
}
