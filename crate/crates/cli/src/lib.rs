//! Command-line front end: fit nuisances, estimate over sensitivity grids,
//! induced means, goodness of fit, simulation and data summaries.

pub mod config;
pub mod contour;

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::Context;
use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;
use tiltsens_core::diagnostics::{gof_compare, gof_report, ParametricBaseline};
use tiltsens_core::estimator::{induced_mean, Classification};
use tiltsens_core::sim::{run_simulation, synthetic_birthweight};
use tiltsens_core::{
    make_folds, sensitivity_grid, Arm, CrossFit, CrossFitOptions, Dataset, Error, Nuisance, NuisanceBundle, TiltSpec,
};

use config::{RunConfig, TruthSource};

/// Version of the saved nuisance artifact layout.
pub const ARTIFACT_VERSION: u32 = 1;
pub const ARTIFACT_FORMAT: &str = "tiltsens-nuisance";

#[derive(Debug, Parser)]
#[command(name = "tiltsens", version, about = "Sensitivity analysis for unmeasured confounding under exponential tilting")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// JSON run configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,
    /// Worker threads (defaults to all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[arg(long, global = true, value_enum, default_value = "warn")]
    pub log_level: LogLevel,
}

#[derive(Debug, Clone, Copy, Subcommand)]
pub enum Command {
    /// Fit the propensity and outcome models on the full data.
    Fit,
    /// Cross-fit estimates over the configured gamma grids.
    Estimate,
    /// Induced means E[Y(t) | T = 1-t] along each gamma grid.
    Induced,
    /// Kolmogorov–Smirnov goodness of fit on configured subgroups.
    Gof,
    /// Replicated simulation under a fitted truth.
    Simulate,
    /// Descriptive table by arm and the naive mean difference.
    Summary,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum LogLevel {
    Error,
    Warn,
    Info,
    Debug,
    Trace,
}

impl LogLevel {
    pub fn filter(self) -> log::LevelFilter {
        match self {
            LogLevel::Error => log::LevelFilter::Error,
            LogLevel::Warn => log::LevelFilter::Warn,
            LogLevel::Info => log::LevelFilter::Info,
            LogLevel::Debug => log::LevelFilter::Debug,
            LogLevel::Trace => log::LevelFilter::Trace,
        }
    }
}

/// How a command that produced output ended.
#[derive(Debug, PartialEq)]
pub enum Outcome {
    Complete,
    /// Some grid cells or sweep points failed.
    Partial(String),
    /// Output written but unusable, e.g. too many failed replications.
    Invalid(String),
}

pub const EXIT_OK: u8 = 0;
pub const EXIT_INPUT: u8 = 2;
pub const EXIT_NUMERICAL: u8 = 3;
pub const EXIT_PARTIAL: u8 = 4;

/// Exit code for a failed run: input and configuration problems map to 2,
/// everything else to 3.
pub fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<Error>() {
            return if e.is_input_error() { EXIT_INPUT } else { EXIT_NUMERICAL };
        }
        if cause.downcast_ref::<serde_json::Error>().is_some() || cause.downcast_ref::<std::io::Error>().is_some() {
            return EXIT_INPUT;
        }
    }
    EXIT_NUMERICAL
}

pub fn run(cli: &Cli) -> anyhow::Result<Outcome> {
    let path = cli.config.as_ref().ok_or_else(|| Error::Config("--config is required".into()))?;
    let cfg = RunConfig::load(path)?;
    fs::create_dir_all(&cli.out).with_context(|| format!("creating {}", cli.out.display()))?;
    match cli.command {
        Command::Fit => cmd_fit(&cfg, &cli.out),
        Command::Estimate => cmd_estimate(&cfg, &cli.out),
        Command::Induced => cmd_induced(&cfg, &cli.out),
        Command::Gof => cmd_gof(&cfg, &cli.out),
        Command::Simulate => cmd_simulate(&cfg, &cli.out),
        Command::Summary => cmd_summary(&cfg, &cli.out),
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> anyhow::Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn create(path: &Path) -> anyhow::Result<fs::File> {
    fs::File::create(path).with_context(|| format!("creating {}", path.display()))
}

fn options(cfg: &RunConfig) -> CrossFitOptions {
    CrossFitOptions { nuisance: cfg.nuisance.clone(), ci: cfg.ci.clone() }
}

fn base_specs(cfg: &RunConfig) -> (TiltSpec, TiltSpec) {
    (
        TiltSpec { arm: Arm::Treated, gamma: 0.0, s: cfg.tilt.s1.clone() },
        TiltSpec { arm: Arm::Control, gamma: 0.0, s: cfg.tilt.s0.clone() },
    )
}

#[derive(Serialize, serde::Deserialize)]
pub struct Artifact {
    pub format: String,
    pub version: u32,
    pub covariates: Vec<String>,
    pub bundle: NuisanceBundle,
}

impl Artifact {
    pub fn load(path: &Path) -> anyhow::Result<Artifact> {
        let a: Artifact = serde_json::from_str(&fs::read_to_string(path)?)
            .with_context(|| format!("reading artifact {}", path.display()))?;
        if a.format != ARTIFACT_FORMAT || a.version != ARTIFACT_VERSION {
            return Err(Error::Config(format!("unsupported artifact {} v{}", a.format, a.version)).into());
        }
        Ok(a)
    }
}

#[derive(Serialize)]
struct ArmTelemetry {
    arm: Arm,
    n: usize,
    beta: Vec<f64>,
    h_stage1: f64,
    h_stage2: f64,
    cv_value: f64,
    evals: usize,
}

#[derive(Serialize)]
struct FitTelemetry {
    n: usize,
    covariates: Vec<String>,
    propensity_lambdas: Vec<f64>,
    propensity_iterations: usize,
    propensity_cv_deviance: Option<f64>,
    clip_rate: f64,
    outcome: Vec<ArmTelemetry>,
}

fn cmd_fit(cfg: &RunConfig, out: &Path) -> anyhow::Result<Outcome> {
    let ds = cfg.dataset()?;
    let nb = match NuisanceBundle::fit(&ds, &cfg.nuisance) {
        Ok(nb) => nb,
        Err(e) => {
            if let Error::NonConvergence { msg, trace, best } = &e {
                let diag = serde_json::json!({ "error": msg, "trace": trace, "best": best });
                write_json(&out.join("fit_diagnostic.json"), &diag)?;
            }
            return Err(e.into());
        }
    };
    let mut clipped = 0;
    for r in ds.rows() {
        clipped += usize::from(nb.pi1_clipped(&r.x)?.1);
    }
    let telemetry = FitTelemetry {
        n: ds.n(),
        covariates: ds.covariate_names(),
        propensity_lambdas: nb.propensity.lambdas.clone(),
        propensity_iterations: nb.propensity.iterations,
        propensity_cv_deviance: nb.propensity.cv_deviance,
        clip_rate: clipped as f64 / ds.n() as f64,
        outcome: nb
            .outcome
            .iter()
            .map(|o| ArmTelemetry {
                arm: o.arm,
                n: o.n(),
                beta: o.beta.clone(),
                h_stage1: o.h_stage1,
                h_stage2: o.h_stage2,
                cv_value: o.cv_value,
                evals: o.evals,
            })
            .collect(),
    };
    for a in &telemetry.outcome {
        println!("arm {}: beta = {:?}, h1 = {:.6}, h2 = {:.6}", a.arm, a.beta, a.h_stage1, a.h_stage2);
    }
    println!("propensity clip rate: {:.4}", telemetry.clip_rate);
    let artifact =
        Artifact { format: ARTIFACT_FORMAT.into(), version: ARTIFACT_VERSION, covariates: ds.covariate_names(), bundle: nb };
    write_json(&out.join("nuisance.json"), &artifact)?;
    write_json(&out.join("fit_telemetry.json"), &telemetry)?;
    Ok(Outcome::Complete)
}

fn cmd_estimate(cfg: &RunConfig, out: &Path) -> anyhow::Result<Outcome> {
    let ds = cfg.dataset()?;
    let plan = make_folds(&ds, cfg.k, cfg.seed)?;
    let (b1, b0) = base_specs(cfg);
    let (g1, g0) = (&cfg.tilt.gamma1, &cfg.tilt.gamma0);
    let report = sensitivity_grid(&ds, &plan, g1, g0, &b1, &b0, &options(cfg))?;
    report.write_csv(create(&out.join("grid.csv"))?)?;
    write_json(&out.join("grid.json"), &report)?;
    if g1.len() >= 2 && g0.len() >= 2 {
        let mut z = vec![vec![f64::NAN; g0.len()]; g1.len()];
        let mut class = vec![vec![None; g0.len()]; g1.len()];
        for (idx, c) in report.cells.iter().enumerate() {
            if let Ok(e) = &c.estimate {
                z[idx / g0.len()][idx % g0.len()] = e.ace;
                class[idx / g0.len()][idx % g0.len()] = Some(e.classification);
            }
        }
        let svg = contour::contour_svg(g1, g0, &z, &class, ("gamma1", "gamma0", "Estimated average causal effect"));
        fs::write(out.join("contour.svg"), svg)?;
    }
    if let Some(Ok(e)) = report.cells.first().map(|c| &c.estimate) {
        let ci = e.ci.iter().find(|r| r.quantity == tiltsens_core::Quantity::Ace && r.method == cfg.ci.method);
        println!(
            "gamma = ({}, {}): ACE = {:.4} (se {:.4}){}",
            report.cells[0].gamma1,
            report.cells[0].gamma0,
            e.ace,
            e.se[2],
            ci.map(|r| format!(", CI ({:.4}, {:.4})", r.lo, r.hi)).unwrap_or_default()
        );
    }
    let counts = [Classification::Worse, Classification::Better, Classification::Indeterminate]
        .map(|k| report.cells.iter().filter(|c| matches!(&c.estimate, Ok(e) if e.classification == k)).count());
    println!("cells: {} worse, {} better, {} indeterminate, {} failed", counts[0], counts[1], counts[2], report.failed());
    if report.failed() > 0 {
        return Ok(Outcome::Partial(format!("{} of {} grid cells failed", report.failed(), report.cells.len())));
    }
    Ok(Outcome::Complete)
}

fn cmd_induced(cfg: &RunConfig, out: &Path) -> anyhow::Result<Outcome> {
    let ds = cfg.dataset()?;
    let plan = make_folds(&ds, cfg.k, cfg.seed)?;
    let cf = CrossFit::fit(&ds, &plan, &cfg.nuisance)?;
    let (b1, b0) = base_specs(cfg);
    let mut w = csv::Writer::from_writer(create(&out.join("induced.csv"))?);
    w.write_record(["arm", "gamma", "psi", "se", "induced_mean", "observed_arm_mean"])?;
    let mut failed = 0;
    for (base, grid) in [(&b1, &cfg.tilt.gamma1), (&b0, &cfg.tilt.gamma0)] {
        let t = base.arm;
        let specs: Vec<TiltSpec> = grid.iter().map(|&g| base.with_gamma(g)).collect();
        for (spec, r) in specs.iter().zip(cf.arm_many(&ds, &specs)?) {
            let (psi, se, induced) = match r {
                Ok(r) => (r.psi, r.se, induced_mean(r.psi, &ds, t)?),
                Err(e) => {
                    log::warn!("induced mean at gamma = {} failed: {e}", spec.gamma);
                    failed += 1;
                    (f64::NAN, f64::NAN, f64::NAN)
                }
            };
            w.write_record([
                t.to_string(),
                spec.gamma.to_string(),
                psi.to_string(),
                se.to_string(),
                induced.to_string(),
                ds.arm_mean(t).to_string(),
            ])?;
        }
    }
    w.flush()?;
    if failed > 0 {
        return Ok(Outcome::Partial(format!("{failed} sweep points failed")));
    }
    Ok(Outcome::Complete)
}

fn cmd_gof(cfg: &RunConfig, out: &Path) -> anyhow::Result<Outcome> {
    let gof = cfg.gof.as_ref().ok_or_else(|| Error::Config("gof section missing".into()))?;
    let ds = cfg.dataset()?;
    let nb = NuisanceBundle::fit(&ds, &cfg.nuisance)?;
    let report = gof_report(&ds, &nb, &gof.subgroups, gof.n_synth, cfg.seed)?;
    report.write_csv(create(&out.join("gof.csv"))?)?;
    if let Some(m) = report.median_ks() {
        println!("median outcome KS: {m:.4} ({})", report.note);
    }
    if gof.parametric {
        let base = ParametricBaseline::fit(&ds)?;
        let synth = base.generate(&ds, &ds.covariate_rows(), gof.n_synth, cfg.seed)?;
        gof_compare(&ds, &synth, &gof.subgroups)?.write_csv(create(&out.join("gof_parametric.csv"))?)?;
    }
    Ok(Outcome::Complete)
}

fn cmd_simulate(cfg: &RunConfig, out: &Path) -> anyhow::Result<Outcome> {
    let sim = cfg.simulate.as_ref().ok_or_else(|| Error::Config("simulate section missing".into()))?;
    let (truth, template): (NuisanceBundle, Dataset) = match &sim.truth {
        TruthSource::Artifact { path } => {
            let ds = cfg.dataset()?;
            let a = Artifact::load(path)?;
            if a.covariates != ds.covariate_names() {
                return Err(Error::Config("artifact covariates differ from the data's".into()).into());
            }
            (a.bundle, ds)
        }
        TruthSource::Data => {
            let ds = cfg.dataset()?;
            (NuisanceBundle::fit(&ds, &cfg.nuisance)?, ds)
        }
        TruthSource::Synthetic { n } => {
            let ds = synthetic_birthweight(*n, cfg.seed)?;
            (NuisanceBundle::fit(&ds, &cfg.nuisance)?, ds)
        }
    };
    let mut settings = sim.settings.clone();
    settings.seed = cfg.seed;
    let result = run_simulation(&truth, &template, &template.covariate_rows(), &settings)?;
    result.write_csv(Arm::Treated, create(&out.join("simulation_arm1.csv"))?)?;
    result.write_csv(Arm::Control, create(&out.join("simulation_arm0.csv"))?)?;
    write_json(&out.join("simulation.json"), &result)?;
    for (n, f) in &result.failures {
        println!("n = {n}: {f} failed replications");
    }
    if result.invalid {
        return Ok(Outcome::Invalid("more than 5% of replications failed".into()));
    }
    Ok(Outcome::Complete)
}

#[derive(Serialize)]
struct Naive {
    difference: f64,
    se: f64,
    ci_lo: f64,
    ci_hi: f64,
}

/// Treated minus control mean with an unpooled standard error.
fn naive_difference(ds: &Dataset, level: f64) -> anyhow::Result<Naive> {
    let ys = |t: Arm| -> Vec<f64> { ds.rows().iter().filter(|r| r.t == t).map(|r| r.y).collect() };
    let (y1, y0) = (ys(Arm::Treated), ys(Arm::Control));
    if y1.len() < 2 || y0.len() < 2 {
        return Err(Error::Domain("each arm needs two observations".into()).into());
    }
    use tiltsens_core::stats::{mean, sample_variance};
    let difference = mean(&y1) - mean(&y0);
    let se = (sample_variance(&y1) / y1.len() as f64 + sample_variance(&y0) / y0.len() as f64).sqrt();
    let iv = tiltsens_core::bootstrap::normal_ci(difference, se, level);
    Ok(Naive { difference, se, ci_lo: iv.lo, ci_hi: iv.hi })
}

fn cmd_summary(cfg: &RunConfig, out: &Path) -> anyhow::Result<Outcome> {
    let ds = cfg.dataset()?;
    ds.summary().write_csv(create(&out.join("summary.csv"))?)?;
    let naive = naive_difference(&ds, cfg.ci.level)?;
    let mut w = csv::Writer::from_writer(create(&out.join("naive.csv"))?);
    w.write_record(["difference", "se", "ci_lo", "ci_hi"])?;
    w.write_record([naive.difference, naive.se, naive.ci_lo, naive.ci_hi].map(|v| v.to_string()))?;
    w.flush()?;
    println!(
        "n = {} ({} treated); naive difference {:.4} (CI {:.4} to {:.4})",
        ds.n(),
        ds.arm_count(Arm::Treated),
        naive.difference,
        naive.ci_lo,
        naive.ci_hi
    );
    Ok(Outcome::Complete)
}
