//! Simulation harness: treat a fitted bundle as the truth, compute the true
//! arm means exactly and measure bias and interval coverage of the
//! cross-fit estimator over replicated samples.

use std::io::Write;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bootstrap::{bootstrap_replicates, double_bootstrap, normal_ci, percentile_ci, CiMethod, CiSpec, Estimate, Interval};
use crate::dataset::{make_folds, Arm, Dataset, Observation};
use crate::diagnostics::generate_semiparametric;
use crate::error::{Error, Result};
use crate::estimator::{psi_plugin, CrossFit};
use crate::nuisance::{Nuisance, NuisanceBundle, NuisanceConfig};
use crate::rng::{derive_seed, rng_from};
use crate::stats::logistic;
use crate::tilting::{TiltFunction, TiltSpec};

/// Share of failed replications above which a run is invalid.
pub const MAX_FAILURE_RATE: f64 = 0.05;

/// `psi_t(gamma)` under the truth, integrating `X` over `xs` exactly.
pub fn true_psi(truth: &dyn Nuisance, xs: &[Vec<f64>], spec: &TiltSpec) -> Result<f64> {
    psi_plugin(truth, spec, xs)
}

/// Birth-weight-like synthetic data: maternal age, education and marital
/// status confound a binary exposure that lowers the outcome by 250.
pub fn synthetic_birthweight(n: usize, seed: u64) -> Result<Dataset> {
    let mut rng = rng_from(seed, &[0x4257]);
    let age_d = Normal::<f64>::new(27.0, 6.0).expect("valid normal");
    let noise = Normal::<f64>::new(0.0, 500.0).expect("valid normal");
    let rows = (0..n)
        .map(|_| {
            let age: f64 = age_d.sample(&mut rng).clamp(14.0, 45.0);
            let educ = f64::from(u8::from(rng.random::<f64>() < 0.5));
            let married = f64::from(u8::from(rng.random::<f64>() < 0.6));
            let eta = -1.5 - 0.04 * (age - 27.0) - 0.6 * educ - 0.8 * married;
            let t = if rng.random::<f64>() < logistic(eta) { Arm::Treated } else { Arm::Control };
            let y = 3400.0 - 250.0 * f64::from(u8::from(t)) + 12.0 * (age - 27.0) + 80.0 * educ + 100.0 * married
                + noise.sample(&mut rng);
            Observation { x: vec![age, educ, married], t, y }
        })
        .collect();
    Dataset::new(vec!["age".into(), "educ".into(), "married".into()], rows)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationConfig {
    #[serde(default = "default_gamma1")]
    pub gamma1: Vec<f64>,
    #[serde(default = "default_gamma0")]
    pub gamma0: Vec<f64>,
    #[serde(default = "default_s")]
    pub s1: TiltFunction,
    #[serde(default = "default_s")]
    pub s0: TiltFunction,
    #[serde(default = "default_sizes")]
    pub sample_sizes: Vec<usize>,
    #[serde(default = "default_r")]
    pub replications: usize,
    #[serde(default = "default_k")]
    pub k: usize,
    /// Interval method and budgets; normal intervals are always computed,
    /// percentile ones too whenever resamples are drawn.
    #[serde(default = "default_ci")]
    pub ci: CiSpec,
    #[serde(default)]
    pub nuisance: NuisanceConfig,
    #[serde(default)]
    pub seed: u64,
}

fn default_gamma1() -> Vec<f64> {
    (0..=10).map(|i| i as f64 * 0.001).collect()
}

fn default_gamma0() -> Vec<f64> {
    (0..=10).map(|i| -0.0025 + i as f64 * 0.00025).collect()
}

fn default_s() -> TiltFunction {
    TiltFunction::Identity
}

fn default_sizes() -> Vec<usize> {
    vec![1000, 1500, 2000]
}

fn default_r() -> usize {
    200
}

fn default_k() -> usize {
    5
}

fn default_ci() -> CiSpec {
    CiSpec { method: CiMethod::DoubleSymmetricT, b1: 50, b2: 50, ..CiSpec::default() }
}

impl SimulationConfig {
    pub fn new(seed: u64) -> SimulationConfig {
        SimulationConfig {
            gamma1: default_gamma1(),
            gamma0: default_gamma0(),
            s1: default_s(),
            s0: default_s(),
            sample_sizes: default_sizes(),
            replications: default_r(),
            k: default_k(),
            ci: default_ci(),
            nuisance: NuisanceConfig::default(),
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.replications < 1 {
            return Err(Error::Config("need at least one replication".into()));
        }
        if self.sample_sizes.is_empty() || self.sample_sizes.iter().any(|&n| n < 100) {
            return Err(Error::Config("sample sizes must be nonempty and at least 100".into()));
        }
        if self.gamma1.is_empty() && self.gamma0.is_empty() {
            return Err(Error::Config("at least one gamma grid must be nonempty".into()));
        }
        self.ci.validate()?;
        self.specs().iter().try_for_each(|s| s.validate())
    }

    /// Arm-1 specs followed by arm-0 specs.
    fn specs(&self) -> Vec<TiltSpec> {
        let one = self.gamma1.iter().map(|&g| TiltSpec { arm: Arm::Treated, gamma: g, s: self.s1.clone() });
        let zero = self.gamma0.iter().map(|&g| TiltSpec { arm: Arm::Control, gamma: g, s: self.s0.clone() });
        one.chain(zero).collect()
    }
}

/// Aggregate over replications for one arm, tilt and sample size.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SimulationCell {
    pub arm: Arm,
    pub gamma: f64,
    pub n: usize,
    pub truth: f64,
    pub mean_estimate: f64,
    pub percent_bias: f64,
    pub mean_se: f64,
    /// Coverage per method, `None` when the method was not run. Order:
    /// normal, percentile, double.
    pub coverage: [Option<f64>; 3],
    pub mc_se: [Option<f64>; 3],
    pub replications: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SimulationResult {
    pub cells: Vec<SimulationCell>,
    /// Failed replications per sample size.
    pub failures: Vec<(usize, usize)>,
    pub invalid: bool,
}

impl SimulationResult {
    pub fn cell(&self, arm: Arm, gamma: f64, n: usize) -> Option<&SimulationCell> {
        self.cells.iter().find(|c| c.arm == arm && c.gamma == gamma && c.n == n)
    }

    /// Rows for one arm, in the column order gamma, n, percent_bias,
    /// cov_normal, cov_percentile, cov_double, followed by supporting
    /// columns.
    pub fn write_csv<W: Write>(&self, arm: Arm, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record([
            "gamma",
            "n",
            "percent_bias",
            "cov_normal",
            "cov_percentile",
            "cov_double",
            "truth",
            "mean_estimate",
            "mean_se",
            "mc_se_normal",
            "mc_se_percentile",
            "mc_se_double",
            "replications",
        ])?;
        let f = |v: Option<f64>| v.map_or_else(|| "NA".to_string(), |x| x.to_string());
        for c in self.cells.iter().filter(|c| c.arm == arm) {
            let mut rec = vec![c.gamma.to_string(), c.n.to_string(), c.percent_bias.to_string()];
            rec.extend(c.coverage.iter().map(|&v| f(v)));
            rec.extend([c.truth, c.mean_estimate, c.mean_se].map(|v| v.to_string()));
            rec.extend(c.mc_se.iter().map(|&v| f(v)));
            rec.push(c.replications.to_string());
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Per replication, per spec: estimate and its intervals (normal,
/// percentile, double).
type Replicate = Vec<(Estimate, [Option<Interval>; 3])>;

fn one_replication(
    truth: &NuisanceBundle,
    template: &Dataset,
    xs: &[Vec<f64>],
    n: usize,
    specs: &[TiltSpec],
    cfg: &SimulationConfig,
    seed: u64,
) -> Result<Replicate> {
    let ds = generate_semiparametric(truth, template, xs, n, derive_seed(seed, &[0]))?;
    let stat = |idx: &[usize], s: u64| -> Result<Vec<Estimate>> {
        let sub = ds.subset(idx);
        let plan = make_folds(&sub, cfg.k, s)?;
        let cf = CrossFit::fit(&sub, &plan, &cfg.nuisance)?;
        arm_estimates(&cf, &sub, specs)
    };
    let full = stat(&(0..n).collect::<Vec<_>>(), derive_seed(seed, &[1]))?;
    let level = cfg.ci.level;
    let mut out: Replicate = full.iter().map(|e| (*e, [Some(normal_ci(e.value, e.se, level)), None, None])).collect();
    let ci = CiSpec { seed: derive_seed(seed, &[2]), ..cfg.ci.clone() };
    match ci.method {
        CiMethod::Normal => {}
        CiMethod::Percentile => {
            let reps = bootstrap_replicates(n, ci.b1, ci.seed, &stat);
            for (s, o) in out.iter_mut().enumerate() {
                let vals: Vec<f64> = reps.iter().flatten().map(|r| r[s].value).collect();
                o.1[1] = percentile_ci(&vals, level).ok().map(|p| p.0);
            }
        }
        CiMethod::DoubleSymmetricT => {
            let res = double_bootstrap(n, &full, &stat, &ci)?;
            for (o, r) in out.iter_mut().zip(res) {
                o.1[1] = percentile_ci(&r.replicates, level).ok().map(|p| p.0);
                o.1[2] = Some(r.interval);
            }
        }
    }
    Ok(out)
}

fn arm_estimates(cf: &CrossFit, ds: &Dataset, specs: &[TiltSpec]) -> Result<Vec<Estimate>> {
    let split = specs.partition_point(|s| s.arm == Arm::Treated);
    let mut out = Vec::with_capacity(specs.len());
    for part in [&specs[..split], &specs[split..]] {
        for r in cf.arm_many(ds, part)? {
            let r = r?;
            out.push(Estimate { value: r.psi, se: r.se });
        }
    }
    Ok(out)
}

/// Replicated estimation under `truth` with covariates drawn from `xs`.
/// Failed replications are logged and excluded; more than 5% failures at
/// any sample size mark the run invalid.
pub fn run_simulation(truth: &NuisanceBundle, template: &Dataset, xs: &[Vec<f64>], cfg: &SimulationConfig) -> Result<SimulationResult> {
    cfg.validate()?;
    let specs = cfg.specs();
    let truths: Vec<f64> = specs.iter().map(|s| true_psi(truth, xs, s)).collect::<Result<_>>()?;
    let methods_run = match cfg.ci.method {
        CiMethod::Normal => [true, false, false],
        CiMethod::Percentile => [true, true, false],
        CiMethod::DoubleSymmetricT => [true, true, true],
    };
    let mut cells = Vec::new();
    let mut failures = Vec::new();
    let mut invalid = false;
    for &n in &cfg.sample_sizes {
        let reps: Vec<Option<Replicate>> = (0..cfg.replications)
            .into_par_iter()
            .map(|r| {
                let seed = derive_seed(cfg.seed, &[n as u64, r as u64]);
                match one_replication(truth, template, xs, n, &specs, cfg, seed) {
                    Ok(v) => Some(v),
                    Err(e) => {
                        log::warn!("replication {r} at n = {n} failed: {e}");
                        None
                    }
                }
            })
            .collect();
        let ok: Vec<&Replicate> = reps.iter().flatten().collect();
        let failed = cfg.replications - ok.len();
        failures.push((n, failed));
        if failed as f64 > MAX_FAILURE_RATE * cfg.replications as f64 {
            log::warn!("{failed} of {} replications failed at n = {n}; run marked invalid", cfg.replications);
            invalid = true;
        }
        if ok.is_empty() {
            continue;
        }
        let r = ok.len() as f64;
        for (s, spec) in specs.iter().enumerate() {
            let truth_v = truths[s];
            let mean_est = ok.iter().map(|v| v[s].0.value).sum::<f64>() / r;
            let mean_se = ok.iter().map(|v| v[s].0.se).sum::<f64>() / r;
            let mut coverage = [None; 3];
            let mut mc_se = [None; 3];
            for m in 0..3 {
                if !methods_run[m] {
                    continue;
                }
                let ivs: Vec<&Interval> = ok.iter().filter_map(|v| v[s].1[m].as_ref()).collect();
                if ivs.is_empty() {
                    continue;
                }
                let c = ivs.iter().filter(|iv| iv.contains(truth_v)).count() as f64 / ivs.len() as f64;
                coverage[m] = Some(c);
                mc_se[m] = Some((c * (1.0 - c) / ivs.len() as f64).sqrt());
            }
            cells.push(SimulationCell {
                arm: spec.arm,
                gamma: spec.gamma,
                n,
                truth: truth_v,
                mean_estimate: mean_est,
                percent_bias: 100.0 * (mean_est - truth_v) / truth_v,
                mean_se,
                coverage,
                mc_se,
                replications: ok.len(),
            });
        }
    }
    Ok(SimulationResult { cells, failures, invalid })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nuisance::{Cell, DiscreteLaw, DiscreteNuisance};

    #[test]
    fn seven_twelfths_truth() {
        let law = DiscreteLaw::empirical(vec![0.0, 1.0]).unwrap();
        let nb = DiscreteNuisance::new(vec![Cell { x: vec![], pi1: 0.5, laws: [Some(law.clone()), Some(law)] }]).unwrap();
        let spec = TiltSpec::new(Arm::Treated, 2f64.ln(), TiltFunction::Identity).unwrap();
        assert!((true_psi(&nb, &[vec![]], &spec).unwrap() - 7.0 / 12.0).abs() < 1e-15);
        let mut last = f64::NEG_INFINITY;
        for g in [-2.0, -0.5, 0.0, 0.5, 2.0] {
            let v = true_psi(&nb, &[vec![]], &spec.with_gamma(g)).unwrap();
            assert!(v > last);
            last = v;
        }
    }

    #[test]
    fn synthetic_data_shape() {
        let ds = synthetic_birthweight(3000, 1).unwrap();
        assert_eq!(ds, synthetic_birthweight(3000, 1).unwrap());
        let frac = ds.arm_count(Arm::Treated) as f64 / 3000.0;
        assert!((0.1..0.25).contains(&frac), "{frac}");
        assert!(ds.rows().iter().all(|r| (14.0..=45.0).contains(&r.x[0])));
        let naive = ds.arm_mean(Arm::Treated) - ds.arm_mean(Arm::Control);
        assert!(naive < -250.0);
    }

    #[test]
    fn config_validation() {
        let mut c = SimulationConfig::new(0);
        c.validate().unwrap();
        assert_eq!((c.ci.b1, c.ci.b2), (50, 50));
        assert_eq!(c.gamma1.len(), 11);
        assert!((c.gamma0[0] + 0.0025).abs() < 1e-15 && c.gamma0[10].abs() < 1e-15);
        c.replications = 0;
        assert!(c.validate().is_err());
        let c: SimulationConfig = serde_json::from_str(r#"{"sample_sizes": [50]}"#).unwrap();
        assert!(c.validate().is_err());
    }
}
