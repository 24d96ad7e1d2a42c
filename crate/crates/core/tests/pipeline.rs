//! End-to-end checks with fitted nuisances on continuous synthetic data.

use rand::Rng;
use rand_distr::StandardNormal;
use tiltsens_core::diagnostics::{generate_semiparametric, gof_report, Condition, Subgroup};
use tiltsens_core::estimator::{nu_value, report_from};
use tiltsens_core::rng::rng_from;
use tiltsens_core::stats::{logistic, mean, sample_variance};
use tiltsens_core::*;

const GAMMA: f64 = 0.3;

fn oracle_pi1(x: &[f64]) -> f64 {
    logistic(0.3 * x[0] - 0.2 * x[1])
}

fn oracle_mu(t: Arm, x: &[f64]) -> f64 {
    f64::from(u8::from(t)) + x[0] + 0.5 * x[1]
}

/// Moments of `N(mu, 1)` under the identity tilt.
fn oracle_moments(t: Arm, x: &[f64], gamma: f64) -> TiltedMoments {
    let mu = oracle_mu(t, x);
    TiltedMoments { mean: mu, tilted_mean: mu + gamma, log_c: gamma * mu + gamma * gamma / 2.0 }
}

fn normal_data(n: usize, seed: u64) -> Dataset {
    let mut rng = rng_from(seed, &[]);
    let rows = (0..n)
        .map(|_| {
            let x: Vec<f64> = (0..2).map(|_| rng.sample(StandardNormal)).collect();
            let t = if rng.random::<f64>() < oracle_pi1(&x) { Arm::Treated } else { Arm::Control };
            let e: f64 = rng.sample(StandardNormal);
            let y = oracle_mu(t, &x) + e;
            Observation { x, t, y }
        })
        .collect();
    Dataset::new(vec!["x1".into(), "x2".into()], rows).unwrap()
}

fn quick() -> NuisanceConfig {
    let mut cfg = NuisanceConfig::default();
    cfg.outcome.restarts = 1;
    cfg
}

#[test]
fn eif_monte_carlo_mean_is_zero() {
    let ds = normal_data(100_000, 1);
    let spec = TiltSpec::new(Arm::Treated, GAMMA, TiltFunction::Identity).unwrap();
    // E[pi_0(X)] = 1/2 by symmetry of the centred normal index
    let psi = 1.0 + GAMMA * 0.5;
    let phi: Vec<f64> = ds
        .rows()
        .iter()
        .map(|o| nu_value(o, oracle_pi1(&o.x), &oracle_moments(Arm::Treated, &o.x, GAMMA), &spec).unwrap() - psi)
        .collect();
    let se = (sample_variance(&phi) / phi.len() as f64).sqrt();
    assert!(mean(&phi).abs() < 3.0 * se, "mean {} se {se}", mean(&phi));
}

#[test]
fn influence_values_approach_the_oracle() {
    let spec = TiltSpec::new(Arm::Treated, GAMMA, TiltFunction::Identity).unwrap();
    let mut dist = Vec::new();
    for (n, seed) in [(500, 3), (2000, 4), (8000, 5)] {
        let ds = normal_data(n, seed);
        let plan = make_folds(&ds, 2, seed).unwrap();
        let cf = CrossFit::fit(&ds, &plan, &quick()).unwrap();
        let r = cf.arm(&ds, &spec).unwrap();
        let sq: f64 = ds
            .rows()
            .iter()
            .zip(&r.nu)
            .map(|(o, v)| {
                let oracle = nu_value(o, oracle_pi1(&o.x), &oracle_moments(Arm::Treated, &o.x, GAMMA), &spec).unwrap();
                (v - oracle).powi(2)
            })
            .sum();
        dist.push((sq / n as f64).sqrt());
    }
    assert!(dist[0] > dist[1] && dist[1] > dist[2], "{dist:?}");
}

/// Cross-fit AIPW sharing the fitted bundles, with its own Huberization by
/// bisection.
fn aipw(ds: &Dataset, cf: &CrossFit, t: Arm) -> f64 {
    let plan = cf.plan();
    let mut total = 0.0;
    for (k, nb) in cf.bundles().iter().enumerate() {
        let vals: Vec<f64> = plan
            .fold_rows(k)
            .iter()
            .map(|&i| {
                let o = &ds.rows()[i];
                let pi = nb.pi(t, &o.x).unwrap();
                let mu = nb.law(t, &o.x).unwrap().mean();
                if o.t == t {
                    (o.y - mu) / pi + mu
                } else {
                    mu
                }
            })
            .collect();
        let target = (vals.len() as f64).ln();
        let f = |tau: f64| vals.iter().map(|x| (x * x).min(tau * tau) / (tau * tau)).sum::<f64>() - target;
        let (mut lo, mut hi) = (1e-12, 1e12);
        for _ in 0..400 {
            let mid = 0.5 * (lo + hi);
            if f(mid) > 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        total += vals.iter().map(|x| x.signum() * x.abs().min(hi)).sum::<f64>() / vals.len() as f64;
    }
    total / plan.k as f64
}

#[test]
fn zero_tilt_equals_aipw_with_fitted_nuisances() {
    for seed in [11, 12] {
        let ds = normal_data(500, seed);
        let plan = make_folds(&ds, 5, seed).unwrap();
        let cf = CrossFit::fit(&ds, &plan, &quick()).unwrap();
        let r = report_from(&cf, &ds, &TiltSpec::null(Arm::Treated), &TiltSpec::null(Arm::Control), 0.95).unwrap();
        for t in Arm::BOTH {
            assert!((r.psi_tilde[t.index()] - aipw(&ds, &cf, t)).abs() < 1e-10);
        }
    }
}

#[test]
fn constant_outcome_with_fitted_nuisances() {
    let base = normal_data(300, 2);
    let ds = base.with_rows(base.rows().iter().map(|r| Observation { y: 2.5, ..r.clone() }).collect()).unwrap();
    let plan = make_folds(&ds, 3, 0).unwrap();
    let opts = CrossFitOptions { nuisance: quick(), ..Default::default() };
    let s1 = TiltSpec::new(Arm::Treated, 0.8, TiltFunction::Identity).unwrap();
    let s0 = TiltSpec::new(Arm::Control, -0.4, TiltFunction::Identity).unwrap();
    let r = crossfit_estimate(&ds, &plan, &s1, &s0, &opts).unwrap();
    assert!((r.psi_tilde[0] - 2.5).abs() < 1e-12 && (r.psi_tilde[1] - 2.5).abs() < 1e-12);
    assert!(r.ace.abs() < 1e-12);
}

#[test]
fn grid_shape_and_degenerate_grid() {
    let ds = normal_data(400, 6);
    let plan = make_folds(&ds, 4, 1).unwrap();
    let opts = CrossFitOptions { nuisance: quick(), ..Default::default() };
    let (b1, b0) = (TiltSpec::null(Arm::Treated), TiltSpec::null(Arm::Control));
    let one = sensitivity_grid(&ds, &plan, &[0.0], &[0.0], &b1, &b0, &opts).unwrap();
    let direct = crossfit_estimate(&ds, &plan, &b1, &b0, &opts).unwrap();
    let cell = one.cells[0].estimate.as_ref().unwrap();
    assert_eq!(cell.ace, direct.ace);
    assert_eq!(cell.se[2], direct.se[2]);

    let g: Vec<f64> = (0..11).map(|i| -0.5 + 0.1 * i as f64).collect();
    let full = sensitivity_grid(&ds, &plan, &g, &g, &b1, &b0, &opts).unwrap();
    let mut buf = Vec::new();
    full.write_csv(&mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    assert_eq!(text.lines().count(), 122);
    assert_eq!(text.lines().next().unwrap(), "gamma1,gamma0,psi1,psi0,ace,se_ace,ci_method,ci_lo,ci_hi,classification");
    let c = full.cell(0.0, 0.0).unwrap().estimate.as_ref().unwrap();
    assert_eq!(c.ace, direct.ace);
}

#[test]
fn grid_marks_failed_cells_and_continues() {
    let ds = normal_data(300, 8);
    let plan = make_folds(&ds, 3, 1).unwrap();
    let opts = CrossFitOptions { nuisance: quick(), ..Default::default() };
    let r = sensitivity_grid(&ds, &plan, &[0.0, 400.0], &[0.0], &TiltSpec::null(Arm::Treated), &TiltSpec::null(Arm::Control), &opts)
        .unwrap();
    assert_eq!(r.failed(), 1);
    assert!(r.cells[0].estimate.is_ok() && r.cells[1].estimate.is_err());
}

#[test]
fn self_generated_data_passes_goodness_of_fit() {
    let base = normal_data(2000, 21);
    let nb = NuisanceBundle::fit(&base, &quick()).unwrap();
    let observed = generate_semiparametric(&nb, &base, &base.covariate_rows(), 100_000, 1).unwrap();
    let groups: Vec<Subgroup> = [(-10.0, -0.5), (-0.5, 0.5), (0.5, 10.0), (-10.0, 10.0)]
        .iter()
        .enumerate()
        .map(|(i, &(min, max))| Subgroup { name: format!("g{i}"), conditions: [("x1".to_string(), Condition::Range { min, max })].into() })
        .collect();
    let r = gof_report(&observed, &nb, &groups, 100_000, 2).unwrap();
    assert!(r.median_ks().unwrap() < 0.05, "{r:?}");
    assert!(r.rows.iter().all(|row| row.treated_fraction_diff.unwrap() < 0.02));
}
