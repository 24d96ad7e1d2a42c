//! Shared inputs for the benchmarks.

use rand::Rng;
use rand_distr::StandardNormal;
use tiltsens_core::rng::rng_from;
use tiltsens_core::stats::logistic;
use tiltsens_core::{Arm, Dataset, Observation};

/// Two normal covariates, logistic treatment and a linear outcome with
/// standard normal noise.
pub fn linear_data(n: usize, seed: u64) -> Dataset {
    let mut rng = rng_from(seed, &[]);
    let rows = (0..n)
        .map(|_| {
            let x: Vec<f64> = (0..2).map(|_| rng.sample(StandardNormal)).collect();
            let t = if rng.random::<f64>() < logistic(0.3 * x[0] - 0.2 * x[1]) { Arm::Treated } else { Arm::Control };
            let e: f64 = rng.sample(StandardNormal);
            Observation { y: f64::from(u8::from(t)) + x[0] + 0.5 * x[1] + e, x, t }
        })
        .collect();
    Dataset::new(vec!["x1".into(), "x2".into()], rows).expect("valid synthetic data")
}

/// Heavy-tailed values for the truncation threshold.
pub fn heavy_values(n: usize, seed: u64) -> Vec<f64> {
    let mut rng = rng_from(seed, &[]);
    (0..n).map(|_| rng.sample::<f64, _>(StandardNormal) / rng.random::<f64>().max(1e-3)).collect()
}
