//! Normal, percentile and calibrated double (symmetric-t) bootstrap
//! intervals.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::rng::rng_from;
use crate::stats::{norm_quantile, quantile_sorted};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub value: f64,
    pub se: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub fn contains(&self, v: f64) -> bool {
        self.lo <= v && v <= self.hi
    }

    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CiMethod {
    Normal,
    Percentile,
    DoubleSymmetricT,
}

impl CiMethod {
    pub fn name(self) -> &'static str {
        match self {
            CiMethod::Normal => "normal",
            CiMethod::Percentile => "percentile",
            CiMethod::DoubleSymmetricT => "double_symmetric_t",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CiSpec {
    pub method: CiMethod,
    #[serde(default = "default_level")]
    pub level: f64,
    #[serde(rename = "B1", default = "default_b")]
    pub b1: usize,
    #[serde(rename = "B2", default = "default_b")]
    pub b2: usize,
    #[serde(default)]
    pub seed: u64,
}

fn default_level() -> f64 {
    0.95
}

fn default_b() -> usize {
    250
}

impl Default for CiSpec {
    fn default() -> Self {
        CiSpec { method: CiMethod::Normal, level: 0.95, b1: 250, b2: 250, seed: 0 }
    }
}

impl CiSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.level > 0.0 && self.level < 1.0) {
            return Err(Error::Config(format!("CI level {} not in (0, 1)", self.level)));
        }
        if self.method != CiMethod::Normal && self.b1 < 2 {
            return Err(Error::Config("B1 must be at least 2".into()));
        }
        if self.method == CiMethod::DoubleSymmetricT && self.b2 < 2 {
            return Err(Error::Config("B2 must be at least 2".into()));
        }
        Ok(())
    }
}

/// Row indices of a size-`n` draw with replacement.
pub fn resample_indices(n: usize, seed: u64, path: &[u64]) -> Vec<usize> {
    let mut rng = rng_from(seed, path);
    (0..n).map(|_| rng.random_range(0..n)).collect()
}

/// Nonparametric bootstrap resample of the rows of `ds`.
pub fn resample(ds: &Dataset, seed: u64) -> Dataset {
    ds.subset(&resample_indices(ds.n(), seed, &[]))
}

/// `est ± z se` with `z` the `(1+level)/2` normal quantile.
pub fn normal_ci(est: f64, se: f64, level: f64) -> Interval {
    let z = norm_quantile(0.5 + level / 2.0);
    Interval { lo: est - z * se, hi: est + z * se }
}

/// Type-7 quantiles at `(1-level)/2` and `(1+level)/2`. Non-finite
/// replicates are excluded; their count is returned.
pub fn percentile_ci(replicates: &[f64], level: f64) -> Result<(Interval, usize)> {
    let mut v: Vec<f64> = replicates.iter().copied().filter(|x| x.is_finite()).collect();
    let excluded = replicates.len() - v.len();
    if v.len() < 2 {
        return Err(Error::Calibration(format!("only {} finite bootstrap replicates", v.len())));
    }
    v.sort_by(f64::total_cmp);
    let a = (1.0 - level) / 2.0;
    Ok((Interval { lo: quantile_sorted(&v, a), hi: quantile_sorted(&v, 1.0 - a) }, excluded))
}

/// Nominal inner levels searched during calibration.
pub fn calibration_grid() -> Vec<f64> {
    (0..=39).map(|i| 0.80 + 0.005 * i as f64).collect()
}

/// Outcome of the double bootstrap for one statistic.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DoubleBootstrap {
    pub interval: Interval,
    /// Calibrated nominal level.
    pub beta_cal: f64,
    pub t_cal: f64,
    /// Outer replicates with a usable studentized statistic.
    pub used: usize,
    pub dropped: usize,
    /// Outer replicate values (all finite ones), reusable for a percentile
    /// interval.
    pub replicates: Vec<f64>,
}

/// Outer bootstrap replicates of every statistic; entry `[b][s]` is `None`
/// when the estimator failed on resample `b`.
pub fn bootstrap_replicates<F>(n: usize, b1: usize, seed: u64, estimator: &F) -> Vec<Option<Vec<Estimate>>>
where
    F: Fn(&[usize], u64) -> Result<Vec<Estimate>> + Sync,
{
    (0..b1)
        .into_par_iter()
        .map(|b| {
            let idx = resample_indices(n, seed, &[1, b as u64]);
            match estimator(&idx, crate::rng::derive_seed(seed, &[2, b as u64])) {
                Ok(v) => Some(v),
                Err(e) => {
                    log::debug!("bootstrap replicate {b} failed: {e}");
                    None
                }
            }
        })
        .collect()
}

fn usable(e: &Estimate) -> bool {
    e.value.is_finite() && e.se.is_finite() && e.se > 0.0
}

/// Calibrated symmetric-t double bootstrap for every statistic returned by
/// `estimator`.
///
/// `estimator(indices, seed)` evaluates the statistics on the rows
/// `indices` of the original sample; `full` holds the estimates on the full
/// sample. Outer resample `b` yields `T*_b = |theta*_b - theta| / se*_b`
/// and its inner resamples yield `T**_bc = |theta**_bc - theta*_b| /
/// se**_bc`. The achieved coverage of nominal level `beta` is the share of
/// outer replicates with `T*_b` below the `beta` quantile of their inner
/// statistics; `beta_cal` makes that share equal `spec.level`, and the
/// interval is `theta ± q_{beta_cal}(T*) se`.
pub fn double_bootstrap<F>(n: usize, full: &[Estimate], estimator: &F, spec: &CiSpec) -> Result<Vec<DoubleBootstrap>>
where
    F: Fn(&[usize], u64) -> Result<Vec<Estimate>> + Sync,
{
    spec.validate()?;
    let m = full.len();
    // per outer replicate: Some((estimates, inner T** per statistic))
    let outer: Vec<Option<(Vec<Estimate>, Vec<Vec<f64>>)>> = (0..spec.b1)
        .into_par_iter()
        .map(|b| {
            let idx = resample_indices(n, spec.seed, &[1, b as u64]);
            let est = estimator(&idx, crate::rng::derive_seed(spec.seed, &[2, b as u64])).ok()?;
            let mut inner = vec![Vec::with_capacity(spec.b2); m];
            for c in 0..spec.b2 {
                let pick = resample_indices(n, spec.seed, &[3, b as u64, c as u64]);
                let idx2: Vec<usize> = pick.iter().map(|&j| idx[j]).collect();
                if let Ok(e2) = estimator(&idx2, crate::rng::derive_seed(spec.seed, &[4, b as u64, c as u64])) {
                    for s in 0..m {
                        if usable(&e2[s]) && est[s].value.is_finite() {
                            inner[s].push((e2[s].value - est[s].value).abs() / e2[s].se);
                        }
                    }
                }
            }
            Some((est, inner))
        })
        .collect();

    let grid = calibration_grid();
    let mut out = Vec::with_capacity(m);
    for s in 0..m {
        let replicates: Vec<f64> = outer
            .iter()
            .flatten()
            .map(|(e, _)| e[s].value)
            .filter(|v| v.is_finite())
            .collect();
        if full[s].se == 0.0 {
            let v = full[s].value;
            out.push(DoubleBootstrap {
                interval: Interval { lo: v, hi: v },
                beta_cal: spec.level,
                t_cal: 0.0,
                used: 0,
                dropped: 0,
                replicates,
            });
            continue;
        }
        // (T*_b, sorted inner statistics)
        let mut stats: Vec<(f64, Vec<f64>)> = Vec::new();
        for (est, inner) in outer.iter().flatten() {
            if !usable(&est[s]) || inner[s].len() < 2 {
                continue;
            }
            let mut tt = inner[s].clone();
            tt.sort_by(f64::total_cmp);
            stats.push(((est[s].value - full[s].value).abs() / est[s].se, tt));
        }
        let dropped = spec.b1 - stats.len();
        if dropped as f64 > 0.2 * spec.b1 as f64 || stats.len() < 2 {
            return Err(Error::Calibration(format!(
                "{dropped} of {} outer replicates dropped for statistic {s}",
                spec.b1
            )));
        }
        let achieved: Vec<f64> = grid
            .iter()
            .map(|&beta| {
                stats.iter().filter(|(t, inner)| *t <= quantile_sorted(inner, beta)).count() as f64
                    / stats.len() as f64
            })
            .collect();
        let beta_cal = interpolate_level(&grid, &achieved, spec.level);
        let mut outer_t: Vec<f64> = stats.iter().map(|(t, _)| *t).collect();
        outer_t.sort_by(f64::total_cmp);
        let t_cal = quantile_sorted(&outer_t, beta_cal);
        let v = full[s].value;
        out.push(DoubleBootstrap {
            interval: Interval { lo: v - t_cal * full[s].se, hi: v + t_cal * full[s].se },
            beta_cal,
            t_cal,
            used: stats.len(),
            dropped,
            replicates,
        });
    }
    Ok(out)
}

/// Nominal level whose achieved coverage equals `target`, by linear
/// interpolation between grid points, clamped to the grid ends.
fn interpolate_level(grid: &[f64], achieved: &[f64], target: f64) -> f64 {
    if target <= achieved[0] {
        return grid[0];
    }
    for i in 1..grid.len() {
        if achieved[i] >= target {
            let (a0, a1) = (achieved[i - 1], achieved[i]);
            if a1 == a0 {
                return grid[i];
            }
            return grid[i - 1] + (grid[i] - grid[i - 1]) * (target - a0) / (a1 - a0);
        }
    }
    grid[grid.len() - 1]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{Arm, Observation};
    use proptest::prelude::*;

    #[test]
    fn normal_interval() {
        let i = normal_ci(0.0, 1.0, 0.95);
        assert!((i.hi - 1.959_963_984_540_054).abs() < 1e-12 && (i.lo + i.hi).abs() < 1e-15);
        let d = normal_ci(3.0, 0.0, 0.95);
        assert_eq!((d.lo, d.hi), (3.0, 3.0));
        let p = normal_ci(-223.0, 26.0, 0.95);
        assert!((p.lo + 273.959).abs() < 1e-2 && (p.hi + 172.041).abs() < 1e-2);
    }

    #[test]
    fn percentile_values() {
        let v: Vec<f64> = (1..=100).map(f64::from).collect();
        let (i, _) = percentile_ci(&v, 0.90).unwrap();
        assert!((i.lo - 5.95).abs() < 1e-12 && (i.hi - 95.05).abs() < 1e-12);
        let (i, _) = percentile_ci(&[2.0; 5], 0.9).unwrap();
        assert_eq!((i.lo, i.hi), (2.0, 2.0));
        let (i, _) = percentile_ci(&[0.0, 1.0], 0.5).unwrap();
        assert_eq!((i.lo, i.hi), (0.25, 0.75));
        let (_, excluded) = percentile_ci(&[0.0, f64::NAN, 1.0], 0.5).unwrap();
        assert_eq!(excluded, 1);
    }

    fn ds(n: usize) -> Dataset {
        let rows = (0..n)
            .map(|i| Observation { x: vec![i as f64], t: if i % 2 == 0 { Arm::Treated } else { Arm::Control }, y: i as f64 })
            .collect();
        Dataset::new(vec!["x".into()], rows).unwrap()
    }

    #[test]
    fn resample_basics() {
        let one = ds(1);
        assert_eq!(resample(&one, 4).rows(), one.rows());
        let big = ds(5000);
        assert_eq!(resample(&big, 9), resample(&big, 9));
        let idx = resample_indices(5000, 9, &[]);
        let mut u = idx.clone();
        u.sort_unstable();
        u.dedup();
        let frac = u.len() as f64 / 5000.0;
        assert!((frac - (1.0 - (-1f64).exp())).abs() < 0.02, "{frac}");
    }

    fn mean_estimator(data: &[f64]) -> impl Fn(&[usize], u64) -> Result<Vec<Estimate>> + Sync + '_ {
        move |idx: &[usize], _| {
            let v: Vec<f64> = idx.iter().map(|&i| data[i]).collect();
            let m = v.iter().sum::<f64>() / v.len() as f64;
            let var = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() as f64 - 1.0);
            Ok(vec![Estimate { value: m, se: (var / v.len() as f64).sqrt() }])
        }
    }

    #[test]
    fn constant_data_gives_zero_width() {
        let data = vec![4.0; 30];
        let est = mean_estimator(&data);
        let full = est(&(0..30).collect::<Vec<_>>(), 0).unwrap();
        let spec = CiSpec { method: CiMethod::DoubleSymmetricT, b1: 10, b2: 10, ..Default::default() };
        let r = double_bootstrap(30, &full, &est, &spec).unwrap();
        assert_eq!((r[0].interval.lo, r[0].interval.hi), (4.0, 4.0));
    }

    #[test]
    fn double_bootstrap_is_deterministic_and_contains_estimate() {
        let data: Vec<f64> = (0..40).map(|i| ((i * 37) % 11) as f64).collect();
        let est = mean_estimator(&data);
        let full = est(&(0..40).collect::<Vec<_>>(), 0).unwrap();
        let spec = CiSpec { method: CiMethod::DoubleSymmetricT, b1: 30, b2: 30, seed: 5, ..Default::default() };
        let a = double_bootstrap(40, &full, &est, &spec).unwrap();
        let b = double_bootstrap(40, &full, &est, &spec).unwrap();
        assert_eq!(a, b);
        assert!(a[0].interval.contains(full[0].value));
        assert!((0.80..=0.995).contains(&a[0].beta_cal));
    }

    #[test]
    fn too_many_drops_fail_calibration() {
        let est = |idx: &[usize], _: u64| -> Result<Vec<Estimate>> {
            if idx[0] % 2 == 0 {
                Err(Error::Numerical("boom".into()))
            } else {
                Ok(vec![Estimate { value: 1.0, se: 1.0 }])
            }
        };
        let spec = CiSpec { method: CiMethod::DoubleSymmetricT, b1: 20, b2: 5, ..Default::default() };
        let r = double_bootstrap(10, &[Estimate { value: 1.0, se: 1.0 }], &est, &spec);
        assert!(matches!(r, Err(Error::Calibration(_))));
    }

    #[test]
    fn level_interpolation() {
        let grid = [0.8, 0.9, 1.0];
        assert_eq!(interpolate_level(&grid, &[0.7, 0.8, 0.9], 0.85), 0.95);
        assert_eq!(interpolate_level(&grid, &[0.7, 0.8, 0.9], 0.99), 1.0);
        assert_eq!(interpolate_level(&grid, &[0.96, 0.97, 0.99], 0.95), 0.8);
    }

    #[test]
    fn config_syntax() {
        let s: CiSpec = serde_json::from_str(r#"{"method":"double_symmetric_t","level":0.95,"B1":250,"B2":250,"seed":7}"#).unwrap();
        assert_eq!(s.method, CiMethod::DoubleSymmetricT);
        assert_eq!((s.b1, s.b2, s.seed), (250, 250, 7));
        let d: CiSpec = serde_json::from_str(r#"{"method":"double_symmetric_t"}"#).unwrap();
        assert_eq!((d.b1, d.b2), (250, 250));
    }

    proptest! {
        #[test]
        fn percentile_nested(v in prop::collection::vec(-100f64..100.0, 2..50), a in 0.05f64..0.95, b in 0.05f64..0.95) {
            let (lo, hi) = (a.min(b), a.max(b));
            let (inner, _) = percentile_ci(&v, lo).unwrap();
            let (outer, _) = percentile_ci(&v, hi).unwrap();
            prop_assert!(outer.lo <= inner.lo && inner.hi <= outer.hi);
        }

        #[test]
        fn normal_contains_estimate(est in -1e6f64..1e6, se in 0f64..1e3, level in 0.01f64..0.999) {
            prop_assert!(normal_ci(est, se, level).contains(est));
        }
    }
}
