//! Single-index model for the conditional CDF of `Y` given `T = t, X = x`.
//!
//! Stage one picks the index direction `beta` (first coordinate fixed at 1)
//! and a bandwidth by minimizing a leave-one-out CDF criterion under a
//! fourth-order kernel. Stage two rescales the bandwidth by `n^(-4/45)` and
//! smooths with a Gaussian kernel, giving genuine step-function CDFs.

mod cv;
mod kernel;
mod optim;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::dataset::{Arm, Dataset};
use crate::error::{Error, Result};
use crate::nuisance::{DiscreteLaw, TiltedMoments};
use crate::rng::rng_from;
use crate::stats::{logistic, logit};
use crate::tilting::TiltSpec;

pub use cv::CvProblem;
pub use kernel::{gauss_unnormalized, k4, GAUSS_WINDOW};
pub use optim::{nelder_mead, Minimum};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, rename_all = "kebab-case")]
pub struct SingleIndexConfig {
    /// Total number of starting points, the least-squares start included.
    pub restarts: usize,
    /// Points in the coarse bandwidth scan that seeds each start.
    pub h_grid_size: usize,
    /// Bandwidth interval is `[h_lower n^(-1/5), h_upper n^(-1/16)]` times
    /// the standard deviation of the index.
    pub h_lower: f64,
    pub h_upper: f64,
    /// Criterion evaluations allowed per start.
    pub max_evals: usize,
    pub ftol: f64,
    pub xtol: f64,
    pub seed: u64,
}

impl Default for SingleIndexConfig {
    fn default() -> Self {
        SingleIndexConfig {
            restarts: 5,
            h_grid_size: 8,
            h_lower: 0.5,
            h_upper: 3.0,
            max_evals: 600,
            ftol: 1e-8,
            xtol: 1e-4,
            seed: 0,
        }
    }
}

impl SingleIndexConfig {
    pub fn validate(&self) -> Result<()> {
        if self.restarts == 0 || self.h_grid_size == 0 || self.max_evals == 0 {
            return Err(Error::Config("restarts, h-grid-size and max-evals must be positive".into()));
        }
        if !(self.h_lower > 0.0 && self.h_upper > 0.0) {
            return Err(Error::Config("bandwidth constants must be positive".into()));
        }
        Ok(())
    }
}

/// Fitted single-index conditional CDF for one arm.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OutcomeFit {
    pub arm: Arm,
    /// Index direction with `beta[0] == 1`.
    pub beta: Vec<f64>,
    /// Stage-one bandwidth minimizing the criterion.
    pub h_stage1: f64,
    /// Stage-two bandwidth `h_stage1 * n^(-4/45)`.
    pub h_stage2: f64,
    pub cv_value: f64,
    pub evals: usize,
    /// Training index values, ascending.
    index: Vec<f64>,
    /// Training outcomes aligned with `index`.
    ys: Vec<f64>,
}

fn sd(v: &[f64]) -> f64 {
    let m = v.iter().sum::<f64>() / v.len() as f64;
    (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / v.len() as f64).sqrt()
}

/// Least-squares slopes of `y` on `x` with an intercept.
fn ols_slopes(xs: &[Vec<f64>], ys: &[f64]) -> Option<Vec<f64>> {
    let (n, p) = (xs.len(), xs[0].len());
    let a = DMatrix::from_fn(n, p + 1, |i, j| if j == 0 { 1.0 } else { xs[i][j - 1] });
    let b = DVector::from_column_slice(ys);
    let sol = a.svd(true, true).solve(&b, 1e-12).ok()?;
    Some(sol.iter().skip(1).copied().collect())
}

/// Unit vector with hyperspherical angles `a`: `(cos a0, sin a0 cos a1, ...)`.
fn direction(a: &[f64]) -> Vec<f64> {
    let mut u = Vec::with_capacity(a.len() + 1);
    let mut sin_prod = 1.0;
    for &phi in a {
        u.push(sin_prod * phi.cos());
        sin_prod *= phi.sin();
    }
    u.push(sin_prod);
    u
}

/// Inverse of [`direction`] up to scale.
fn angles_of(u: &[f64]) -> Vec<f64> {
    let d = u.len() - 1;
    (0..d)
        .map(|k| {
            if k + 1 == d {
                u[k + 1].atan2(u[k])
            } else {
                u[k + 1..].iter().map(|v| v * v).sum::<f64>().sqrt().atan2(u[k])
            }
        })
        .collect()
}

/// Fits the single-index model to the rows of `train` in arm `t`.
pub fn fit_single_index(train: &Dataset, t: Arm, cfg: &SingleIndexConfig) -> Result<OutcomeFit> {
    cfg.validate()?;
    let idx = train.arm_indices(t);
    let p = train.p();
    let n = idx.len();
    if n < p + 2 {
        return Err(Error::DegenerateFit(format!(
            "arm {t} has {n} rows, the single-index fit needs at least {}",
            p + 2
        )));
    }
    let xs: Vec<Vec<f64>> = idx.iter().map(|&i| train.rows()[i].x.clone()).collect();
    let ys: Vec<f64> = idx.iter().map(|&i| train.rows()[i].y).collect();

    // free coordinates are searched on a scale-free parameter theta with
    // beta_j = theta_j * sd(x_0) / sd(x_j)
    let sds: Vec<f64> = (0..p).map(|j| sd(&xs.iter().map(|x| x[j]).collect::<Vec<_>>())).collect();
    let scale: Vec<f64> = (1..p)
        .map(|j| if sds[j] > 0.0 && sds[0] > 0.0 { sds[0] / sds[j] } else { 1.0 })
        .collect();
    let theta_ols: Vec<f64> = match ols_slopes(&xs, &ys) {
        Some(b) if b[0].abs() > 1e-12 * b.iter().map(|v| v.abs()).fold(0.0, f64::max) => {
            (1..p).map(|j| (b[j] / b[0] / scale[j - 1]).clamp(-5.0, 5.0)).collect()
        }
        _ => vec![0.0; p - 1],
    };

    let nf = n as f64;
    let c_lo = cfg.h_lower * nf.powf(-0.2);
    let c_hi = cfg.h_upper * nf.powf(-1.0 / 16.0);
    let (c_lo, c_hi) = (c_lo.min(c_hi), c_lo.max(c_hi));
    let c_of = |z: f64| c_lo + (c_hi - c_lo) * logistic(z);
    // the criterion only sees the index direction, so the free coordinates
    // are searched as angles of a unit vector on the scaled axes; free
    // coefficients can then grow without the search running off to infinity
    let beta_of = |angles: &[f64]| -> Vec<f64> {
        let u = direction(angles);
        let u0 = if u[0].abs() < 1e-12 { 1e-12f64.copysign(u[0]) } else { u[0] };
        std::iter::once(1.0).chain(u[1..].iter().zip(&scale).map(|(v, s)| v / u0 * s)).collect()
    };

    let mut prob = CvProblem::new(&xs, &ys);
    let mut total_evals = 0usize;
    let mut objective = |theta: &[f64], z: f64, evals: &mut usize| -> f64 {
        *evals += 1;
        let beta = beta_of(theta);
        let su = sd(&prob.index(&beta)).max(1e-12);
        prob.criterion(&beta, c_of(z) * su).unwrap_or(f64::INFINITY)
    };

    let mut rng = rng_from(cfg.seed, &[0x5349, t.index() as u64]);
    let starts = if p == 1 { 1 } else { cfg.restarts };
    let mut best: Option<Minimum> = None;
    let mut trace = Vec::new();
    let g = cfg.h_grid_size;
    for s in 0..starts {
        let ols_angles = angles_of(&std::iter::once(1.0).chain(theta_ols.iter().copied()).collect::<Vec<_>>());
        let theta0: Vec<f64> = if s == 0 {
            ols_angles
        } else {
            ols_angles.iter().map(|v| v + 0.5 * rng.sample::<f64, _>(StandardNormal)).collect()
        };
        // coarse log-spaced bandwidth scan seeds the joint search
        let mut z0 = 0.0;
        let mut f0 = f64::INFINITY;
        for k in 0..g {
            let frac = (k as f64 + 0.5) / g as f64;
            let c = c_lo * (c_hi / c_lo).powf(frac);
            let z = logit(((c - c_lo) / (c_hi - c_lo)).clamp(1e-6, 1.0 - 1e-6));
            let v = objective(&theta0, z, &mut total_evals);
            if v < f0 {
                f0 = v;
                z0 = z;
            }
        }
        let mut x0 = theta0.clone();
        x0.push(z0);
        let mut step = vec![0.25; p - 1];
        step.push(1.0);
        let m = nelder_mead(
            |v: &[f64]| {
                let (th, z) = v.split_at(p - 1);
                objective(th, z[0], &mut total_evals)
            },
            &x0,
            &step,
            cfg.max_evals,
            cfg.ftol,
            cfg.xtol,
        );
        trace.push(m.f);
        let better = match &best {
            None => true,
            Some(b) => (m.converged && !b.converged) || (m.converged == b.converged && m.f < b.f),
        };
        if better {
            best = Some(m);
        }
    }
    let best = best.expect("at least one start");
    let (theta, z) = best.x.split_at(p - 1);
    let beta = beta_of(theta);
    if !best.converged || !best.f.is_finite() {
        return Err(Error::NonConvergence {
            msg: format!("single-index search for arm {t} exhausted its budget"),
            trace,
            best: beta,
        });
    }
    let index_raw = prob.index(&beta);
    let h_stage1 = c_of(z[0]) * sd(&index_raw).max(1e-12);
    let h_stage2 = h_stage1 * nf.powf(-4.0 / 45.0);
    let mut order: Vec<usize> = (0..n).collect();
    let u: Vec<f64> = xs.iter().map(|x| x.iter().zip(&beta).map(|(a, b)| a * b).sum()).collect();
    order.sort_by(|&a, &b| u[a].total_cmp(&u[b]).then(ys[a].total_cmp(&ys[b])));
    Ok(OutcomeFit {
        arm: t,
        beta,
        h_stage1,
        h_stage2,
        cv_value: best.f,
        evals: total_evals,
        index: order.iter().map(|&i| u[i]).collect(),
        ys: order.iter().map(|&i| ys[i]).collect(),
    })
}

impl OutcomeFit {
    /// Builds a fit from known parameters; the stage-two bandwidth follows
    /// the usual rescaling.
    pub fn from_parts(arm: Arm, beta: Vec<f64>, h_stage1: f64, xs: &[Vec<f64>], ys: &[f64]) -> Result<OutcomeFit> {
        if beta.first() != Some(&1.0) || !(h_stage1 > 0.0) || xs.len() != ys.len() || xs.is_empty() {
            return Err(Error::Domain("invalid single-index parameters".into()));
        }
        let u: Vec<f64> = xs.iter().map(|x| x.iter().zip(&beta).map(|(a, b)| a * b).sum()).collect();
        let mut order: Vec<usize> = (0..ys.len()).collect();
        order.sort_by(|&a, &b| u[a].total_cmp(&u[b]).then(ys[a].total_cmp(&ys[b])));
        let n = ys.len() as f64;
        Ok(OutcomeFit {
            arm,
            h_stage2: h_stage1 * n.powf(-4.0 / 45.0),
            beta,
            h_stage1,
            cv_value: f64::NAN,
            evals: 0,
            index: order.iter().map(|&i| u[i]).collect(),
            ys: order.iter().map(|&i| ys[i]).collect(),
        })
    }

    pub fn n(&self) -> usize {
        self.ys.len()
    }

    pub fn dim(&self) -> usize {
        self.beta.len()
    }

    pub fn training_outcomes(&self) -> &[f64] {
        &self.ys
    }

    pub fn index_of(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.beta.len() {
            return Err(Error::Shape { expected: self.beta.len(), got: x.len() });
        }
        Ok(x.iter().zip(&self.beta).map(|(a, b)| a * b).sum())
    }

    /// Stage-two Nadaraya–Watson law of `Y` at `x`. Falls back to the
    /// marginal empirical law when every weight vanishes.
    pub fn law(&self, x: &[f64]) -> Result<DiscreteLaw> {
        let u = self.index_of(x)?;
        let h = self.h_stage2;
        let lo = self.index.partition_point(|&v| v < u - GAUSS_WINDOW * h);
        let hi = self.index.partition_point(|&v| v <= u + GAUSS_WINDOW * h);
        let mut ys = Vec::with_capacity(hi.saturating_sub(lo));
        let mut ws = Vec::with_capacity(hi.saturating_sub(lo));
        for i in lo..hi {
            let w = gauss_unnormalized((u - self.index[i]) / h);
            if w > 0.0 {
                ys.push(self.ys[i]);
                ws.push(w);
            }
        }
        if ws.is_empty() {
            log::warn!("all kernel weights vanish at index {u}; using the marginal outcome law of arm {}", self.arm);
            return DiscreteLaw::empirical(self.ys.clone());
        }
        DiscreteLaw::new(ys, ws)
    }

    pub fn cond_cdf(&self, y: f64, x: &[f64]) -> Result<f64> {
        Ok(self.law(x)?.cdf(y))
    }

    pub fn moment<F: FnMut(f64) -> Result<f64>>(&self, g: F, x: &[f64]) -> Result<f64> {
        self.law(x)?.moment(g)
    }

    pub fn c_factor(&self, spec: &TiltSpec, x: &[f64]) -> Result<f64> {
        self.moment(|y| spec.exp_tilt(y), x)
    }

    pub fn tilted_mean(&self, spec: &TiltSpec, x: &[f64]) -> Result<f64> {
        Ok(self.tilted(spec, x)?.tilted_mean)
    }

    pub fn tilted(&self, spec: &TiltSpec, x: &[f64]) -> Result<TiltedMoments> {
        self.law(x)?.tilted(spec)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::Observation;
    use crate::stats::norm_cdf;
    use crate::tilting::TiltFunction;
    use proptest::prelude::*;
    use rand::Rng;

    fn single_index_data(n: usize, beta2: f64, seed: u64) -> Dataset {
        let mut rng = rng_from(seed, &[]);
        let rows = (0..n)
            .map(|_| {
                let a: f64 = rng.sample(StandardNormal);
                let b: f64 = rng.sample(StandardNormal);
                let e: f64 = rng.sample(StandardNormal);
                Observation { x: vec![a, b], t: Arm::Treated, y: a + beta2 * b + e }
            })
            .collect();
        Dataset::new(vec!["a".into(), "b".into()], rows).unwrap()
    }

    #[test]
    fn angles_round_trip() {
        for u in [vec![1.0, 0.0], vec![0.6, -0.8], vec![1.0, 2.0, -3.0], vec![0.5, 0.5, 0.5, -0.5], vec![-1.0, 1e-9, 4.0]] {
            let norm = u.iter().map(|v: &f64| v * v).sum::<f64>().sqrt();
            let back = direction(&angles_of(&u));
            for (a, b) in u.iter().zip(&back) {
                assert!((a / norm - b).abs() < 1e-12, "{u:?} -> {back:?}");
            }
        }
    }

    #[test]
    fn recovers_direction_small_sample() {
        let ds = single_index_data(300, 0.5, 1);
        let cfg = SingleIndexConfig { restarts: 2, ..Default::default() };
        let fit = fit_single_index(&ds, Arm::Treated, &cfg).unwrap();
        assert_eq!(fit.beta[0], 1.0);
        assert!((fit.beta[1] - 0.5).abs() < 0.25, "{:?}", fit.beta);
        let ratio = fit.h_stage2 / fit.h_stage1;
        assert!((ratio - 300f64.powf(-4.0 / 45.0)).abs() < 1e-15);
    }

    #[test]
    fn one_covariate_searches_bandwidth_only() {
        let rows = (0..60)
            .map(|i| Observation { x: vec![i as f64 / 10.0], t: Arm::Control, y: (i as f64 / 7.0).sin() })
            .collect();
        let ds = Dataset::new(vec!["x".into()], rows).unwrap();
        let fit = fit_single_index(&ds, Arm::Control, &SingleIndexConfig::default()).unwrap();
        assert_eq!(fit.beta, vec![1.0]);
        assert!(fit.h_stage1 > 0.0);
    }

    #[test]
    fn too_few_rows() {
        let ds = single_index_data(3, 0.5, 1);
        assert!(matches!(
            fit_single_index(&ds, Arm::Treated, &SingleIndexConfig::default()),
            Err(Error::DegenerateFit(_))
        ));
    }

    #[test]
    fn single_training_point_is_a_step() {
        let fit = OutcomeFit::from_parts(Arm::Treated, vec![1.0], 1.0, &[vec![0.0]], &[2.5]).unwrap();
        assert_eq!(fit.cond_cdf(2.4999, &[3.0]).unwrap(), 0.0);
        assert_eq!(fit.cond_cdf(2.5, &[3.0]).unwrap(), 1.0);
        assert_eq!(fit.moment(|y| Ok(y), &[0.0]).unwrap(), 2.5);
    }

    #[test]
    fn two_point_moments() {
        // equal distances give equal weights
        let fit = OutcomeFit::from_parts(Arm::Treated, vec![1.0], 1.0, &[vec![-1.0], vec![1.0]], &[0.0, 1.0]).unwrap();
        let spec = TiltSpec::new(Arm::Treated, 2f64.ln(), TiltFunction::Identity).unwrap();
        assert!((fit.moment(|_| Ok(1.0), &[0.0]).unwrap() - 1.0).abs() < 1e-15);
        assert!((fit.moment(|y| Ok((y * 2f64.ln()).exp()), &[0.0]).unwrap() - 1.5).abs() < 1e-14);
        assert!((fit.c_factor(&spec, &[0.0]).unwrap() - 1.5).abs() < 1e-14);
        assert!((fit.tilted_mean(&spec, &[0.0]).unwrap() - 2.0 / 3.0).abs() < 1e-14);
        assert_eq!(fit.c_factor(&spec.with_gamma(0.0), &[0.0]).unwrap(), 1.0);
    }

    #[test]
    fn point_mass_outcome() {
        let xs: Vec<Vec<f64>> = (0..5).map(|i| vec![i as f64]).collect();
        let fit = OutcomeFit::from_parts(Arm::Treated, vec![1.0], 0.7, &xs, &[3.0; 5]).unwrap();
        let spec = TiltSpec::new(Arm::Treated, 0.4, TiltFunction::Identity).unwrap();
        assert!((fit.c_factor(&spec, &[1.0]).unwrap() - 1.2f64.exp()).abs() < 1e-12);
        assert!((fit.tilted_mean(&spec, &[1.0]).unwrap() - 3.0).abs() < 1e-12);
    }

    #[test]
    fn far_query_falls_back_to_marginal() {
        let fit = OutcomeFit::from_parts(Arm::Treated, vec![1.0], 0.01, &[vec![0.0], vec![1.0]], &[0.0, 1.0]).unwrap();
        assert_eq!(fit.cond_cdf(0.0, &[1e6]).unwrap(), 0.5);
    }

    #[test]
    fn accuracy_improves_with_n() {
        // one covariate, so the search is over the bandwidth only
        let truth = |y: f64, a: f64| norm_cdf(y - a);
        let mut errs = Vec::new();
        for (n, seed) in [(500, 1), (2000, 2), (8000, 3)] {
            let mut rng = rng_from(seed, &[]);
            let rows = (0..n)
                .map(|_| {
                    let a: f64 = rng.sample(StandardNormal);
                    let e: f64 = rng.sample(StandardNormal);
                    Observation { x: vec![a], t: Arm::Treated, y: a + e }
                })
                .collect();
            let ds = Dataset::new(vec!["a".into()], rows).unwrap();
            let cfg = SingleIndexConfig { h_grid_size: 6, ..Default::default() };
            let fit = fit_single_index(&ds, Arm::Treated, &cfg).unwrap();
            let mut worst: f64 = 0.0;
            for a in [-1.0, -0.5, 0.0, 0.5, 1.0] {
                for k in 0..=20 {
                    let y = a - 2.5 + 0.25 * k as f64;
                    worst = worst.max((fit.cond_cdf(y, &[a]).unwrap() - truth(y, a)).abs());
                }
            }
            errs.push(worst);
        }
        assert!(errs[0] > errs[1] && errs[1] > errs[2], "{errs:?}");
    }

    fn small_fit() -> OutcomeFit {
        let xs: Vec<Vec<f64>> = (0..40).map(|i| vec![(i as f64 * 0.7).sin() * 2.0]).collect();
        let ys: Vec<f64> = (0..40).map(|i| (i as f64 * 1.3).cos() * 10.0 + i as f64 * 0.1).collect();
        OutcomeFit::from_parts(Arm::Treated, vec![1.0], 0.5, &xs, &ys).unwrap()
    }

    proptest! {
        #[test]
        fn cdf_monotone_with_limits(x in -3f64..3.0, a in -15f64..15.0, b in -15f64..15.0) {
            let fit = small_fit();
            let (lo, hi) = (a.min(b), a.max(b));
            prop_assert!(fit.cond_cdf(lo, &[x]).unwrap() <= fit.cond_cdf(hi, &[x]).unwrap() + 1e-15);
            prop_assert_eq!(fit.cond_cdf(-1e9, &[x]).unwrap(), 0.0);
            prop_assert!((fit.cond_cdf(1e9, &[x]).unwrap() - 1.0).abs() < 1e-12);
        }

        #[test]
        fn tilted_mean_bounded_and_monotone(x in -3f64..3.0, g1 in -2f64..2.0, g2 in -2f64..2.0) {
            let fit = small_fit();
            let spec = TiltSpec::new(Arm::Treated, 0.0, TiltFunction::Identity).unwrap();
            let (lo, hi) = (g1.min(g2), g1.max(g2));
            let m_lo = fit.tilted_mean(&spec.with_gamma(lo), &[x]).unwrap();
            let m_hi = fit.tilted_mean(&spec.with_gamma(hi), &[x]).unwrap();
            let (ymin, ymax) = fit.training_outcomes().iter().fold((f64::MAX, f64::MIN), |(a, b), &y| (a.min(y), b.max(y)));
            prop_assert!(m_lo >= ymin - 1e-9 && m_hi <= ymax + 1e-9);
            prop_assert!(m_lo <= m_hi + 1e-9);
        }
    }
}
