//! Goodness of fit of the nuisance models: Kolmogorov–Smirnov comparisons
//! of observed and model-generated subgroup distributions.

use std::collections::BTreeMap;
use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{Arm, Dataset, Observation};
use crate::error::{Error, Result};
use crate::nuisance::{DiscreteLaw, Nuisance};
use crate::propensity::penalized_irls;
use crate::rng::rng_from;
use crate::stats::logistic;

/// `sup_y |F_a(y) - F_b(y)|` for the empirical CDFs of `a` and `b`.
pub fn ks_statistic(a: &[f64], b: &[f64]) -> f64 {
    assert!(!a.is_empty() && !b.is_empty(), "ks_statistic needs nonempty samples");
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j, mut d) = (0, 0, 0.0f64);
    while i < a.len() && j < b.len() {
        let y = a[i].min(b[j]);
        while i < a.len() && a[i] <= y {
            i += 1;
        }
        while j < b.len() && b[j] <= y {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    d
}

/// Draws `n` rows: `X` from the empirical law of `xs`, `T` from the fitted
/// propensity and `Y` by inverse-CDF sampling from the fitted conditional
/// law of the drawn arm. Column metadata is copied from `template`.
pub fn generate_semiparametric(
    nb: &dyn Nuisance,
    template: &Dataset,
    xs: &[Vec<f64>],
    n: usize,
    seed: u64,
) -> Result<Dataset> {
    if n == 0 || xs.is_empty() {
        return Err(Error::Config("need n >= 1 and a nonempty covariate sample".into()));
    }
    let mut rng = rng_from(seed, &[0x5345_4D49]);
    let draws: Vec<(usize, f64, f64)> =
        (0..n).map(|_| (rng.random_range(0..xs.len()), rng.random::<f64>(), rng.random::<f64>())).collect();
    let mut used = vec![false; xs.len()];
    for d in &draws {
        used[d.0] = true;
    }
    type Laws = Option<(f64, [DiscreteLaw; 2])>;
    let laws: Vec<Laws> = xs
        .par_iter()
        .zip(used.par_iter())
        .map(|(x, &u)| -> Result<Laws> {
            if !u {
                return Ok(None);
            }
            let p1 = nb.pi1(x)?;
            Ok(Some((p1, [nb.law(Arm::Control, x)?.sorted(), nb.law(Arm::Treated, x)?.sorted()])))
        })
        .collect::<Result<_>>()?;
    let rows = draws
        .iter()
        .map(|&(i, ut, uy)| {
            let (p1, ls) = laws[i].as_ref().expect("law cached for drawn index");
            let t = if ut < *p1 { Arm::Treated } else { Arm::Control };
            Observation { x: xs[i].clone(), t, y: ls[t.index()].sorted_quantile(uy) }
        })
        .collect();
    template.with_rows(rows)
}

/// Logistic propensity and per-arm normal linear outcome models, linear in
/// the covariates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParametricBaseline {
    /// Intercept first.
    pub propensity: Vec<f64>,
    /// Indexed by `Arm::index`; intercept first.
    pub outcome: [Vec<f64>; 2],
    pub sigma: [f64; 2],
}

fn design(rows: &[&Observation]) -> DMatrix<f64> {
    let p = rows.first().map_or(0, |r| r.x.len());
    DMatrix::from_fn(rows.len(), p + 1, |i, j| if j == 0 { 1.0 } else { rows[i].x[j - 1] })
}

impl ParametricBaseline {
    pub fn fit(ds: &Dataset) -> Result<ParametricBaseline> {
        let all: Vec<&Observation> = ds.rows().iter().collect();
        let x = design(&all);
        let p = x.ncols();
        let y: Vec<f64> = all.iter().map(|r| f64::from(u8::from(r.t))).collect();
        let mut s = DMatrix::identity(p, p) * 1e-8;
        s[(0, 0)] = 0.0;
        let prop = penalized_irls(&x, &y, &s, None, 100, 1e-8)?;
        let mut outcome = [Vec::new(), Vec::new()];
        let mut sigma = [0.0; 2];
        for t in Arm::BOTH {
            let rows: Vec<&Observation> = all.iter().copied().filter(|r| r.t == t).collect();
            if rows.len() <= p {
                return Err(Error::DegenerateFit(format!("arm {t} has too few rows for a linear model")));
            }
            let xt = design(&rows);
            let yt = DVector::from_iterator(rows.len(), rows.iter().map(|r| r.y));
            let b = (xt.transpose() * &xt)
                .cholesky()
                .ok_or_else(|| Error::DegenerateFit(format!("collinear covariates in arm {t}")))?
                .solve(&(xt.transpose() * &yt));
            let resid = &yt - &xt * &b;
            sigma[t.index()] = (resid.norm_squared() / (rows.len() - p) as f64).sqrt();
            outcome[t.index()] = b.iter().copied().collect();
        }
        Ok(ParametricBaseline { propensity: prop.beta.iter().copied().collect(), outcome, sigma })
    }

    fn linear(coef: &[f64], x: &[f64]) -> f64 {
        coef[0] + coef[1..].iter().zip(x).map(|(a, b)| a * b).sum::<f64>()
    }

    pub fn generate(&self, template: &Dataset, xs: &[Vec<f64>], n: usize, seed: u64) -> Result<Dataset> {
        if n == 0 || xs.is_empty() {
            return Err(Error::Config("need n >= 1 and a nonempty covariate sample".into()));
        }
        let mut rng = rng_from(seed, &[0x5041_5241]);
        let rows = (0..n)
            .map(|_| {
                let x = &xs[rng.random_range(0..xs.len())];
                let t = if rng.random::<f64>() < logistic(Self::linear(&self.propensity, x)) {
                    Arm::Treated
                } else {
                    Arm::Control
                };
                let z: f64 = rng.sample(StandardNormal);
                let y = Self::linear(&self.outcome[t.index()], x) + self.sigma[t.index()] * z;
                Observation { x: x.clone(), t, y }
            })
            .collect();
        template.with_rows(rows)
    }
}

/// Condition on one named covariate: a closed numeric range or a set of
/// categorical levels.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Condition {
    Levels { levels: Vec<String> },
    Range {
        #[serde(default = "neg_inf")]
        min: f64,
        #[serde(default = "pos_inf")]
        max: f64,
    },
}

fn neg_inf() -> f64 {
    f64::NEG_INFINITY
}

fn pos_inf() -> f64 {
    f64::INFINITY
}

/// Conjunction of conditions keyed by variable name.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Subgroup {
    pub name: String,
    pub conditions: BTreeMap<String, Condition>,
}

impl Subgroup {
    /// Rows of `ds` satisfying every condition.
    pub fn select(&self, ds: &Dataset) -> Result<Vec<usize>> {
        let mut tests: Vec<Box<dyn Fn(usize) -> bool + '_>> = Vec::new();
        for (var, cond) in &self.conditions {
            match cond {
                Condition::Range { min, max } => {
                    let j = ds
                        .covariate_index(var)
                        .ok_or_else(|| Error::Config(format!("subgroup {}: unknown numeric covariate {var}", self.name)))?;
                    let (lo, hi) = (*min, *max);
                    tests.push(Box::new(move |i| {
                        let v = ds.rows()[i].x[j];
                        lo <= v && v <= hi
                    }));
                }
                Condition::Levels { levels } => {
                    let g = ds
                        .group_index(var)
                        .ok_or_else(|| Error::Config(format!("subgroup {}: unknown categorical {var}", self.name)))?;
                    tests.push(Box::new(move |i| levels.iter().any(|l| l == ds.level_of(i, g))));
                }
            }
        }
        Ok((0..ds.n()).filter(|&i| tests.iter().all(|f| f(i))).collect())
    }
}

/// One subgroup's comparison; `None` marks a quantity that cannot be
/// evaluated because a sample is empty.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GofRow {
    pub subgroup: String,
    pub n_observed: usize,
    pub n_synthetic: usize,
    /// `|P_obs(T=1 | G) - P_syn(T=1 | G)|`
    pub treated_fraction_diff: Option<f64>,
    /// KS distance of outcome distributions, indexed by `Arm::index`.
    pub ks_outcome: [Option<f64>; 2],
}

impl GofRow {
    pub fn evaluable(&self) -> bool {
        self.treated_fraction_diff.is_some()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GofReport {
    pub rows: Vec<GofRow>,
    pub note: String,
}

const TREATMENT_NOTE: &str = "treatment column is the absolute difference of subgroup treated fractions";

impl GofReport {
    /// Median of all evaluable outcome KS statistics.
    pub fn median_ks(&self) -> Option<f64> {
        let v: Vec<f64> = self.rows.iter().flat_map(|r| r.ks_outcome.iter().flatten().copied()).collect();
        if v.is_empty() {
            None
        } else {
            Some(crate::stats::quantile(&v, 0.5))
        }
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record([
            "subgroup",
            "n_observed",
            "n_synthetic",
            "treated_fraction_abs_diff",
            "ks_outcome_treated",
            "ks_outcome_control",
        ])?;
        let f = |v: Option<f64>| v.map_or_else(|| "NA".to_string(), |x| x.to_string());
        for r in &self.rows {
            w.write_record([
                r.subgroup.clone(),
                r.n_observed.to_string(),
                r.n_synthetic.to_string(),
                f(r.treated_fraction_diff),
                f(r.ks_outcome[1]),
                f(r.ks_outcome[0]),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Compares `observed` and `synthetic` within each subgroup.
pub fn gof_compare(observed: &Dataset, synthetic: &Dataset, subgroups: &[Subgroup]) -> Result<GofReport> {
    if subgroups.is_empty() {
        return Err(Error::Config("at least one subgroup is required".into()));
    }
    let rows = subgroups
        .par_iter()
        .map(|g| -> Result<GofRow> {
            let a = g.select(observed)?;
            let b = g.select(synthetic)?;
            let treated = |ds: &Dataset, idx: &[usize]| {
                idx.iter().filter(|&&i| ds.rows()[i].t == Arm::Treated).count() as f64 / idx.len() as f64
            };
            let outcomes = |ds: &Dataset, idx: &[usize], t: Arm| -> Vec<f64> {
                idx.iter().map(|&i| &ds.rows()[i]).filter(|r| r.t == t).map(|r| r.y).collect()
            };
            let evaluable = !a.is_empty() && !b.is_empty();
            let ks = [Arm::Control, Arm::Treated].map(|t| {
                let (ya, yb) = (outcomes(observed, &a, t), outcomes(synthetic, &b, t));
                (evaluable && !ya.is_empty() && !yb.is_empty()).then(|| ks_statistic(&ya, &yb))
            });
            Ok(GofRow {
                subgroup: g.name.clone(),
                n_observed: a.len(),
                n_synthetic: b.len(),
                treated_fraction_diff: evaluable.then(|| (treated(observed, &a) - treated(synthetic, &b)).abs()),
                ks_outcome: ks,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(GofReport { rows, note: TREATMENT_NOTE.into() })
}

/// Generates `n_synth` rows from `nb` over the covariates of `ds` and
/// compares them with `ds` within each subgroup.
pub fn gof_report(ds: &Dataset, nb: &dyn Nuisance, subgroups: &[Subgroup], n_synth: usize, seed: u64) -> Result<GofReport> {
    let synth = generate_semiparametric(nb, ds, &ds.covariate_rows(), n_synth, seed)?;
    gof_compare(ds, &synth, subgroups)
}
