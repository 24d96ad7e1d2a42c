//! Cross-fit estimates over a grid of sensitivity parameters.

use std::io::Write;

use serde::Serialize;

use crate::bootstrap::CiMethod;
use crate::dataset::{Arm, Dataset, SplitPlan};
use crate::error::{Error, Result};
use crate::rng::derive_seed;
use crate::tilting::TiltSpec;

use super::crossfit::{intervals, CiRow, CrossFit, CrossFitOptions, PairResult, Quantity};

/// Sign of the effect interval. `Worse` means the whole interval lies below
/// zero, i.e. treatment lowers the outcome.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Classification {
    Worse,
    Better,
    Indeterminate,
}

impl Classification {
    pub fn of(lo: f64, hi: f64) -> Classification {
        if hi < 0.0 {
            Classification::Worse
        } else if lo > 0.0 {
            Classification::Better
        } else {
            Classification::Indeterminate
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Classification::Worse => "worse",
            Classification::Better => "better",
            Classification::Indeterminate => "indeterminate",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CellEstimate {
    pub psi1: f64,
    pub psi0: f64,
    pub ace: f64,
    /// Indexed by `Quantity::index`.
    pub se: [f64; 3],
    pub ci: Vec<CiRow>,
    pub classification: Classification,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GridCell {
    pub gamma1: f64,
    pub gamma0: f64,
    pub estimate: std::result::Result<CellEstimate, String>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GridReport {
    /// `gamma1` varies slowest.
    pub cells: Vec<GridCell>,
    pub method: CiMethod,
    pub clip_rate: f64,
    pub bootstrap_dropped: usize,
}

impl GridReport {
    pub fn failed(&self) -> usize {
        self.cells.iter().filter(|c| c.estimate.is_err()).count()
    }

    pub fn cell(&self, gamma1: f64, gamma0: f64) -> Option<&GridCell> {
        self.cells.iter().find(|c| c.gamma1 == gamma1 && c.gamma0 == gamma0)
    }

    /// One row per cell; failed cells carry `NaN` estimates and the
    /// classification `failed`.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["gamma1", "gamma0", "psi1", "psi0", "ace", "se_ace", "ci_method", "ci_lo", "ci_hi", "classification"])?;
        for c in &self.cells {
            let mut rec = vec![c.gamma1.to_string(), c.gamma0.to_string()];
            match &c.estimate {
                Ok(e) => {
                    let row = e.ci.iter().find(|r| r.quantity == Quantity::Ace && r.method == self.method);
                    let (lo, hi) = row.map_or((f64::NAN, f64::NAN), |r| (r.lo, r.hi));
                    rec.extend([e.psi1, e.psi0, e.ace, e.se[Quantity::Ace.index()]].map(|v| v.to_string()));
                    rec.push(self.method.name().into());
                    rec.extend([lo.to_string(), hi.to_string(), e.classification.name().into()]);
                }
                Err(_) => {
                    rec.extend(["NaN"; 4].map(String::from));
                    rec.push(self.method.name().into());
                    rec.extend(["NaN", "NaN", "failed"].map(String::from));
                }
            }
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Estimates at every `(gamma1, gamma0)` pair. Nuisances are fitted once
/// per fold and shared by all cells. A failing cell is recorded and the
/// rest continue; bootstrap intervals cover all successful cells with the
/// same resamples.
pub fn sensitivity_grid(
    ds: &Dataset,
    plan: &SplitPlan,
    gamma1: &[f64],
    gamma0: &[f64],
    base1: &TiltSpec,
    base0: &TiltSpec,
    opts: &CrossFitOptions,
) -> Result<GridReport> {
    if gamma1.is_empty() || gamma0.is_empty() {
        return Err(Error::Config("sensitivity grids must be nonempty".into()));
    }
    if base1.arm != Arm::Treated || base0.arm != Arm::Control {
        return Err(Error::Config("base1 must target arm 1 and base0 arm 0".into()));
    }
    opts.ci.validate()?;
    let cf = CrossFit::fit(ds, plan, &opts.nuisance)?;
    let specs1: Vec<TiltSpec> = gamma1.iter().map(|&g| base1.with_gamma(g)).collect();
    let specs0: Vec<TiltSpec> = gamma0.iter().map(|&g| base0.with_gamma(g)).collect();
    for s in specs1.iter().chain(&specs0) {
        s.validate()?;
    }
    let arm1 = cf.arm_many(ds, &specs1)?;
    let arm0 = cf.arm_many(ds, &specs0)?;

    let mut pairs = Vec::new();
    let mut results: Vec<std::result::Result<PairResult, String>> = Vec::new();
    for (i, r1) in arm1.iter().enumerate() {
        for (j, r0) in arm0.iter().enumerate() {
            let res = match (r1, r0) {
                (Ok(a1), Ok(a0)) => PairResult::new(a0.clone(), a1.clone()).map_err(|e| e.to_string()),
                (Err(e), _) | (_, Err(e)) => Err(e.to_string()),
            };
            match &res {
                Ok(_) => pairs.push((specs1[i].clone(), specs0[j].clone())),
                Err(e) => log::warn!("grid cell ({}, {}) failed: {e}", gamma1[i], gamma0[j]),
            }
            results.push(res);
        }
    }

    let full: Vec<_> = results.iter().flatten().flat_map(|p| p.estimates()).collect();
    let mut ci_opts = opts.clone();
    ci_opts.ci.seed = derive_seed(opts.ci.seed, &[plan.seed]);
    let (rows, dropped) = if pairs.is_empty() { (Vec::new(), 0) } else { intervals(ds, plan.k, &ci_opts, &pairs, &full)? };
    let mut rows = rows.into_iter();

    let mut cells = Vec::with_capacity(results.len());
    for (idx, res) in results.into_iter().enumerate() {
        let (g1, g0) = (gamma1[idx / gamma0.len()], gamma0[idx % gamma0.len()]);
        let estimate = res.map(|p| {
            let ci = rows.next().expect("one interval set per successful cell");
            let primary = ci.iter().find(|r| r.quantity == Quantity::Ace && r.method == opts.ci.method);
            let classification =
                primary.map_or(Classification::Indeterminate, |r| Classification::of(r.lo, r.hi));
            CellEstimate { psi1: p.arms[1].psi, psi0: p.arms[0].psi, ace: p.ace, se: p.se, ci, classification }
        });
        cells.push(GridCell { gamma1: g1, gamma0: g0, estimate });
    }
    Ok(GridReport { cells, method: opts.ci.method, clip_rate: cf.clip_rate(), bootstrap_dropped: dropped })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn classification_by_sign() {
        assert_eq!(Classification::of(-3.0, -1.0), Classification::Worse);
        assert_eq!(Classification::of(1.0, 3.0), Classification::Better);
        assert_eq!(Classification::of(-1.0, 3.0), Classification::Indeterminate);
        assert_eq!(Classification::of(0.0, 3.0), Classification::Indeterminate);
    }
}
