//! Cross-fit, Huberized one-step estimation of both arm means and the
//! average causal effect.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bootstrap::{double_bootstrap, normal_ci, percentile_ci, CiMethod, CiSpec, Estimate};
use crate::dataset::{make_folds, Arm, Dataset, SplitPlan};
use crate::error::{Error, Result};
use crate::nuisance::{Nuisance, NuisanceBundle, NuisanceConfig};
use crate::rng::derive_seed;
use crate::tilting::TiltSpec;

use super::huber::huberized_mean;
use super::{nu_value, plugin_term};

/// Clip rate above which a report carries a positivity warning.
pub const CLIP_WARNING_RATE: f64 = 0.10;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CrossFitOptions {
    pub nuisance: NuisanceConfig,
    pub ci: CiSpec,
}

impl Default for CrossFitOptions {
    fn default() -> Self {
        CrossFitOptions { nuisance: NuisanceConfig::default(), ci: CiSpec::default() }
    }
}

struct FoldCache {
    rows: Vec<usize>,
    pi1: Vec<f64>,
    clipped: usize,
}

/// Nuisances fitted on each fold's complement, with the fold's propensity
/// predictions cached. Nothing here depends on the tilt, so one `CrossFit`
/// serves a whole sensitivity grid.
pub struct CrossFit<N = NuisanceBundle> {
    plan: SplitPlan,
    nuisances: Vec<N>,
    folds: Vec<FoldCache>,
}

impl CrossFit<NuisanceBundle> {
    /// Fits one bundle per fold on the fold's complement.
    pub fn fit(ds: &Dataset, plan: &SplitPlan, cfg: &NuisanceConfig) -> Result<CrossFit<NuisanceBundle>> {
        plan.validate_for(ds)?;
        let nuisances = (0..plan.k)
            .into_par_iter()
            .map(|k| {
                NuisanceBundle::fit(&ds.subset(&plan.training_rows(k)), cfg)
                    .map_err(|e| Error::Fold { fold: k, source: Box::new(e) })
            })
            .collect::<Result<Vec<_>>>()?;
        CrossFit::from_nuisances(ds, plan, nuisances)
    }

    pub fn bundles(&self) -> &[NuisanceBundle] {
        &self.nuisances
    }
}

impl<N: Nuisance> CrossFit<N> {
    /// Uses externally supplied nuisances, one per fold.
    pub fn from_nuisances(ds: &Dataset, plan: &SplitPlan, nuisances: Vec<N>) -> Result<CrossFit<N>> {
        plan.validate_for(ds)?;
        if nuisances.len() != plan.k {
            return Err(Error::Config(format!("{} nuisances for {} folds", nuisances.len(), plan.k)));
        }
        let mut folds = Vec::with_capacity(plan.k);
        for (k, nb) in nuisances.iter().enumerate() {
            let rows = plan.fold_rows(k);
            let mut pi1 = Vec::with_capacity(rows.len());
            let mut clipped = 0;
            for &i in &rows {
                let (p, c) = nb.pi1_clipped(&ds.rows()[i].x).map_err(|e| Error::Fold { fold: k, source: Box::new(e) })?;
                pi1.push(p);
                clipped += usize::from(c);
            }
            folds.push(FoldCache { rows, pi1, clipped });
        }
        Ok(CrossFit { plan: plan.clone(), nuisances, folds })
    }

    pub fn plan(&self) -> &SplitPlan {
        &self.plan
    }

    pub fn nuisances(&self) -> &[N] {
        &self.nuisances
    }

    /// Share of held-out propensity predictions that hit the clip bounds.
    pub fn clip_rate(&self) -> f64 {
        let n: usize = self.folds.iter().map(|f| f.rows.len()).sum();
        self.folds.iter().map(|f| f.clipped).sum::<usize>() as f64 / n as f64
    }

    pub fn clipped_per_fold(&self) -> Vec<usize> {
        self.folds.iter().map(|f| f.clipped).collect()
    }

    /// Cross-fit estimates for every spec in `specs`, all of which must
    /// concern the same arm. Each conditional law is built once per row and
    /// reused across specs; failures are reported per spec.
    pub fn arm_many(&self, ds: &Dataset, specs: &[TiltSpec]) -> Result<Vec<Result<ArmResult>>> {
        let Some(first) = specs.first() else {
            return Ok(Vec::new());
        };
        let t = first.arm;
        if specs.iter().any(|s| s.arm != t) {
            return Err(Error::Config("arm_many needs specs for a single arm".into()));
        }
        let m = specs.len();
        // per fold: per spec, (nu values, plug-in terms) or the first error
        type Cols = Vec<std::result::Result<(Vec<f64>, Vec<f64>), String>>;
        let per_fold: Vec<Cols> = self
            .folds
            .par_iter()
            .zip(self.nuisances.par_iter())
            .enumerate()
            .map(|(k, (fold, nb))| -> Result<Cols> {
                let mut cols: Cols = vec![Ok((Vec::with_capacity(fold.rows.len()), Vec::with_capacity(fold.rows.len()))); m];
                for (&i, &p1) in fold.rows.iter().zip(&fold.pi1) {
                    let o = &ds.rows()[i];
                    let law = nb.law(t, &o.x).map_err(|e| Error::Fold { fold: k, source: Box::new(e) })?;
                    for (s, col) in specs.iter().zip(cols.iter_mut()) {
                        let Ok((nus, plugs)) = col else { continue };
                        let step = law.tilted(s).and_then(|tm| Ok((nu_value(o, p1, &tm, s)?, plugin_term(p1, t, &tm))));
                        match step {
                            Ok((nu, pl)) => {
                                nus.push(nu);
                                plugs.push(pl);
                            }
                            Err(e) => *col = Err(format!("fold {k}: {e}")),
                        }
                    }
                }
                Ok(cols)
            })
            .collect::<Result<Vec<_>>>()?;

        let n = ds.n();
        let mut out = Vec::with_capacity(m);
        for (j, spec) in specs.iter().enumerate() {
            if let Some(Err(msg)) = per_fold.iter().map(|c| &c[j]).find(|c| c.is_err()) {
                out.push(Err(Error::Numerical(format!("gamma = {}: {msg}", spec.gamma))));
                continue;
            }
            let mut nu = vec![0.0; n];
            let mut phi = vec![0.0; n];
            let mut folds = Vec::with_capacity(self.plan.k);
            for (fold, cols) in self.folds.iter().zip(&per_fold) {
                let (nus, plugs) = cols[j].as_ref().expect("checked above");
                let h = huberized_mean(nus);
                let plugin = plugs.iter().sum::<f64>() / plugs.len() as f64;
                for (&i, &v) in fold.rows.iter().zip(nus) {
                    nu[i] = v;
                    phi[i] = v - plugin;
                }
                folds.push(FoldArm { estimate: h.mean, plugin, tau: h.tau, truncated: h.truncated, n: nus.len() });
            }
            let psi = folds.iter().map(|f| f.estimate).sum::<f64>() / folds.len() as f64;
            let var = variance_psi(&[phi.as_slice()]);
            out.push(Ok(ArmResult { spec: spec.clone(), psi, se: (var / n as f64).sqrt(), var, nu, phi, per_fold: folds }));
        }
        Ok(out)
    }

    pub fn arm(&self, ds: &Dataset, spec: &TiltSpec) -> Result<ArmResult> {
        self.arm_many(ds, std::slice::from_ref(spec))?.pop().expect("one spec")
    }

    /// Point estimates and standard errors of `psi_0`, `psi_1` and the ACE.
    pub fn pair(&self, ds: &Dataset, spec1: &TiltSpec, spec0: &TiltSpec) -> Result<PairResult> {
        check_arms(spec1, spec0)?;
        PairResult::new(self.arm(ds, spec0)?, self.arm(ds, spec1)?)
    }
}

fn check_arms(spec1: &TiltSpec, spec0: &TiltSpec) -> Result<()> {
    if spec1.arm != Arm::Treated || spec0.arm != Arm::Control {
        return Err(Error::Config("spec1 must target arm 1 and spec0 arm 0".into()));
    }
    Ok(())
}

/// `(1/n) sum phi^2` over all folds' influence values.
pub fn variance_psi(per_fold: &[&[f64]]) -> f64 {
    let n: usize = per_fold.iter().map(|f| f.len()).sum();
    if n == 0 {
        return 0.0;
    }
    per_fold.iter().flat_map(|f| f.iter()).map(|v| v * v).sum::<f64>() / n as f64
}

/// Held-out estimates for one arm and one tilt.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ArmResult {
    pub spec: TiltSpec,
    pub psi: f64,
    pub var: f64,
    pub se: f64,
    /// `nu_t` per row of the dataset.
    #[serde(skip)]
    pub nu: Vec<f64>,
    /// `nu_t` minus its fold's plug-in value, per row.
    #[serde(skip)]
    pub phi: Vec<f64>,
    pub per_fold: Vec<FoldArm>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FoldArm {
    /// Huberized fold mean of `nu_t`.
    pub estimate: f64,
    pub plugin: f64,
    pub tau: f64,
    pub truncated: usize,
    pub n: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Quantity {
    Psi0,
    Psi1,
    Ace,
}

impl Quantity {
    pub const ALL: [Quantity; 3] = [Quantity::Psi0, Quantity::Psi1, Quantity::Ace];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Quantity::Psi0 => "psi0",
            Quantity::Psi1 => "psi1",
            Quantity::Ace => "ace",
        }
    }
}

/// Both arms under one `(gamma_1, gamma_0)` pair.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PairResult {
    /// Indexed by `Arm::index`.
    pub arms: [ArmResult; 2],
    pub ace: f64,
    /// Indexed by `Quantity::index`.
    pub se: [f64; 3],
}

impl PairResult {
    pub fn new(arm0: ArmResult, arm1: ArmResult) -> Result<PairResult> {
        let diff: Vec<f64> = arm1.phi.iter().zip(&arm0.phi).map(|(a, b)| a - b).collect();
        let n = diff.len() as f64;
        let se_ace = (variance_psi(&[diff.as_slice()]) / n).sqrt();
        let ace = arm1.psi - arm0.psi;
        if !ace.is_finite() {
            return Err(Error::Numerical("non-finite effect estimate".into()));
        }
        Ok(PairResult { se: [arm0.se, arm1.se, se_ace], ace, arms: [arm0, arm1] })
    }

    pub fn value(&self, q: Quantity) -> f64 {
        match q {
            Quantity::Psi0 => self.arms[0].psi,
            Quantity::Psi1 => self.arms[1].psi,
            Quantity::Ace => self.ace,
        }
    }

    pub fn estimates(&self) -> Vec<Estimate> {
        Quantity::ALL.iter().map(|&q| Estimate { value: self.value(q), se: self.se[q.index()] }).collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CiRow {
    pub quantity: Quantity,
    pub method: CiMethod,
    pub lo: f64,
    pub hi: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FoldDiagnostics {
    pub fold: usize,
    pub n: usize,
    pub clipped: usize,
    /// Indexed by `Arm::index`.
    pub arms: [FoldArm; 2],
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EstimateReport {
    /// Indexed by `Arm::index`.
    pub psi_tilde: [f64; 2],
    pub ace: f64,
    /// Indexed by `Quantity::index`.
    pub se: [f64; 3],
    pub ci: Vec<CiRow>,
    pub per_fold: Vec<FoldDiagnostics>,
    /// `[spec0, spec1]`.
    pub specs: [TiltSpec; 2],
    pub clip_rate: f64,
    pub bootstrap_dropped: usize,
    pub warnings: Vec<String>,
}

impl EstimateReport {
    pub fn ci(&self, q: Quantity, method: CiMethod) -> Option<&CiRow> {
        self.ci.iter().find(|r| r.quantity == q && r.method == method)
    }
}

/// Bootstrap statistic for many tilt pairs: resample rows, draw a fresh
/// fold plan from the resample, refit every nuisance and re-estimate.
pub(crate) fn pair_statistics<'a>(
    ds: &'a Dataset,
    k: usize,
    cfg: &'a NuisanceConfig,
    pairs: &'a [(TiltSpec, TiltSpec)],
) -> impl Fn(&[usize], u64) -> Result<Vec<Estimate>> + Sync + 'a {
    move |idx: &[usize], seed: u64| {
        let sub = ds.subset(idx);
        let plan = make_folds(&sub, k, seed)?;
        let cf = CrossFit::fit(&sub, &plan, cfg)?;
        let mut out = Vec::with_capacity(3 * pairs.len());
        for (s1, s0) in pairs {
            out.extend(cf.pair(&sub, s1, s0)?.estimates());
        }
        Ok(out)
    }
}

/// Interval rows for each pair in `full` (three statistics per pair) under
/// `spec`. Returns the rows per pair and the number of outer replicates
/// dropped.
pub(crate) fn intervals(
    ds: &Dataset,
    k: usize,
    opts: &CrossFitOptions,
    pairs: &[(TiltSpec, TiltSpec)],
    full: &[Estimate],
) -> Result<(Vec<Vec<CiRow>>, usize)> {
    let spec = &opts.ci;
    spec.validate()?;
    let mut rows: Vec<Vec<CiRow>> = full
        .chunks(3)
        .map(|c| {
            Quantity::ALL
                .iter()
                .map(|&q| {
                    let iv = normal_ci(c[q.index()].value, c[q.index()].se, spec.level);
                    CiRow { quantity: q, method: CiMethod::Normal, lo: iv.lo, hi: iv.hi }
                })
                .collect()
        })
        .collect();
    let stat = pair_statistics(ds, k, &opts.nuisance, pairs);
    let mut dropped = 0;
    match spec.method {
        CiMethod::Normal => {}
        CiMethod::Percentile => {
            let reps = crate::bootstrap::bootstrap_replicates(ds.n(), spec.b1, spec.seed, &stat);
            dropped = reps.iter().filter(|r| r.is_none()).count();
            for s in 0..full.len() {
                let vals: Vec<f64> = reps.iter().flatten().map(|r| r[s].value).collect();
                let (iv, _) = percentile_ci(&vals, spec.level)?;
                rows[s / 3].push(CiRow { quantity: Quantity::ALL[s % 3], method: CiMethod::Percentile, lo: iv.lo, hi: iv.hi });
            }
        }
        CiMethod::DoubleSymmetricT => {
            let res = double_bootstrap(ds.n(), full, &stat, spec)?;
            for (s, r) in res.iter().enumerate() {
                dropped = dropped.max(r.dropped);
                let q = Quantity::ALL[s % 3];
                if let Ok((iv, _)) = percentile_ci(&r.replicates, spec.level) {
                    rows[s / 3].push(CiRow { quantity: q, method: CiMethod::Percentile, lo: iv.lo, hi: iv.hi });
                }
                rows[s / 3].push(CiRow {
                    quantity: q,
                    method: CiMethod::DoubleSymmetricT,
                    lo: r.interval.lo,
                    hi: r.interval.hi,
                });
            }
        }
    }
    Ok((rows, dropped))
}

fn assemble<N: Nuisance>(cf: &CrossFit<N>, pair: PairResult, ci: Vec<CiRow>, dropped: usize) -> EstimateReport {
    let clip_rate = cf.clip_rate();
    let mut warnings = Vec::new();
    if clip_rate > CLIP_WARNING_RATE {
        let w = format!("{:.1}% of propensity predictions were clipped", 100.0 * clip_rate);
        log::warn!("{w}");
        warnings.push(w);
    }
    let per_fold = cf
        .folds
        .iter()
        .enumerate()
        .map(|(k, f)| FoldDiagnostics {
            fold: k,
            n: f.rows.len(),
            clipped: f.clipped,
            arms: [pair.arms[0].per_fold[k], pair.arms[1].per_fold[k]],
        })
        .collect();
    EstimateReport {
        psi_tilde: [pair.arms[0].psi, pair.arms[1].psi],
        ace: pair.ace,
        se: pair.se,
        ci,
        per_fold,
        specs: [pair.arms[0].spec.clone(), pair.arms[1].spec.clone()],
        clip_rate,
        bootstrap_dropped: dropped,
        warnings,
    }
}

/// Report built from an existing cross-fit; only normal intervals.
pub fn report_from<N: Nuisance>(cf: &CrossFit<N>, ds: &Dataset, spec1: &TiltSpec, spec0: &TiltSpec, level: f64) -> Result<EstimateReport> {
    let pair = cf.pair(ds, spec1, spec0)?;
    let ci = Quantity::ALL
        .iter()
        .map(|&q| {
            let iv = normal_ci(pair.value(q), pair.se[q.index()], level);
            CiRow { quantity: q, method: CiMethod::Normal, lo: iv.lo, hi: iv.hi }
        })
        .collect();
    Ok(assemble(cf, pair, ci, 0))
}

/// Cross-fit estimate of `psi_1`, `psi_0` and the ACE with standard errors
/// and the intervals requested in `opts.ci`. Bootstrap intervals refit the
/// nuisances on every resample with a fold plan drawn from the resample.
pub fn crossfit_estimate(
    ds: &Dataset,
    plan: &SplitPlan,
    spec1: &TiltSpec,
    spec0: &TiltSpec,
    opts: &CrossFitOptions,
) -> Result<EstimateReport> {
    check_arms(spec1, spec0)?;
    let cf = CrossFit::fit(ds, plan, &opts.nuisance)?;
    let pair = cf.pair(ds, spec1, spec0)?;
    let pairs = [(spec1.clone(), spec0.clone())];
    let mut ci_opts = opts.clone();
    ci_opts.ci.seed = derive_seed(opts.ci.seed, &[plan.seed]);
    let (mut rows, dropped) = intervals(ds, plan.k, &ci_opts, &pairs, &pair.estimates())?;
    Ok(assemble(&cf, pair, rows.pop().unwrap_or_default(), dropped))
}
