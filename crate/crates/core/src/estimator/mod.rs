//! Identification functional, efficient influence function, one-step and
//! cross-fit estimators, and their diagnostics.

mod crossfit;
mod grid;
mod huber;

use crate::dataset::{Arm, Dataset, Observation};
use crate::error::{Error, Result};
use crate::nuisance::{Nuisance, TiltedMoments};
use crate::tilting::TiltSpec;

pub use crossfit::{
    crossfit_estimate, report_from, variance_psi, ArmResult, CiRow, CrossFit, CrossFitOptions, EstimateReport,
    FoldArm, FoldDiagnostics, PairResult, Quantity, CLIP_WARNING_RATE,
};
pub use grid::{sensitivity_grid, CellEstimate, Classification, GridCell, GridReport};
pub use huber::{huber_threshold, huberized_mean, HuberSummary};

fn pi_pair(pi1: f64, t: Arm) -> (f64, f64) {
    match t {
        Arm::Treated => (pi1, 1.0 - pi1),
        Arm::Control => (1.0 - pi1, pi1),
    }
}

/// Integrand of the identification formula at one covariate value:
/// `mu_t(Y) pi_t + tilted_mean pi_{1-t}`.
pub fn plugin_term(pi1: f64, t: Arm, tm: &TiltedMoments) -> f64 {
    let (pt, po) = pi_pair(pi1, t);
    tm.mean * pt + tm.tilted_mean * po
}

/// `nu_t = phi_t + psi_t` for one observation, written with the tilt
/// ratio `e^{gamma s(Y)} / C_t(x)` so nothing overflows:
/// `I(T=t){Y + (pi_{1-t}/pi_t) r (Y - m)} + I(T=1-t) m` where `m` is the
/// tilted mean.
pub fn nu_value(o: &Observation, pi1: f64, tm: &TiltedMoments, spec: &TiltSpec) -> Result<f64> {
    let t = spec.arm;
    let v = if o.t == t {
        let (pt, po) = pi_pair(pi1, t);
        let r = (spec.exponent(o.y)? - tm.log_c).exp();
        o.y + po / pt * r * (o.y - tm.tilted_mean)
    } else {
        tm.tilted_mean
    };
    if !v.is_finite() {
        return Err(Error::Numerical(format!("influence value is {v} at y = {}", o.y)));
    }
    Ok(v)
}

/// Efficient influence function value given nuisance values at `o.x`.
pub fn eif_value(o: &Observation, pi1: f64, tm: &TiltedMoments, spec: &TiltSpec, psi: f64) -> Result<f64> {
    Ok(nu_value(o, pi1, tm, spec)? - psi)
}

/// Plug-in value of the identification formula with `X` distributed as the
/// empirical law of `xs`.
pub fn psi_plugin(nb: &dyn Nuisance, spec: &TiltSpec, xs: &[Vec<f64>]) -> Result<f64> {
    let w = vec![1.0 / xs.len() as f64; xs.len()];
    psi_plugin_weighted(nb, spec, xs, &w)
}

/// Plug-in value with `X` distributed on `xs` with probabilities `weights`.
pub fn psi_plugin_weighted(nb: &dyn Nuisance, spec: &TiltSpec, xs: &[Vec<f64>], weights: &[f64]) -> Result<f64> {
    if xs.is_empty() || xs.len() != weights.len() {
        return Err(Error::Domain("covariate sample must be nonempty and match its weights".into()));
    }
    let mut s = 0.0;
    for (x, w) in xs.iter().zip(weights) {
        let tm = nb.law(spec.arm, x)?.tilted(spec)?;
        s += w * plugin_term(nb.pi1(x)?, spec.arm, &tm);
    }
    Ok(s)
}

/// `phi_t(P)(o)` under the nuisances `nb`.
pub fn eif(o: &Observation, nb: &dyn Nuisance, spec: &TiltSpec, psi: f64) -> Result<f64> {
    let tm = nb.law(spec.arm, &o.x)?.tilted(spec)?;
    eif_value(o, nb.pi1(&o.x)?, &tm, spec, psi)
}

/// One-step estimate: plug-in over `eval`'s covariates plus the mean
/// influence value, i.e. the mean of `nu_t` over `eval`.
pub fn onestep(nb: &dyn Nuisance, spec: &TiltSpec, eval: &Dataset) -> Result<f64> {
    let mut s = 0.0;
    for o in eval.rows() {
        let tm = nb.law(spec.arm, &o.x)?.tilted(spec)?;
        s += nu_value(o, nb.pi1(&o.x)?, &tm, spec)?;
    }
    Ok(s / eval.n() as f64)
}

/// Second-order remainder of the von Mises expansion of `psi_t` around
/// `nb_true`, averaged over `xs`:
/// `(m - m~)/pi~_t * {pi~_{1-t} pi_t C/C~ - pi_{1-t} pi~_t}` with `m` the
/// tilted mean and `C` the tilt normalizer.
pub fn remainder(nb_tilde: &dyn Nuisance, nb_true: &dyn Nuisance, spec: &TiltSpec, xs: &[Vec<f64>]) -> Result<f64> {
    let w = vec![1.0 / xs.len() as f64; xs.len()];
    remainder_weighted(nb_tilde, nb_true, spec, xs, &w)
}

pub fn remainder_weighted(
    nb_tilde: &dyn Nuisance,
    nb_true: &dyn Nuisance,
    spec: &TiltSpec,
    xs: &[Vec<f64>],
    weights: &[f64],
) -> Result<f64> {
    let t = spec.arm;
    let mut s = 0.0;
    for (x, w) in xs.iter().zip(weights) {
        let tm_t = nb_tilde.law(t, x)?.tilted(spec)?;
        let tm = nb_true.law(t, x)?.tilted(spec)?;
        let (pt_t, po_t) = pi_pair(nb_tilde.pi1(x)?, t);
        let (pt, po) = pi_pair(nb_true.pi1(x)?, t);
        if !(pt_t > 0.0) {
            return Err(Error::Domain(format!("propensity of arm {t} vanishes at {x:?}")));
        }
        let c_ratio = (tm.log_c - tm_t.log_c).exp();
        s += w * (tm.tilted_mean - tm_t.tilted_mean) / pt_t * (po_t * pt * c_ratio - po * pt_t);
    }
    Ok(s)
}

/// Implied `E[Y(t) | T = 1-t]` backed out of an estimate of `E[Y(t)]`:
/// `(psi - E_n[Y | T=t] P_n[T=t]) / P_n[T=1-t]`.
pub fn induced_mean(psi_hat: f64, ds: &Dataset, t: Arm) -> Result<f64> {
    let n_t = ds.arm_count(t);
    let n_o = ds.n() - n_t;
    if n_t == 0 || n_o == 0 {
        return Err(Error::Domain("induced mean needs both arms observed".into()));
    }
    let n = ds.n() as f64;
    Ok((psi_hat - ds.arm_mean(t) * n_t as f64 / n) / (n_o as f64 / n))
}
