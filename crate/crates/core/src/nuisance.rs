//! Nuisance functions: the propensity `pi_t(x)` and the conditional outcome
//! law of `Y` given `T = t, X = x`.

use serde::{Deserialize, Serialize};

use crate::dataset::{Arm, Dataset};
use crate::error::{Error, Result};
use crate::outcome::{fit_single_index, OutcomeFit, SingleIndexConfig};
use crate::propensity::{fit_propensity, PropensityConfig, PropensityFit};
use crate::tilting::TiltSpec;

/// Moments of one conditional law needed by the identification formula.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TiltedMoments {
    /// `E[Y | T=t, X=x]`
    pub mean: f64,
    /// `E[Y e^{gamma s(Y)}] / E[e^{gamma s(Y)}]`
    pub tilted_mean: f64,
    /// `log E[e^{gamma s(Y)}]`
    pub log_c: f64,
}

impl TiltedMoments {
    pub fn c(&self) -> f64 {
        self.log_c.exp()
    }
}

/// Finitely supported law: atoms `ys` with nonnegative weights summing to one.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiscreteLaw {
    ys: Vec<f64>,
    ws: Vec<f64>,
}

impl DiscreteLaw {
    /// Normalizes `ws`; fails on negative, non-finite or all-zero weights.
    pub fn new(ys: Vec<f64>, ws: Vec<f64>) -> Result<DiscreteLaw> {
        if ys.len() != ws.len() || ys.is_empty() {
            return Err(Error::Domain("law needs matching, nonempty atoms and weights".into()));
        }
        if ws.iter().any(|w| !(w.is_finite() && *w >= 0.0)) || ys.iter().any(|y| !y.is_finite()) {
            return Err(Error::Domain("law weights must be finite and nonnegative".into()));
        }
        let total: f64 = ws.iter().sum();
        if total <= 0.0 {
            return Err(Error::Domain("law weights sum to zero".into()));
        }
        Ok(DiscreteLaw { ys, ws: ws.into_iter().map(|w| w / total).collect() })
    }

    /// Equal weights on `ys`.
    pub fn empirical(ys: Vec<f64>) -> Result<DiscreteLaw> {
        let w = vec![1.0; ys.len()];
        DiscreteLaw::new(ys, w)
    }

    pub fn atoms(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.ys.iter().copied().zip(self.ws.iter().copied())
    }

    pub fn len(&self) -> usize {
        self.ys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ys.is_empty()
    }

    pub fn mean(&self) -> f64 {
        self.atoms().map(|(y, w)| y * w).sum()
    }

    /// `sum_i g(y_i) w_i`.
    pub fn moment<F: FnMut(f64) -> Result<f64>>(&self, mut g: F) -> Result<f64> {
        let mut s = 0.0;
        for (y, w) in self.atoms() {
            s += g(y)? * w;
        }
        Ok(s)
    }

    /// `P(Y <= y)`.
    pub fn cdf(&self, y: f64) -> f64 {
        self.atoms().filter(|&(v, _)| v <= y).map(|(_, w)| w).sum::<f64>().min(1.0)
    }

    /// Tilted moments, computed with a log-sum-exp shift so large exponents
    /// below the overflow threshold stay finite.
    pub fn tilted(&self, spec: &TiltSpec) -> Result<TiltedMoments> {
        let mean = self.mean();
        if spec.gamma == 0.0 {
            return Ok(TiltedMoments { mean, tilted_mean: mean, log_c: 0.0 });
        }
        let mut es = Vec::with_capacity(self.ys.len());
        let mut top = f64::NEG_INFINITY;
        for (y, w) in self.atoms() {
            let e = spec.exponent(y)?;
            if w > 0.0 && e > top {
                top = e;
            }
            es.push(e);
        }
        let (mut s, mut sy) = (0.0, 0.0);
        for ((y, w), e) in self.atoms().zip(&es) {
            let a = w * (e - top).exp();
            s += a;
            sy += a * y;
        }
        Ok(TiltedMoments { mean, tilted_mean: sy / s, log_c: top + s.ln() })
    }

    /// The same law with atoms sorted ascending and ties merged.
    pub fn sorted(&self) -> DiscreteLaw {
        let mut pairs: Vec<(f64, f64)> = self.atoms().filter(|&(_, w)| w > 0.0).collect();
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut ys: Vec<f64> = Vec::with_capacity(pairs.len());
        let mut ws: Vec<f64> = Vec::with_capacity(pairs.len());
        for (y, w) in pairs {
            if ys.last() == Some(&y) {
                *ws.last_mut().unwrap() += w;
            } else {
                ys.push(y);
                ws.push(w);
            }
        }
        DiscreteLaw { ys, ws }
    }

    /// Left-continuous generalized inverse `inf{y : F(y) >= u}` of a law
    /// already passed through [`DiscreteLaw::sorted`].
    pub fn sorted_quantile(&self, u: f64) -> f64 {
        let mut acc = 0.0;
        for (y, w) in self.atoms() {
            acc += w;
            if acc >= u {
                return y;
            }
        }
        *self.ys.last().unwrap()
    }
}

/// Evaluable nuisance functions. `pi1` is already clipped where the
/// implementation clips.
pub trait Nuisance: Sync {
    fn dim(&self) -> usize;

    fn pi1(&self, x: &[f64]) -> Result<f64>;

    /// `pi1` together with whether clipping was active.
    fn pi1_clipped(&self, x: &[f64]) -> Result<(f64, bool)> {
        Ok((self.pi1(x)?, false))
    }

    fn pi(&self, t: Arm, x: &[f64]) -> Result<f64> {
        let p1 = self.pi1(x)?;
        Ok(match t {
            Arm::Treated => p1,
            Arm::Control => 1.0 - p1,
        })
    }

    /// Conditional law of `Y` given `T = t, X = x`.
    fn law(&self, t: Arm, x: &[f64]) -> Result<DiscreteLaw>;
}

/// One covariate cell of a finitely supported nuisance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub x: Vec<f64>,
    pub pi1: f64,
    /// Indexed by `Arm::index`; `None` when the arm is unobserved.
    pub laws: [Option<DiscreteLaw>; 2],
}

/// Nuisances on a finite covariate support, looked up by exact match.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiscreteNuisance {
    pub cells: Vec<Cell>,
}

impl DiscreteNuisance {
    pub fn new(cells: Vec<Cell>) -> Result<DiscreteNuisance> {
        let p = cells.first().map(|c| c.x.len()).unwrap_or(0);
        for c in &cells {
            if c.x.len() != p {
                return Err(Error::Shape { expected: p, got: c.x.len() });
            }
            if !(c.pi1 >= 0.0 && c.pi1 <= 1.0) {
                return Err(Error::Domain(format!("propensity {} outside [0, 1]", c.pi1)));
            }
        }
        Ok(DiscreteNuisance { cells })
    }

    /// Saturated fit: per distinct covariate vector, the empirical treated
    /// frequency and the empirical outcome law of each arm.
    pub fn saturated(ds: &Dataset) -> DiscreteNuisance {
        let mut cells: Vec<(Vec<f64>, [Vec<f64>; 2])> = Vec::new();
        for r in ds.rows() {
            let pos = match cells.iter().position(|(x, _)| *x == r.x) {
                Some(p) => p,
                None => {
                    cells.push((r.x.clone(), [Vec::new(), Vec::new()]));
                    cells.len() - 1
                }
            };
            cells[pos].1[r.t.index()].push(r.y);
        }
        let cells = cells
            .into_iter()
            .map(|(x, [y0, y1])| {
                let pi1 = y1.len() as f64 / (y0.len() + y1.len()) as f64;
                let law = |ys: Vec<f64>| if ys.is_empty() { None } else { DiscreteLaw::empirical(ys).ok() };
                Cell { x, pi1, laws: [law(y0), law(y1)] }
            })
            .collect();
        DiscreteNuisance { cells }
    }

    fn cell(&self, x: &[f64]) -> Result<&Cell> {
        self.cells
            .iter()
            .find(|c| c.x == x)
            .ok_or_else(|| Error::Domain(format!("covariate vector {x:?} outside the support")))
    }

    /// Covariate support as a weighted sample, for exact integrals over `X`.
    pub fn support(&self) -> Vec<Vec<f64>> {
        self.cells.iter().map(|c| c.x.clone()).collect()
    }
}

impl Nuisance for DiscreteNuisance {
    fn dim(&self) -> usize {
        self.cells.first().map(|c| c.x.len()).unwrap_or(0)
    }

    fn pi1(&self, x: &[f64]) -> Result<f64> {
        Ok(self.cell(x)?.pi1)
    }

    fn law(&self, t: Arm, x: &[f64]) -> Result<DiscreteLaw> {
        self.cell(x)?.laws[t.index()]
            .clone()
            .ok_or_else(|| Error::Domain(format!("arm {t} unobserved at {x:?}")))
    }
}

/// Settings for both nuisance fits.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, rename_all = "kebab-case")]
pub struct NuisanceConfig {
    pub propensity: PropensityConfig,
    pub outcome: SingleIndexConfig,
}

/// Fitted propensity model and one single-index outcome model per arm, all
/// trained on the same rows.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NuisanceBundle {
    pub propensity: PropensityFit,
    /// Indexed by `Arm::index`.
    pub outcome: [OutcomeFit; 2],
}

impl NuisanceBundle {
    pub fn fit(train: &Dataset, cfg: &NuisanceConfig) -> Result<NuisanceBundle> {
        let propensity = fit_propensity(train, &cfg.propensity)?;
        let control = fit_single_index(train, Arm::Control, &cfg.outcome)?;
        let treated = fit_single_index(train, Arm::Treated, &cfg.outcome)?;
        Ok(NuisanceBundle { propensity, outcome: [control, treated] })
    }
}

impl Nuisance for NuisanceBundle {
    fn dim(&self) -> usize {
        self.propensity.dim()
    }

    fn pi1(&self, x: &[f64]) -> Result<f64> {
        Ok(self.propensity.predict_clipped(x)?.0)
    }

    fn pi1_clipped(&self, x: &[f64]) -> Result<(f64, bool)> {
        self.propensity.predict_clipped(x)
    }

    fn law(&self, t: Arm, x: &[f64]) -> Result<DiscreteLaw> {
        self.outcome[t.index()].law(x)
    }
}
