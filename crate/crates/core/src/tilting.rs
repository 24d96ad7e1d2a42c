//! Tilting functions and sensitivity parameters for the exponential-tilt
//! model of unmeasured confounding.

use serde::{Deserialize, Serialize};

use crate::dataset::Arm;
use crate::error::{Error, Result};
use crate::stats::{logit, norm_cdf};

/// Largest admissible exponent `gamma * s(y)`.
pub const OVERFLOW_THRESHOLD: f64 = 700.0;

/// Transform `s(y)` of the outcome whose tilt encodes the direction of
/// confounding.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TiltFunction {
    Identity,
    /// `y Φ((cap-y)/scale) + (cap-y)(1 - Φ((cap-y)/scale))`
    SmoothCapAbove { cap: f64, scale: f64 },
    /// `y Φ((y-floor)/scale)`
    SmoothRampAbove { floor: f64, scale: f64 },
    /// Piecewise-linear through `(y, s)` knots, flat beyond the ends.
    UserTable { knots: Vec<[f64; 2]> },
}

impl TiltFunction {
    pub fn validate(&self) -> Result<()> {
        match self {
            TiltFunction::Identity => Ok(()),
            TiltFunction::SmoothCapAbove { cap, scale } | TiltFunction::SmoothRampAbove { floor: cap, scale } => {
                if !(scale.is_finite() && *scale > 0.0 && cap.is_finite()) {
                    return Err(Error::Config(format!(
                        "tilt function needs finite location and scale > 0, got ({cap}, {scale})"
                    )));
                }
                Ok(())
            }
            TiltFunction::UserTable { knots } => {
                if knots.is_empty() {
                    return Err(Error::Config("user_table tilt needs at least one knot".into()));
                }
                if knots.iter().flatten().any(|v| !v.is_finite()) {
                    return Err(Error::Config("user_table knots must be finite".into()));
                }
                if knots.windows(2).any(|w| w[1][0] <= w[0][0]) {
                    return Err(Error::Config("user_table knots must be strictly increasing in y".into()));
                }
                Ok(())
            }
        }
    }

    pub fn eval(&self, y: f64) -> f64 {
        match self {
            TiltFunction::Identity => y,
            TiltFunction::SmoothCapAbove { cap, scale } => {
                let p = norm_cdf((cap - y) / scale);
                // 1 - Φ(z) = Φ(-z) keeps the upper tail accurate
                let q = norm_cdf((y - cap) / scale);
                y * p + (cap - y) * q
            }
            TiltFunction::SmoothRampAbove { floor, scale } => y * norm_cdf((y - floor) / scale),
            TiltFunction::UserTable { knots } => {
                let first = knots[0];
                let last = knots[knots.len() - 1];
                if y <= first[0] {
                    return first[1];
                }
                if y >= last[0] {
                    return last[1];
                }
                let j = knots.partition_point(|k| k[0] <= y);
                let (a, b) = (knots[j - 1], knots[j]);
                if y == a[0] {
                    return a[1];
                }
                a[1] + (b[1] - a[1]) * (y - a[0]) / (b[0] - a[0])
            }
        }
    }
}

/// Sensitivity parameter and tilting function for one arm.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TiltSpec {
    pub arm: Arm,
    pub gamma: f64,
    pub s: TiltFunction,
}

impl TiltSpec {
    pub fn new(arm: Arm, gamma: f64, s: TiltFunction) -> Result<TiltSpec> {
        let spec = TiltSpec { arm, gamma, s };
        spec.validate()?;
        Ok(spec)
    }

    /// No unmeasured confounding for `arm`.
    pub fn null(arm: Arm) -> TiltSpec {
        TiltSpec { arm, gamma: 0.0, s: TiltFunction::Identity }
    }

    pub fn validate(&self) -> Result<()> {
        if !self.gamma.is_finite() {
            return Err(Error::Config(format!("gamma must be finite, got {}", self.gamma)));
        }
        self.s.validate()
    }

    pub fn with_gamma(&self, gamma: f64) -> TiltSpec {
        TiltSpec { gamma, ..self.clone() }
    }

    pub fn eval(&self, y: f64) -> f64 {
        self.s.eval(y)
    }

    /// `gamma * s(y)`, zero whenever `gamma` is zero.
    pub fn exponent(&self, y: f64) -> Result<f64> {
        if self.gamma == 0.0 {
            return Ok(0.0);
        }
        let e = self.gamma * self.s.eval(y);
        if e > OVERFLOW_THRESHOLD || e.is_nan() {
            return Err(Error::TiltOverflow { y, exponent: e });
        }
        Ok(e)
    }

    pub fn exp_tilt(&self, y: f64) -> Result<f64> {
        Ok(self.exponent(y)?.exp())
    }

    /// `logit(pi_other) - log(c)`: the log-odds of selection into the other
    /// arm implied by the tilt.
    pub fn implied_selection_logit(&self, pi_other: f64, c: f64) -> Result<f64> {
        if !(pi_other > 0.0 && pi_other < 1.0) {
            return Err(Error::Domain(format!("probability {pi_other} not in (0, 1)")));
        }
        if !(c > 0.0 && c.is_finite()) {
            return Err(Error::Domain(format!("normalizer {c} must be positive")));
        }
        Ok(logit(pi_other) - c.ln())
    }
}
