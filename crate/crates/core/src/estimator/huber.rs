//! Tuning-free Huberization of fold-level influence values.

use serde::{Deserialize, Serialize};

/// Root `tau >= 0` of `sum_i min(v_i^2, tau^2) / tau^2 = log n`.
///
/// The left side is piecewise `k + S_k / tau^2` between consecutive order
/// statistics of `|v|`, so the root is found exactly interval by interval.
/// Returns `0` when every value is zero and `+inf` when at most `log n`
/// values are nonzero, since the equation then has no finite crossing and
/// truncation would be a no-op anyway.
pub fn huber_threshold(values: &[f64]) -> f64 {
    assert!(!values.is_empty(), "huber_threshold needs values");
    let target = (values.len() as f64).ln();
    let mut a: Vec<f64> = values.iter().map(|v| v.abs()).collect();
    a.sort_by(|x, y| y.total_cmp(x));
    if a[0] == 0.0 {
        return 0.0;
    }
    let nonzero = a.iter().filter(|&&v| v > 0.0).count();
    if nonzero as f64 <= target {
        return f64::INFINITY;
    }
    // tail[k] = sum of squares of a[k..]
    let mut tail = vec![0.0; a.len() + 1];
    for k in (0..a.len()).rev() {
        tail[k] = tail[k + 1] + a[k] * a[k];
    }
    for k in 0..a.len() {
        // tau in [a[k], a[k-1]] with k values at or above the interval top
        let slack = target - k as f64;
        if slack <= 0.0 {
            break;
        }
        let tau = (tail[k] / slack).sqrt();
        let upper = if k == 0 { f64::INFINITY } else { a[k - 1] };
        if tau >= a[k] && tau <= upper {
            return tau;
        }
    }
    // unreachable for finite input: the function is continuous and spans
    // [nonzero, 0) over (0, inf)
    f64::INFINITY
}

/// Result of truncating one fold's values.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HuberSummary {
    pub mean: f64,
    pub tau: f64,
    pub truncated: usize,
}

/// Mean of `sign(v) min(|v|, tau)` with `tau` from [`huber_threshold`].
pub fn huberized_mean(values: &[f64]) -> HuberSummary {
    let tau = huber_threshold(values);
    let mut truncated = 0;
    let mut s = 0.0;
    for &v in values {
        if v.abs() > tau {
            truncated += 1;
            s += tau * v.signum();
        } else {
            s += v;
        }
    }
    HuberSummary { mean: s / values.len() as f64, tau, truncated }
}
