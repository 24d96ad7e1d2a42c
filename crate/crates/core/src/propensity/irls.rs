//! Penalized iteratively reweighted least squares for logistic regression.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::stats::logistic;

#[derive(Clone, Debug)]
pub struct IrlsFit {
    pub beta: DVector<f64>,
    pub iterations: usize,
    /// Penalized deviance after each iteration.
    pub trace: Vec<f64>,
}

fn softplus(e: f64) -> f64 {
    if e > 0.0 {
        e + (-e).exp().ln_1p()
    } else {
        e.exp().ln_1p()
    }
}

/// Binomial deviance `-2 sum [y eta - log(1 + e^eta)]`.
pub fn deviance(eta: &DVector<f64>, y: &[f64]) -> f64 {
    -2.0 * eta.iter().zip(y).map(|(&e, &yi)| yi * e - softplus(e)).sum::<f64>()
}

fn penalized_deviance(x: &DMatrix<f64>, y: &[f64], s: &DMatrix<f64>, beta: &DVector<f64>) -> f64 {
    deviance(&(x * beta), y) + beta.dot(&(s * beta))
}

fn solve_spd(a: DMatrix<f64>, b: &DVector<f64>) -> Option<DVector<f64>> {
    match a.clone().cholesky() {
        Some(c) => Some(c.solve(b)),
        None => a.lu().solve(b),
    }
}

/// Minimizes `deviance(X beta) + beta' S beta` by Newton steps with step
/// halving. Converges when the largest coefficient change drops below `tol`.
pub fn penalized_irls(
    x: &DMatrix<f64>,
    y: &[f64],
    s: &DMatrix<f64>,
    start: Option<&DVector<f64>>,
    max_iter: usize,
    tol: f64,
) -> Result<IrlsFit> {
    let (n, p) = x.shape();
    let mut beta = start.cloned().unwrap_or_else(|| DVector::zeros(p));
    let mut current = penalized_deviance(x, y, s, &beta);
    let mut trace = Vec::new();
    let mut xw = DMatrix::zeros(n, p);
    for it in 1..=max_iter {
        let eta = x * &beta;
        let mut zw = DVector::zeros(n);
        for i in 0..n {
            let mu = logistic(eta[i]);
            let w = (mu * (1.0 - mu)).max(1e-10);
            let sw = w.sqrt();
            for j in 0..p {
                xw[(i, j)] = x[(i, j)] * sw;
            }
            zw[i] = sw * (eta[i] + (y[i] - mu) / w);
        }
        let lhs = xw.tr_mul(&xw) + s;
        let rhs = xw.tr_mul(&zw);
        let proposal = solve_spd(lhs, &rhs)
            .ok_or_else(|| Error::Numerical("singular penalized normal equations".into()))?;
        let mut step = &proposal - &beta;
        let mut next = &beta + &step;
        let mut value = penalized_deviance(x, y, s, &next);
        let mut halvings = 0;
        while !(value <= current + 1e-10 * current.abs().max(1.0)) && halvings < 30 {
            step *= 0.5;
            next = &beta + &step;
            value = penalized_deviance(x, y, s, &next);
            halvings += 1;
        }
        if !value.is_finite() {
            trace.push(value);
            return Err(Error::NonConvergence {
                msg: "penalized deviance became non-finite".into(),
                trace,
                best: beta.iter().copied().collect(),
            });
        }
        let change = step.amax();
        beta = next;
        current = value;
        trace.push(value);
        if change < tol {
            return Ok(IrlsFit { beta, iterations: it, trace });
        }
    }
    Err(Error::NonConvergence {
        msg: format!("IRLS did not converge in {max_iter} iterations"),
        trace,
        best: beta.iter().copied().collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn saturated_two_by_two() {
        // x in {0,1}: treated frequencies 1/4 and 2/3
        let xs = [0.0, 0.0, 0.0, 0.0, 1.0, 1.0, 1.0];
        let ys = [1.0, 0.0, 0.0, 0.0, 1.0, 1.0, 0.0];
        let x = DMatrix::from_fn(7, 2, |i, j| if j == 0 { 1.0 } else { xs[i] });
        let s = DMatrix::zeros(2, 2);
        let fit = penalized_irls(&x, &ys, &s, None, 100, 1e-10).unwrap();
        let p0 = logistic(fit.beta[0]);
        let p1 = logistic(fit.beta[0] + fit.beta[1]);
        assert!((p0 - 0.25).abs() < 1e-12);
        assert!((p1 - 2.0 / 3.0).abs() < 1e-12);
        assert!(fit.trace.windows(2).all(|w| w[1] <= w[0] + 1e-9));
    }

    #[test]
    fn budget_exhaustion_reports_trace() {
        let x = DMatrix::from_fn(4, 2, |i, j| if j == 0 { 1.0 } else { i as f64 });
        let ys = [0.0, 1.0, 0.0, 1.0];
        match penalized_irls(&x, &ys, &DMatrix::zeros(2, 2), None, 1, 1e-300) {
            Err(Error::NonConvergence { trace, best, .. }) => {
                assert_eq!(trace.len(), 1);
                assert_eq!(best.len(), 2);
            }
            other => panic!("{other:?}"),
        }
    }
}
