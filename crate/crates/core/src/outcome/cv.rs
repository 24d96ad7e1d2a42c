//! Leave-one-out cross-validation criterion for the single-index
//! conditional CDF.

use crate::error::{Error, Result};

use super::kernel::k4;

/// One arm's training sample, sorted by outcome so that each evaluation of
/// the criterion costs `O(n^2)`.
#[derive(Clone, Debug)]
pub struct CvProblem {
    xs: Vec<Vec<f64>>,
    ys: Vec<f64>,
    /// Last position of the tie group containing each position.
    group_end: Vec<usize>,
    row: Vec<f64>,
}

impl CvProblem {
    pub fn new(xs: &[Vec<f64>], ys: &[f64]) -> CvProblem {
        let mut order: Vec<usize> = (0..ys.len()).collect();
        order.sort_by(|&a, &b| ys[a].total_cmp(&ys[b]));
        let xs: Vec<Vec<f64>> = order.iter().map(|&i| xs[i].clone()).collect();
        let ys: Vec<f64> = order.iter().map(|&i| ys[i]).collect();
        let n = ys.len();
        let mut group_end = vec![0; n];
        let mut end = n.saturating_sub(1);
        for l in (0..n).rev() {
            if l + 1 < n && ys[l + 1] != ys[l] {
                end = l;
            }
            group_end[l] = end;
        }
        CvProblem { xs, ys, group_end, row: vec![0.0; n] }
    }

    pub fn n(&self) -> usize {
        self.ys.len()
    }

    pub fn index(&self, beta: &[f64]) -> Vec<f64> {
        self.xs.iter().map(|x| x.iter().zip(beta).map(|(a, b)| a * b).sum()).collect()
    }

    /// `(1/n^2) sum_i sum_l {I(Y_i <= Y_l) - F^(-i)(Y_l)}^2`, with the
    /// leave-one-out CDF built from fourth-order kernel weights and clamped
    /// to `[0, 1]`. Fails when some leave-one-out weight total vanishes
    /// relative to the total absolute weight.
    pub fn criterion(&mut self, beta: &[f64], h: f64) -> Result<f64> {
        let n = self.n();
        let u = self.index(beta);
        let mut cum = vec![0.0; n];
        let mut total = 0.0;
        for i in 0..n {
            for (j, k) in self.row.iter_mut().enumerate() {
                *k = if j == i { 0.0 } else { k4((u[i] - u[j]) / h) };
            }
            let (mut acc, mut abs) = (0.0, 0.0);
            for (c, &k) in cum.iter_mut().zip(&self.row) {
                acc += k;
                abs += k.abs();
                *c = acc;
            }
            if !(abs > 0.0 && acc.abs() > 1e-12 * abs) {
                return Err(Error::UndefinedWindow(i));
            }
            let yi = self.ys[i];
            for l in 0..n {
                let f = (cum[self.group_end[l]] / acc).clamp(0.0, 1.0);
                let ind = if yi <= self.ys[l] { 1.0 } else { 0.0 };
                total += (ind - f) * (ind - f);
            }
        }
        Ok(total / (n * n) as f64)
    }
}
