//! Cubic B-spline basis with quantile knots.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::stats::quantile_sorted;

const DEGREE: usize = 3;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BSplineBasis {
    /// Full knot vector with boundary knots repeated `DEGREE + 1` times.
    knots: Vec<f64>,
}

impl BSplineBasis {
    /// Boundary knots at the sample extremes and up to `n_interior` interior
    /// knots at equally spaced quantiles, duplicates removed. `None` for a
    /// constant sample.
    pub fn from_data(x: &[f64], n_interior: usize) -> Option<BSplineBasis> {
        let mut v = x.to_vec();
        v.sort_by(f64::total_cmp);
        let (lo, hi) = (v[0], v[v.len() - 1]);
        if hi <= lo {
            return None;
        }
        let mut interior: Vec<f64> = (1..=n_interior)
            .map(|j| quantile_sorted(&v, j as f64 / (n_interior + 1) as f64))
            .filter(|&q| q > lo && q < hi)
            .collect();
        interior.dedup();
        let mut knots = vec![lo; DEGREE + 1];
        knots.extend(interior);
        knots.extend(std::iter::repeat_n(hi, DEGREE + 1));
        Some(BSplineBasis { knots })
    }

    pub fn n_basis(&self) -> usize {
        self.knots.len() - DEGREE - 1
    }

    pub fn bounds(&self) -> (f64, f64) {
        (self.knots[0], self.knots[self.knots.len() - 1])
    }

    fn span(&self, x: f64) -> usize {
        let last = self.n_basis() - 1;
        if x >= self.knots[last + 1] {
            return last;
        }
        let (mut lo, mut hi) = (DEGREE, last + 1);
        while hi - lo > 1 {
            let mid = (lo + hi) / 2;
            if x < self.knots[mid] {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        lo
    }

    /// Writes all basis values at `x` into `out`; `x` is clamped to the
    /// boundary knots first.
    pub fn eval_into(&self, x: f64, out: &mut [f64]) {
        let (a, b) = self.bounds();
        let x = x.clamp(a, b);
        out.iter_mut().for_each(|o| *o = 0.0);
        let s = self.span(x);
        let k = &self.knots;
        let mut n = [0.0; DEGREE + 1];
        let mut left = [0.0; DEGREE + 1];
        let mut right = [0.0; DEGREE + 1];
        n[0] = 1.0;
        for j in 1..=DEGREE {
            left[j] = x - k[s + 1 - j];
            right[j] = k[s + j] - x;
            let mut saved = 0.0;
            for r in 0..j {
                let temp = n[r] / (right[r + 1] + left[j - r]);
                n[r] = saved + right[r + 1] * temp;
                saved = left[j - r] * temp;
            }
            n[j] = saved;
        }
        for (r, v) in n.iter().enumerate() {
            out[s - DEGREE + r] = *v;
        }
    }

    pub fn eval(&self, x: f64) -> Vec<f64> {
        let mut out = vec![0.0; self.n_basis()];
        self.eval_into(x, &mut out);
        out
    }
}

/// `D'D` for the second-difference operator on `m` coefficients.
pub fn second_difference_penalty(m: usize) -> DMatrix<f64> {
    let mut s = DMatrix::zeros(m, m);
    if m < 3 {
        return s;
    }
    for r in 0..m - 2 {
        let d = [(r, 1.0), (r + 1, -2.0), (r + 2, 1.0)];
        for &(i, a) in &d {
            for &(j, b) in &d {
                s[(i, j)] += a * b;
            }
        }
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid() -> Vec<f64> {
        (0..200).map(|i| (i as f64 / 10.0).powf(1.3)).collect()
    }

    #[test]
    fn partition_of_unity_and_nonnegative() {
        let b = BSplineBasis::from_data(&grid(), 10).unwrap();
        assert_eq!(b.n_basis(), 14);
        let (lo, hi) = b.bounds();
        for i in 0..=500 {
            let x = lo + (hi - lo) * i as f64 / 500.0;
            let v = b.eval(x);
            assert!((v.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            assert!(v.iter().all(|&u| u >= -1e-15));
        }
    }

    #[test]
    fn clamps_outside_range() {
        let b = BSplineBasis::from_data(&grid(), 10).unwrap();
        let (lo, hi) = b.bounds();
        assert_eq!(b.eval(lo - 5.0), b.eval(lo));
        assert_eq!(b.eval(hi + 5.0), b.eval(hi));
        assert_eq!(b.eval(hi)[b.n_basis() - 1], 1.0);
    }

    #[test]
    fn constant_sample_has_no_basis() {
        assert!(BSplineBasis::from_data(&[2.0, 2.0], 10).is_none());
    }

    #[test]
    fn penalty_kills_linear_sequences() {
        let s = second_difference_penalty(6);
        let lin = nalgebra::DVector::from_iterator(6, (0..6).map(|i| 2.0 * i as f64 - 1.0));
        assert!((&s * lin).norm() < 1e-12);
    }
}
