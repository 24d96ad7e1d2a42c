//! Additive logistic model for `P(T = 1 | X = x)`.
//!
//! Numeric covariates with more than four distinct values get a penalized
//! cubic B-spline term; other covariates enter linearly. Per-term smoothing
//! parameters are chosen by stratified V-fold cross-validated deviance with
//! coordinate sweeps over a fixed grid.

mod bspline;
mod irls;

use std::collections::HashMap;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::dataset::{stratified_assignment, Arm, Dataset};
use crate::error::{Error, Result};
use crate::stats::logistic;

pub use bspline::{second_difference_penalty, BSplineBasis};
pub use irls::{deviance, penalized_irls, IrlsFit};

/// Covariates with at most this many distinct values enter linearly.
const LINEAR_MAX_UNIQUE: usize = 4;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, rename_all = "kebab-case")]
pub struct PropensityConfig {
    /// Interior knots per spline term.
    pub knots: usize,
    pub penalty_grid: Vec<f64>,
    pub cv_folds: usize,
    pub clip_epsilon: f64,
    pub max_iter: usize,
    pub tol: f64,
    /// Coordinate sweeps over the spline terms during smoothing selection.
    pub sweeps: usize,
    /// Small ridge on every non-intercept coefficient; guards against
    /// separation.
    pub ridge: f64,
    pub seed: u64,
}

impl Default for PropensityConfig {
    fn default() -> Self {
        PropensityConfig {
            knots: 10,
            penalty_grid: (-2..=5).map(|e| 10f64.powi(e)).collect(),
            cv_folds: 5,
            clip_epsilon: 0.01,
            max_iter: 100,
            tol: 1e-8,
            sweeps: 2,
            ridge: 1e-8,
            seed: 0,
        }
    }
}

impl PropensityConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.clip_epsilon > 0.0 && self.clip_epsilon < 0.5) {
            return Err(Error::Config(format!("clip-epsilon {} not in (0, 0.5)", self.clip_epsilon)));
        }
        if self.penalty_grid.is_empty() || self.penalty_grid.iter().any(|l| !(*l >= 0.0 && l.is_finite())) {
            return Err(Error::Config("penalty-grid must be nonempty and nonnegative".into()));
        }
        if self.max_iter == 0 || !(self.tol > 0.0) {
            return Err(Error::Config("max-iter and tol must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Term {
    /// Centered B-spline columns with the first basis function dropped.
    Spline { col: usize, basis: BSplineBasis, means: Vec<f64> },
    Linear { col: usize, mean: f64, scale: f64 },
}

impl Term {
    fn width(&self) -> usize {
        match self {
            Term::Spline { means, .. } => means.len(),
            Term::Linear { .. } => 1,
        }
    }

    fn write(&self, x: &[f64], out: &mut [f64], scratch: &mut Vec<f64>) {
        match self {
            Term::Spline { col, basis, means } => {
                scratch.resize(basis.n_basis(), 0.0);
                basis.eval_into(x[*col], scratch);
                for (j, m) in means.iter().enumerate() {
                    out[j] = scratch[j + 1] - m;
                }
            }
            Term::Linear { col, mean, scale } => out[0] = (x[*col] - mean) / scale,
        }
    }
}

/// Fitted additive logistic model with clipping.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PropensityFit {
    dim: usize,
    terms: Vec<Term>,
    /// Intercept first, then term coefficients in term order.
    pub coefficients: Vec<f64>,
    /// Smoothing parameter of each term (zero for linear terms).
    pub lambdas: Vec<f64>,
    pub clip_epsilon: f64,
    pub iterations: usize,
    pub cv_deviance: Option<f64>,
}

fn build_terms(ds: &Dataset, knots: usize) -> Vec<Term> {
    let mut terms = Vec::new();
    for col in 0..ds.p() {
        let v: Vec<f64> = ds.rows().iter().map(|r| r.x[col]).collect();
        let mut u = v.clone();
        u.sort_by(f64::total_cmp);
        u.dedup();
        if u.len() < 2 {
            continue;
        }
        let numeric = matches!(ds.covariates()[col].kind, crate::dataset::CovariateKind::Numeric);
        if numeric && u.len() > LINEAR_MAX_UNIQUE {
            if let Some(basis) = BSplineBasis::from_data(&v, knots) {
                let nb = basis.n_basis();
                let mut means = vec![0.0; nb - 1];
                let mut b = vec![0.0; nb];
                for &xi in &v {
                    basis.eval_into(xi, &mut b);
                    for j in 1..nb {
                        means[j - 1] += b[j];
                    }
                }
                means.iter_mut().for_each(|m| *m /= v.len() as f64);
                terms.push(Term::Spline { col, basis, means });
                continue;
            }
        }
        let mean = v.iter().sum::<f64>() / v.len() as f64;
        let scale = (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / v.len() as f64).sqrt();
        terms.push(Term::Linear { col, mean, scale });
    }
    terms
}

fn design_row(terms: &[Term], x: &[f64], out: &mut [f64], scratch: &mut Vec<f64>) {
    out[0] = 1.0;
    let mut at = 1;
    for t in terms {
        let w = t.width();
        t.write(x, &mut out[at..at + w], scratch);
        at += w;
    }
}

struct Problem {
    x: DMatrix<f64>,
    y: Vec<f64>,
    /// Column range and unit penalty of each spline term.
    blocks: Vec<Option<(usize, DMatrix<f64>)>>,
    ridge: f64,
}

impl Problem {
    fn penalty(&self, lambdas: &[f64]) -> DMatrix<f64> {
        let p = self.x.ncols();
        let mut s = DMatrix::from_diagonal_element(p, p, self.ridge);
        s[(0, 0)] = 0.0;
        for (block, &lam) in self.blocks.iter().zip(lambdas) {
            if let Some((start, unit)) = block {
                let m = unit.nrows();
                let mut view = s.view_mut((*start, *start), (m, m));
                view += unit * lam;
            }
        }
        s
    }

    fn rows(&self, idx: &[usize]) -> (DMatrix<f64>, Vec<f64>) {
        (self.x.select_rows(idx), idx.iter().map(|&i| self.y[i]).collect())
    }
}

fn cv_deviance(
    prob: &Problem,
    lambdas: &[f64],
    folds: &[usize],
    v: usize,
    cfg: &PropensityConfig,
) -> f64 {
    let s = prob.penalty(lambdas);
    let mut total = 0.0;
    for f in 0..v {
        let train: Vec<usize> = (0..folds.len()).filter(|&i| folds[i] != f).collect();
        let test: Vec<usize> = (0..folds.len()).filter(|&i| folds[i] == f).collect();
        let (xt, yt) = prob.rows(&train);
        let fit = match penalized_irls(&xt, &yt, &s, None, cfg.max_iter, cfg.tol) {
            Ok(fit) => fit,
            Err(_) => return f64::INFINITY,
        };
        let (xv, yv) = prob.rows(&test);
        total += deviance(&(xv * &fit.beta), &yv);
    }
    total
}

/// Fits the additive logistic propensity model on `train`.
pub fn fit_propensity(train: &Dataset, cfg: &PropensityConfig) -> Result<PropensityFit> {
    cfg.validate()?;
    let n1 = train.arm_count(Arm::Treated);
    let n0 = train.n() - n1;
    if n1 == 0 || n0 == 0 {
        return Err(Error::DegenerateFit("training data contain a single treatment arm".into()));
    }
    let terms = build_terms(train, cfg.knots);
    let width = 1 + terms.iter().map(Term::width).sum::<usize>();
    let mut x = DMatrix::zeros(train.n(), width);
    let mut row = vec![0.0; width];
    let mut scratch = Vec::new();
    for (i, r) in train.rows().iter().enumerate() {
        design_row(&terms, &r.x, &mut row, &mut scratch);
        for j in 0..width {
            x[(i, j)] = row[j];
        }
    }
    let mut blocks = Vec::new();
    let mut at = 1;
    for t in &terms {
        let w = t.width();
        blocks.push(match t {
            Term::Spline { .. } => {
                let full = second_difference_penalty(w + 1);
                Some((at, full.view((1, 1), (w, w)).into_owned()))
            }
            Term::Linear { .. } => None,
        });
        at += w;
    }
    let y: Vec<f64> = train.rows().iter().map(|r| f64::from(r.t == Arm::Treated)).collect();
    let prob = Problem { x, y, blocks, ridge: cfg.ridge };

    let grid = &cfg.penalty_grid;
    let spline_terms: Vec<usize> = (0..terms.len()).filter(|&j| prob.blocks[j].is_some()).collect();
    let mut choice = vec![grid.len() / 2; terms.len()];
    let to_lambdas = |choice: &[usize]| -> Vec<f64> {
        (0..terms.len()).map(|j| if prob.blocks[j].is_some() { grid[choice[j]] } else { 0.0 }).collect()
    };
    let v = cfg.cv_folds.min(n0).min(n1);
    let mut cv_value = None;
    if !spline_terms.is_empty() && grid.len() > 1 && v >= 2 {
        let arms: Vec<Arm> = train.rows().iter().map(|r| r.t).collect();
        let folds = stratified_assignment(&arms, v, cfg.seed)?;
        let mut cache: HashMap<Vec<usize>, f64> = HashMap::new();
        let mut score = |c: &[usize]| -> f64 {
            *cache
                .entry(c.to_vec())
                .or_insert_with(|| cv_deviance(&prob, &to_lambdas(c), &folds, v, cfg))
        };
        let mut best = score(&choice);
        for _ in 0..cfg.sweeps {
            let before = choice.clone();
            for &j in &spline_terms {
                for g in 0..grid.len() {
                    let mut trial = choice.clone();
                    trial[j] = g;
                    let val = score(&trial);
                    if val < best {
                        best = val;
                        choice = trial;
                    }
                }
            }
            if choice == before {
                break;
            }
        }
        cv_value = Some(best);
    }
    let lambdas = to_lambdas(&choice);
    let fit = penalized_irls(&prob.x, &prob.y, &prob.penalty(&lambdas), None, cfg.max_iter, cfg.tol)?;
    Ok(PropensityFit {
        dim: train.p(),
        terms,
        coefficients: fit.beta.iter().copied().collect(),
        lambdas,
        clip_epsilon: cfg.clip_epsilon,
        iterations: fit.iterations,
        cv_deviance: cv_value,
    })
}

impl PropensityFit {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn terms(&self) -> &[Term] {
        &self.terms
    }

    /// Linear predictor `eta(x)`.
    pub fn eta(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.dim {
            return Err(Error::Shape { expected: self.dim, got: x.len() });
        }
        let mut row = vec![0.0; self.coefficients.len()];
        let mut scratch = Vec::new();
        design_row(&self.terms, x, &mut row, &mut scratch);
        Ok(DVector::from_vec(row).dot(&DVector::from_column_slice(&self.coefficients)))
    }

    /// Clipped `P(T=1 | x)` and whether the clip was active.
    pub fn predict_clipped(&self, x: &[f64]) -> Result<(f64, bool)> {
        let raw = logistic(self.eta(x)?);
        let eps = self.clip_epsilon;
        let p = raw.clamp(eps, 1.0 - eps);
        Ok((p, p != raw))
    }

    /// Clipped `P(T=t | x)`; the two arms sum to one exactly.
    pub fn predict_pi(&self, x: &[f64], t: Arm) -> Result<f64> {
        let p1 = self.predict_clipped(x)?.0;
        Ok(match t {
            Arm::Treated => p1,
            Arm::Control => 1.0 - p1,
        })
    }
}
