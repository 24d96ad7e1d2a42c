//! Derivative-free minimization.

#[derive(Clone, Debug)]
pub struct Minimum {
    pub x: Vec<f64>,
    pub f: f64,
    pub evals: usize,
    pub converged: bool,
}

/// Nelder–Mead with standard coefficients. Stops when the simplex value
/// spread falls below `ftol * |f_best| + 1e-14` and every vertex lies within
/// `xtol` of the best one, or after `max_evals` evaluations. `+inf` values
/// are allowed and simply rank last.
pub fn nelder_mead<F: FnMut(&[f64]) -> f64>(
    mut f: F,
    x0: &[f64],
    step: &[f64],
    max_evals: usize,
    ftol: f64,
    xtol: f64,
) -> Minimum {
    let d = x0.len();
    let mut evals = 0;
    let mut eval = |x: &[f64], evals: &mut usize| {
        *evals += 1;
        let v = f(x);
        if v.is_nan() {
            f64::INFINITY
        } else {
            v
        }
    };
    let mut simplex: Vec<(Vec<f64>, f64)> = Vec::with_capacity(d + 1);
    simplex.push((x0.to_vec(), eval(x0, &mut evals)));
    for j in 0..d {
        let mut x = x0.to_vec();
        x[j] += step[j];
        let v = eval(&x, &mut evals);
        simplex.push((x, v));
    }
    let converged = loop {
        simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
        let (best, worst) = (simplex[0].1, simplex[d].1);
        let spread_ok = worst - best <= ftol * best.abs() + 1e-14;
        let size_ok = simplex[1..]
            .iter()
            .all(|(x, _)| x.iter().zip(&simplex[0].0).all(|(a, b)| (a - b).abs() <= xtol));
        if best.is_finite() && spread_ok && size_ok {
            break true;
        }
        if evals >= max_evals {
            break false;
        }
        let centroid: Vec<f64> =
            (0..d).map(|j| simplex[..d].iter().map(|(x, _)| x[j]).sum::<f64>() / d as f64).collect();
        let along = |t: f64| -> Vec<f64> {
            centroid.iter().zip(&simplex[d].0).map(|(c, w)| c + t * (w - c)).collect()
        };
        let xr = along(-1.0);
        let fr = eval(&xr, &mut evals);
        if fr < simplex[0].1 {
            let xe = along(-2.0);
            let fe = eval(&xe, &mut evals);
            simplex[d] = if fe < fr { (xe, fe) } else { (xr, fr) };
        } else if fr < simplex[d - 1].1 {
            simplex[d] = (xr, fr);
        } else {
            let (xc, fc) = if fr < simplex[d].1 {
                let xc = along(-0.5);
                let fc = eval(&xc, &mut evals);
                (xc, fc)
            } else {
                let xc = along(0.5);
                let fc = eval(&xc, &mut evals);
                (xc, fc)
            };
            if fc < simplex[d].1.min(fr) {
                simplex[d] = (xc, fc);
            } else {
                let x_best = simplex[0].0.clone();
                for v in simplex.iter_mut().skip(1) {
                    let x: Vec<f64> = x_best.iter().zip(&v.0).map(|(b, x)| b + 0.5 * (x - b)).collect();
                    let fx = eval(&x, &mut evals);
                    *v = (x, fx);
                }
            }
        }
    };
    simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
    let (x, fx) = simplex.swap_remove(0);
    Minimum { x, f: fx, evals, converged }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rosenbrock() {
        let r = nelder_mead(
            |x| (1.0 - x[0]).powi(2) + 100.0 * (x[1] - x[0] * x[0]).powi(2),
            &[-1.2, 1.0],
            &[0.5, 0.5],
            5000,
            1e-14,
            1e-8,
        );
        assert!(r.converged);
        assert!((r.x[0] - 1.0).abs() < 1e-5 && (r.x[1] - 1.0).abs() < 1e-5, "{:?}", r.x);
    }

    #[test]
    fn one_dimensional_with_infinite_region() {
        let r = nelder_mead(
            |x| if x[0] < -1.0 { f64::INFINITY } else { (x[0] - 2.0).powi(2) },
            &[0.0],
            &[1.0],
            500,
            1e-12,
            1e-8,
        );
        assert!(r.converged);
        assert!((r.x[0] - 2.0).abs() < 1e-6);
    }

    #[test]
    fn budget_exhaustion() {
        let r = nelder_mead(|x| x[0].powi(2) + x[1].powi(2), &[10.0, 10.0], &[1.0, 1.0], 5, 1e-15, 1e-15);
        assert!(!r.converged);
        assert!(r.evals >= 5);
    }
}
