//! Box-constrained Levenberg–Marquardt for small least-squares problems.

use nalgebra::{DMatrix, DVector};

#[derive(Debug, Clone, PartialEq)]
pub struct LmOptions {
    pub max_iter: usize,
    /// Relative tolerance on cost decrease and step size.
    pub tol: f64,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl LmOptions {
    pub fn unbounded(n: usize) -> Self {
        Self {
            max_iter: 200,
            tol: 1e-10,
            lower: vec![f64::NEG_INFINITY; n],
            upper: vec![f64::INFINITY; n],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LmFit {
    pub params: Vec<f64>,
    /// Half the residual sum of squares at `params`.
    pub cost: f64,
    pub iterations: usize,
    pub converged: bool,
}

fn clamp(p: &mut [f64], opts: &LmOptions) {
    for (i, v) in p.iter_mut().enumerate() {
        *v = v.clamp(opts.lower[i], opts.upper[i]);
    }
}

fn eval<F: Fn(&[f64], &mut [f64])>(f: &F, p: &[f64], r: &mut [f64]) -> f64 {
    f(p, r);
    0.5 * r.iter().map(|v| v * v).sum::<f64>()
}

/// Minimizes `½‖r(p)‖²` where `residuals(p, r)` fills the `m` residuals.
/// The Jacobian is taken by central differences.
pub fn levenberg_marquardt<F>(residuals: F, m: usize, p0: &[f64], opts: &LmOptions) -> LmFit
where
    F: Fn(&[f64], &mut [f64]),
{
    let n = p0.len();
    assert_eq!(opts.lower.len(), n);
    assert_eq!(opts.upper.len(), n);
    let mut p = p0.to_vec();
    clamp(&mut p, opts);
    let mut r = vec![0.0; m];
    let mut cost = eval(&residuals, &p, &mut r);
    if !cost.is_finite() {
        return LmFit { params: p, cost, iterations: 0, converged: false };
    }
    let mut lambda = 1e-3;
    let mut jac = DMatrix::<f64>::zeros(m, n);
    let (mut rp, mut rm) = (vec![0.0; m], vec![0.0; m]);

    for iter in 1..=opts.max_iter {
        for j in 0..n {
            let h = 1e-6 * p[j].abs().max(1e-3);
            let mut pp = p.clone();
            let mut pm = p.clone();
            pp[j] += h;
            pm[j] -= h;
            residuals(&pp, &mut rp);
            residuals(&pm, &mut rm);
            for i in 0..m {
                jac[(i, j)] = (rp[i] - rm[i]) / (2.0 * h);
            }
        }
        let rv = DVector::from_column_slice(&r);
        let a = jac.tr_mul(&jac);
        let g = jac.tr_mul(&rv);
        if g.amax() <= opts.tol * cost.max(opts.tol) {
            return LmFit { params: p, cost, iterations: iter, converged: true };
        }

        let mut improved = false;
        while lambda < 1e16 {
            let mut damped = a.clone();
            for j in 0..n {
                damped[(j, j)] += lambda * a[(j, j)].max(1e-12);
            }
            let Some(step) = damped.cholesky().map(|c| c.solve(&(-&g))) else {
                lambda *= 10.0;
                continue;
            };
            let mut trial: Vec<f64> = p.iter().zip(step.iter()).map(|(a, b)| a + b).collect();
            clamp(&mut trial, opts);
            let trial_cost = eval(&residuals, &trial, &mut rp);
            if trial_cost.is_finite() && trial_cost < cost {
                let step_norm: f64 = trial.iter().zip(&p).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
                let p_norm: f64 = p.iter().map(|v| v * v).sum::<f64>().sqrt();
                let rel_drop = (cost - trial_cost) / cost.max(f64::MIN_POSITIVE);
                p = trial;
                r.copy_from_slice(&rp);
                cost = trial_cost;
                lambda = (lambda / 10.0).max(1e-12);
                improved = true;
                if rel_drop < opts.tol || step_norm <= opts.tol * (p_norm + opts.tol) || cost == 0.0 {
                    return LmFit { params: p, cost, iterations: iter, converged: true };
                }
                break;
            }
            lambda *= 10.0;
        }
        if !improved {
            // no descent direction left at any damping: a stationary point
            return LmFit { params: p, cost, iterations: iter, converged: true };
        }
    }
    LmFit { params: p, cost, iterations: opts.max_iter, converged: false }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn recovers_exponential_decay() {
        let xs: Vec<f64> = (0..30).map(|i| i as f64 * 0.2).collect();
        let ys: Vec<f64> = xs.iter().map(|x| 2.5 * (-0.7 * x).exp() + 0.1).collect();
        let fit = levenberg_marquardt(
            |p, r| {
                for (i, x) in xs.iter().enumerate() {
                    r[i] = p[0] * (-p[1] * x).exp() + p[2] - ys[i];
                }
            },
            xs.len(),
            &[1.0, 0.1, 0.0],
            &LmOptions::unbounded(3),
        );
        assert!(fit.converged);
        assert!((fit.params[0] - 2.5).abs() < 1e-6);
        assert!((fit.params[1] - 0.7).abs() < 1e-6);
        assert!((fit.params[2] - 0.1).abs() < 1e-6);
    }

    #[test]
    fn respects_bounds() {
        // unconstrained optimum is p = -1
        let mut opts = LmOptions::unbounded(1);
        opts.lower[0] = 0.5;
        let fit = levenberg_marquardt(|p, r| r[0] = p[0] + 1.0, 1, &[2.0], &opts);
        assert_eq!(fit.params[0], 0.5);
    }
}
