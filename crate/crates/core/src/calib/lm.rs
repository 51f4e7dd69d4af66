//! Damped least squares (Levenberg–Marquardt with Marquardt scaling).

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy)]
pub struct LmOptions {
    pub max_iter: usize,
    /// Stop when the relative cost decrease of an accepted step is below this.
    pub rel_tol: f64,
    pub lambda0: f64,
}

impl Default for LmOptions {
    fn default() -> Self {
        Self {
            max_iter: 200,
            rel_tol: 1e-10,
            lambda0: 1e-3,
        }
    }
}

#[derive(Debug, Clone)]
pub struct LmResult {
    pub params: DVector<f64>,
    /// ½·Σr².
    pub cost: f64,
    pub iterations: usize,
}

/// Central-difference Jacobian of `f` at `p`.
pub fn numeric_jacobian<F>(f: &F, p: &DVector<f64>) -> DMatrix<f64>
where
    F: Fn(&DVector<f64>) -> DVector<f64>,
{
    let r0 = f(p);
    let mut j = DMatrix::zeros(r0.len(), p.len());
    for k in 0..p.len() {
        let h = 1e-7 * p[k].abs().max(1e-3);
        let mut a = p.clone();
        let mut b = p.clone();
        a[k] += h;
        b[k] -= h;
        let col = (f(&a) - f(&b)) / (2.0 * h);
        j.set_column(k, &col);
    }
    j
}

fn half_sq(r: &DVector<f64>) -> f64 {
    0.5 * r.norm_squared()
}

/// Minimizes ½‖r(p)‖². `jac` defaults to central differences.
pub fn minimize<F, J>(residuals: F, jac: Option<J>, p0: DVector<f64>, opts: &LmOptions) -> Result<LmResult>
where
    F: Fn(&DVector<f64>) -> DVector<f64>,
    J: Fn(&DVector<f64>) -> DMatrix<f64>,
{
    let mut p = p0;
    let mut r = residuals(&p);
    let mut cost = half_sq(&r);
    if !cost.is_finite() {
        return Err(Error::Fit("residuals are not finite at the starting point".into()));
    }
    let mut lambda = opts.lambda0;
    for it in 1..=opts.max_iter {
        let j = match &jac {
            Some(jf) => jf(&p),
            None => numeric_jacobian(&residuals, &p),
        };
        let jt = j.transpose();
        let a = &jt * &j;
        let g = &jt * &r;
        if g.amax() == 0.0 || cost == 0.0 {
            return Ok(LmResult { params: p, cost, iterations: it });
        }
        let scale = a.diagonal().map(|d| d.max(1e-12 * a.diagonal().amax().max(1e-300)));
        loop {
            let mut m = a.clone();
            for k in 0..m.nrows() {
                m[(k, k)] += lambda * scale[k];
            }
            let step = m.cholesky().map(|c| c.solve(&(-&g)));
            if let Some(delta) = step {
                let trial = &p + &delta;
                let rt = residuals(&trial);
                let ct = half_sq(&rt);
                if ct.is_finite() && ct <= cost {
                    let rel = (cost - ct) / cost.max(f64::MIN_POSITIVE);
                    p = trial;
                    r = rt;
                    cost = ct;
                    lambda = (lambda / 10.0).max(1e-15);
                    if rel < opts.rel_tol {
                        return Ok(LmResult { params: p, cost, iterations: it });
                    }
                    break;
                }
            }
            lambda *= 10.0;
            if lambda > 1e16 {
                // No downhill step exists at working precision: a minimum.
                return Ok(LmResult { params: p, cost, iterations: it });
            }
        }
    }
    Err(Error::Fit(format!(
        "no convergence after {} iterations (cost {cost:e})",
        opts.max_iter
    )))
}

#[cfg(test)]
mod tests {
    use super::*;

    type NoJac = fn(&DVector<f64>) -> DMatrix<f64>;

    #[test]
    fn rosenbrock_minimum() {
        let f = |p: &DVector<f64>| DVector::from_vec(vec![10.0 * (p[1] - p[0] * p[0]), 1.0 - p[0]]);
        let r = minimize(f, None::<NoJac>, DVector::from_vec(vec![-1.2, 1.0]), &LmOptions::default()).unwrap();
        assert!((r.params[0] - 1.0).abs() < 1e-6 && (r.params[1] - 1.0).abs() < 1e-6);
    }

    #[test]
    fn exponential_fit_with_analytic_jacobian() {
        let xs: Vec<f64> = (0..20).map(|i| i as f64 * 0.25).collect();
        let ys: Vec<f64> = xs.iter().map(|x| 2.5 * (-0.7 * x).exp()).collect();
        let f = |p: &DVector<f64>| DVector::from_iterator(xs.len(), xs.iter().zip(&ys).map(|(x, y)| p[0] * (-p[1] * x).exp() - y));
        let j = |p: &DVector<f64>| {
            DMatrix::from_fn(xs.len(), 2, |i, k| {
                let e = (-p[1] * xs[i]).exp();
                if k == 0 {
                    e
                } else {
                    -p[0] * xs[i] * e
                }
            })
        };
        let r = minimize(f, Some(j), DVector::from_vec(vec![1.0, 0.2]), &LmOptions::default()).unwrap();
        assert!((r.params[0] - 2.5).abs() < 1e-8 && (r.params[1] - 0.7).abs() < 1e-8);
    }
}
