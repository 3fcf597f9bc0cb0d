//! Damped Newton iteration with a forward-difference Jacobian and a multi-start ladder.

use nalgebra::{DMatrix, DVector};

#[derive(Debug, Clone, Copy)]
pub struct NewtonOptions {
    /// Relative forward-difference step.
    pub fd_step: f64,
    /// Target max-norm of the residual.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for NewtonOptions {
    fn default() -> Self {
        Self { fd_step: 1e-7, tol: 1e-10, max_iter: 100 }
    }
}

#[derive(Debug, Clone)]
pub struct NewtonSolution {
    pub x: Vec<f64>,
    pub residual: f64,
    pub iterations: usize,
    /// Which start of the ladder converged.
    pub start: usize,
}

/// Final residual reached from each start.
#[derive(Debug, Clone, PartialEq)]
pub struct NewtonTrace {
    pub residuals: Vec<f64>,
    pub iterations: usize,
}

fn max_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |m, x| m.max(x.abs()))
}

fn sq_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum()
}

/// Residual functions return `None` where the system is undefined.
pub fn solve<F>(f: F, starts: &[Vec<f64>], opts: NewtonOptions) -> Result<NewtonSolution, NewtonTrace>
where
    F: Fn(&[f64]) -> Option<Vec<f64>>,
{
    let mut trace = NewtonTrace { residuals: Vec::new(), iterations: 0 };
    for (k, x0) in starts.iter().enumerate() {
        match run(&f, x0, opts) {
            Ok((x, residual, iterations)) => {
                trace.iterations += iterations;
                return Ok(NewtonSolution { x, residual, iterations: trace.iterations, start: k });
            }
            Err((res, iterations)) => {
                trace.iterations += iterations;
                trace.residuals.push(res);
            }
        }
    }
    Err(trace)
}

fn run<F>(f: &F, x0: &[f64], opts: NewtonOptions) -> Result<(Vec<f64>, f64, usize), (f64, usize)>
where
    F: Fn(&[f64]) -> Option<Vec<f64>>,
{
    let n = x0.len();
    let mut x = x0.to_vec();
    let Some(mut fx) = f(&x).filter(|r| r.iter().all(|v| v.is_finite())) else {
        return Err((f64::INFINITY, 0));
    };
    let m = fx.len();
    for it in 0..opts.max_iter {
        let res = max_norm(&fx);
        if res <= opts.tol {
            return Ok((x, res, it));
        }
        let mut jac = DMatrix::<f64>::zeros(m, n);
        for j in 0..n {
            let h = opts.fd_step * x[j].abs().max(1.0);
            let mut xp = x.clone();
            xp[j] += h;
            let Some(fp) = f(&xp) else { return Err((res, it)) };
            for i in 0..m {
                jac[(i, j)] = (fp[i] - fx[i]) / h;
            }
        }
        let rhs = -DVector::from_column_slice(&fx);
        let step = match jac.clone().lu().solve(&rhs) {
            Some(s) if s.iter().all(|v| v.is_finite()) => s,
            _ => match jac.svd(true, true).solve(&rhs, 1e-14) {
                Ok(s) => s,
                Err(_) => return Err((res, it)),
            },
        };
        let f0 = sq_norm(&fx);
        let mut alpha = 1.0;
        let mut accepted = false;
        while alpha > 1e-10 {
            let xt: Vec<f64> = x.iter().zip(step.iter()).map(|(a, s)| a + alpha * s).collect();
            if let Some(ft) = f(&xt).filter(|r| r.iter().all(|v| v.is_finite())) {
                if sq_norm(&ft) <= (1.0 - 1e-4 * alpha) * f0 {
                    x = xt;
                    fx = ft;
                    accepted = true;
                    break;
                }
            }
            alpha *= 0.5;
        }
        if !accepted {
            return if max_norm(&fx) <= opts.tol { Ok((x, max_norm(&fx), it)) } else { Err((res, it)) };
        }
    }
    let res = max_norm(&fx);
    if res <= opts.tol {
        Ok((x, res, opts.max_iter))
    } else {
        Err((res, opts.max_iter))
    }
}

/// Maps an unconstrained variable onto the open interval `(lo, hi)`.
pub fn to_window(y: f64, lo: f64, hi: f64) -> f64 {
    lo + (hi - lo) / (1.0 + (-y).exp())
}

pub fn from_window(t: f64, lo: f64, hi: f64) -> f64 {
    let r = ((t - lo) / (hi - lo)).clamp(1e-12, 1.0 - 1e-12);
    (r / (1.0 - r)).ln()
}

/// Maps an unconstrained variable onto `(lo, ∞)` through a log-gap.
pub fn to_after(y: f64, lo: f64) -> f64 {
    lo + y.exp()
}

pub fn from_after(t: f64, lo: f64) -> f64 {
    (t - lo).max(1e-12).ln()
}
