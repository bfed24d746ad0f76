//! Bounded Levenberg–Marquardt least squares.
//!
//! Minimises `Σ (y_i − f(p, x_i))²` with uniform weights. Each trial step
//! solves `(JᵀJ + λ·D) δ = Jᵀr` where `D` is the diagonal of `JᵀJ` (floored
//! so that flat directions stay regular), then projects the trial point onto
//! the parameter box. Accepted steps shrink `λ`, rejected ones grow it.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

/// A curve `y = f(params, x)`.
///
/// Implementors may override [`Model::partials`] with analytic derivatives;
/// otherwise the engine falls back to central finite differences.
pub trait Model {
    fn n_params(&self) -> usize;

    fn eval(&self, params: &[f64], x: f64) -> f64;

    /// Writes `∂f/∂p_k` at `x` into `out` and returns `true`, or returns
    /// `false` when no analytic form exists.
    fn partials(&self, _params: &[f64], _x: f64, _out: &mut [f64]) -> bool {
        false
    }
}

/// Wraps a closure as a [`Model`] without analytic partials.
pub struct FnModel<F> {
    n_params: usize,
    f: F,
}

impl<F: Fn(&[f64], f64) -> f64> FnModel<F> {
    pub fn new(n_params: usize, f: F) -> Self {
        Self { n_params, f }
    }
}

impl<F: Fn(&[f64], f64) -> f64> Model for FnModel<F> {
    fn n_params(&self) -> usize {
        self.n_params
    }

    fn eval(&self, params: &[f64], x: f64) -> f64 {
        (self.f)(params, x)
    }
}

/// Closed interval for one parameter; either end may be infinite.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bound {
    pub lo: f64,
    pub hi: f64,
}

impl Bound {
    pub const FREE: Bound = Bound {
        lo: f64::NEG_INFINITY,
        hi: f64::INFINITY,
    };

    pub fn new(lo: f64, hi: f64) -> Self {
        Self { lo, hi }
    }

    pub fn at_least(lo: f64) -> Self {
        Self {
            lo,
            hi: f64::INFINITY,
        }
    }

    pub fn clamp(&self, v: f64) -> f64 {
        v.max(self.lo).min(self.hi)
    }

    pub fn contains(&self, v: f64) -> bool {
        v >= self.lo && v <= self.hi
    }
}

pub struct FitProblem<'a, M: ?Sized> {
    pub model: &'a M,
    pub x: &'a [f64],
    pub y: &'a [f64],
    pub initial: Vec<f64>,
    pub bounds: Option<Vec<Bound>>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitOptions {
    pub max_iter: usize,
    /// Converged when the relative cost decrease of an accepted step falls
    /// below this.
    pub tol_cost: f64,
    /// Converged when `‖δ‖ < tol_step · (‖p‖ + tol_step)`.
    pub tol_step: f64,
    pub damping_init: f64,
    pub damping_cap: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            max_iter: 200,
            tol_cost: 1e-10,
            tol_step: 1e-10,
            damping_init: 1e-3,
            damping_cap: 1e10,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitResult {
    pub params: Vec<f64>,
    /// `y − f(params, x)`.
    pub residuals: Vec<f64>,
    pub converged: bool,
    pub iterations: usize,
    /// Sum of squared residuals.
    pub cost: f64,
}

impl FitResult {
    pub fn max_abs_residual(&self) -> f64 {
        self.residuals.iter().fold(0.0, |m, r| m.max(r.abs()))
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LsqError {
    #[error("x and y have different lengths ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("{points} data points cannot determine {params} parameters")]
    Underdetermined { points: usize, params: usize },
    #[error("initial parameter vector has {got} entries, model needs {want}")]
    ParamCount { got: usize, want: usize },
    #[error("bounds invalid or initial parameter {0} outside its bound")]
    Bounds(usize),
    #[error("model produced a non-finite value at iteration {iteration}")]
    NonFinite { iteration: usize },
    #[error("normal equations stayed singular up to damping {damping:e}")]
    Singular { damping: f64 },
}

fn project(params: &mut [f64], bounds: Option<&[Bound]>) {
    if let Some(b) = bounds {
        for (p, b) in params.iter_mut().zip(b) {
            *p = b.clamp(*p);
        }
    }
}

fn residuals_into<M: Model + ?Sized>(
    model: &M,
    params: &[f64],
    x: &[f64],
    y: &[f64],
    out: &mut [f64],
) -> Option<f64> {
    let mut cost = 0.0;
    for ((r, &xi), &yi) in out.iter_mut().zip(x).zip(y) {
        let v = model.eval(params, xi);
        if !v.is_finite() {
            return None;
        }
        *r = yi - v;
        cost += *r * *r;
    }
    cost.is_finite().then_some(cost)
}

/// Jacobian of the model output `∂f(x_i)/∂p_k`, analytic when available.
pub fn jacobian<M: Model + ?Sized>(model: &M, params: &[f64], x: &[f64]) -> DMatrix<f64> {
    let n = params.len();
    let mut jac = DMatrix::zeros(x.len(), n);
    let mut row = vec![0.0; n];
    let mut probe = params.to_vec();
    for (i, &xi) in x.iter().enumerate() {
        if !model.partials(params, xi, &mut row) {
            for k in 0..n {
                let h = 1e-6 * params[k].abs().max(1e-3);
                probe[k] = params[k] + h;
                let up = model.eval(&probe, xi);
                probe[k] = params[k] - h;
                let down = model.eval(&probe, xi);
                probe[k] = params[k];
                row[k] = (up - down) / (2.0 * h);
            }
        }
        for k in 0..n {
            jac[(i, k)] = row[k];
        }
    }
    jac
}

/// Runs the damped Gauss–Newton iteration.
///
/// The returned cost never exceeds the cost at the (projected) initial
/// parameters.
pub fn fit<M: Model + ?Sized>(
    problem: &FitProblem<'_, M>,
    options: &FitOptions,
) -> Result<FitResult, LsqError> {
    let (x, y) = (problem.x, problem.y);
    let n = problem.model.n_params();
    if x.len() != y.len() {
        return Err(LsqError::LengthMismatch(x.len(), y.len()));
    }
    if problem.initial.len() != n {
        return Err(LsqError::ParamCount {
            got: problem.initial.len(),
            want: n,
        });
    }
    if x.len() < n {
        return Err(LsqError::Underdetermined {
            points: x.len(),
            params: n,
        });
    }
    let bounds = problem.bounds.as_deref();
    if let Some(b) = bounds {
        if b.len() != n {
            return Err(LsqError::Bounds(b.len()));
        }
        for (k, (bk, &p)) in b.iter().zip(&problem.initial).enumerate() {
            if !(bk.lo <= bk.hi) || !bk.contains(p) {
                return Err(LsqError::Bounds(k));
            }
        }
    }

    let mut params = problem.initial.clone();
    project(&mut params, bounds);
    let mut resid = vec![0.0; x.len()];
    let mut cost = residuals_into(problem.model, &params, x, y, &mut resid)
        .ok_or(LsqError::NonFinite { iteration: 0 })?;

    let mut trial = params.clone();
    let mut trial_resid = resid.clone();
    let mut damping = options.damping_init;
    let mut converged = cost == 0.0;
    let mut iterations = 0;

    'outer: while !converged && iterations < options.max_iter {
        iterations += 1;
        let jac = jacobian(problem.model, &params, x);
        if jac.iter().any(|v| !v.is_finite()) {
            return Err(LsqError::NonFinite {
                iteration: iterations,
            });
        }
        let jt = jac.transpose();
        let jtj = &jt * &jac;
        let jtr = &jt * DVector::from_column_slice(&resid);
        let diag_max = (0..n).map(|k| jtj[(k, k)]).fold(0.0f64, f64::max);
        let floor = (diag_max * 1e-12).max(1e-300);

        // Inner loop: raise damping until a step lowers the cost.
        loop {
            let mut a = jtj.clone();
            for k in 0..n {
                a[(k, k)] += damping * jtj[(k, k)].max(floor);
            }
            let step = match a.cholesky() {
                Some(ch) => ch.solve(&jtr),
                None => {
                    damping *= 10.0;
                    if damping > options.damping_cap {
                        return Err(LsqError::Singular { damping });
                    }
                    continue;
                }
            };
            for k in 0..n {
                trial[k] = params[k] + step[k];
            }
            project(&mut trial, bounds);
            let step_norm = trial
                .iter()
                .zip(&params)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            let param_norm = params.iter().map(|p| p * p).sum::<f64>().sqrt();
            let small_step = step_norm < options.tol_step * (param_norm + options.tol_step);

            let new_cost = residuals_into(problem.model, &trial, x, y, &mut trial_resid).ok_or(
                LsqError::NonFinite {
                    iteration: iterations,
                },
            )?;

            if new_cost <= cost {
                let rel = if cost > 0.0 {
                    (cost - new_cost) / cost
                } else {
                    0.0
                };
                std::mem::swap(&mut params, &mut trial);
                std::mem::swap(&mut resid, &mut trial_resid);
                cost = new_cost;
                damping = (damping / 10.0).max(1e-15);
                converged = cost == 0.0 || rel < options.tol_cost || small_step;
                continue 'outer;
            }
            if small_step {
                // No descent left at machine resolution.
                converged = true;
                continue 'outer;
            }
            damping *= 10.0;
            if damping > options.damping_cap {
                break 'outer;
            }
        }
    }

    Ok(FitResult {
        params,
        residuals: resid,
        converged,
        iterations,
        cost,
    })
}
