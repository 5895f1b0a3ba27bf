//! Damped-free Newton iteration on C^n with LU solves.
//!
//! Callers inside their quadratic basin get machine-precision solutions in a
//! handful of steps; everything else should be treated as a failed solve, not
//! massaged. The Jacobian is either supplied analytically or built from
//! central finite differences (holomorphic residuals assumed, so a real step
//! gives the complex derivative at second order).

use crate::error::Error;
use crate::scalar::{cabs, real, to_f64, Scalar};
use crate::Result;
use nalgebra::{DMatrix, DVector};
use num_complex::Complex;

#[derive(Debug, Clone, Copy)]
pub struct NewtonOptions<T: Scalar> {
    /// Acceptance threshold on the residual sup norm.
    pub tol: T,
    pub max_iter: usize,
    /// Base step for finite-difference Jacobians, scaled by (1 + |x_k|).
    pub fd_step: T,
}

impl<T: Scalar> Default for NewtonOptions<T> {
    fn default() -> Self {
        NewtonOptions { tol: real(1e-13), max_iter: 40, fd_step: real(1e-7) }
    }
}

#[derive(Debug, Clone)]
pub struct NewtonOutcome<T: Scalar> {
    pub x: DVector<Complex<T>>,
    pub residual: T,
    pub iterations: usize,
    /// Residual sup norms per iterate, starting with the initial guess.
    pub residual_history: Vec<T>,
    pub tol: T,
}

fn sup_norm<T: Scalar>(v: &DVector<Complex<T>>) -> T {
    v.iter().map(|z| cabs(*z)).fold(T::zero(), T::max)
}

/// Newton with an analytic Jacobian.
pub fn newton_solve<T, F, J>(
    f: F,
    jacobian: J,
    x0: DVector<Complex<T>>,
    opts: NewtonOptions<T>,
) -> Result<NewtonOutcome<T>>
where
    T: Scalar,
    F: Fn(&DVector<Complex<T>>) -> DVector<Complex<T>>,
    J: Fn(&DVector<Complex<T>>) -> DMatrix<Complex<T>>,
{
    let mut x = x0;
    let mut history = Vec::new();
    for it in 0..opts.max_iter {
        let fx = f(&x);
        let res = sup_norm(&fx);
        history.push(res);
        if !to_f64(res).is_finite() {
            return Err(Error::NonConvergence {
                what: "newton iteration (non-finite residual)",
                iterations: it,
                residual: f64::NAN,
            });
        }
        if res <= opts.tol {
            return Ok(NewtonOutcome { x, residual: res, iterations: it, residual_history: history, tol: opts.tol });
        }
        let j = jacobian(&x);
        let step = j
            .lu()
            .solve(&fx)
            .ok_or(Error::SingularJacobian { what: "newton iteration" })?;
        x -= step;
    }
    let res = sup_norm(&f(&x));
    if res <= opts.tol {
        history.push(res);
        return Ok(NewtonOutcome {
            x,
            residual: res,
            iterations: opts.max_iter,
            residual_history: history,
            tol: opts.tol,
        });
    }
    Err(Error::NonConvergence {
        what: "newton iteration",
        iterations: opts.max_iter,
        residual: to_f64(res),
    })
}

/// Newton with a central finite-difference Jacobian.
pub fn newton_solve_fd<T, F>(
    f: F,
    x0: DVector<Complex<T>>,
    opts: NewtonOptions<T>,
) -> Result<NewtonOutcome<T>>
where
    T: Scalar,
    F: Fn(&DVector<Complex<T>>) -> DVector<Complex<T>>,
{
    let jac = |x: &DVector<Complex<T>>| fd_jacobian(&f, x, opts.fd_step);
    newton_solve(&f, jac, x0, opts)
}

/// Central-difference Jacobian with per-coordinate step h (1 + |x_k|).
pub fn fd_jacobian<T, F>(f: &F, x: &DVector<Complex<T>>, base_step: T) -> DMatrix<Complex<T>>
where
    T: Scalar,
    F: Fn(&DVector<Complex<T>>) -> DVector<Complex<T>>,
{
    let n = x.len();
    let m = f(x).len();
    let mut j = DMatrix::<Complex<T>>::zeros(m, n);
    for k in 0..n {
        let h = base_step * (T::one() + cabs(x[k]));
        let mut xp = x.clone();
        let mut xm = x.clone();
        xp[k] += Complex::new(h, T::zero());
        xm[k] -= Complex::new(h, T::zero());
        let df = (f(&xp) - f(&xm)) / Complex::new(h * real::<T>(2.0), T::zero());
        j.set_column(k, &df);
    }
    j
}
