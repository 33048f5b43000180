//! Small dense Newton solver with a finite-difference Jacobian.
//!
//! The algebraic networks in this crate are tiny (a handful of buses), so a
//! forward-difference Jacobian rebuilt each iteration is simpler and plenty
//! fast. Convergence is judged on the infinity norm of the residual.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

pub fn newton_solve<F>(
    mut x: DVector<f64>,
    mut residual: F,
    tol: f64,
    max_iter: usize,
    context: &str,
) -> Result<(DVector<f64>, usize, f64)>
where
    F: FnMut(&DVector<f64>) -> DVector<f64>,
{
    let n = x.len();
    if n == 0 {
        return Ok((x, 0, 0.0));
    }
    let mut r = residual(&x);
    assert_eq!(r.len(), n, "residual dimension mismatch in {context}");
    let mut norm = r.amax();
    for it in 0..max_iter {
        if norm < tol {
            return Ok((x, it, norm));
        }
        let mut jac = DMatrix::<f64>::zeros(n, n);
        for j in 0..n {
            let h = 1e-7 * x[j].abs().max(1.0);
            let mut xp = x.clone();
            xp[j] += h;
            let rp = residual(&xp);
            for i in 0..n {
                jac[(i, j)] = (rp[i] - r[i]) / h;
            }
        }
        let lu = jac.lu();
        let dx = lu
            .solve(&r)
            .ok_or_else(|| Error::SingularJacobian(context.to_string()))?;
        // Backtracking keeps the iteration on the solution branch nearest
        // the starting point: full steps onto spurious roots (collapsed
        // voltage solutions) raise the residual and are rejected.
        let mut alpha = 1.0;
        let mut accepted = false;
        for _ in 0..12 {
            let cand = &x - &dx * alpha;
            let rc = residual(&cand);
            let nc = rc.amax();
            if nc.is_finite() && nc < norm {
                x = cand;
                r = rc;
                norm = nc;
                accepted = true;
                break;
            }
            alpha *= 0.5;
        }
        if !accepted {
            return Err(Error::NonConvergence {
                iterations: it + 1,
                residual: norm,
            });
        }
    }
    if norm < tol {
        Ok((x, max_iter, norm))
    } else {
        Err(Error::NonConvergence {
            iterations: max_iter,
            residual: norm,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn solves_scalar_quadratic() {
        let x0 = DVector::from_element(1, 2.0);
        let (x, _, _) = newton_solve(
            x0,
            |x| DVector::from_element(1, x[0] * x[0] - 2.0),
            1e-12,
            50,
            "sqrt2",
        )
        .unwrap();
        assert!((x[0] - std::f64::consts::SQRT_2).abs() < 1e-10);
    }

    #[test]
    fn reports_nonconvergence() {
        // No real root.
        let x0 = DVector::from_element(1, 0.5);
        let err = newton_solve(
            x0,
            |x| DVector::from_element(1, x[0] * x[0] + 1.0),
            1e-12,
            25,
            "no-root",
        )
        .unwrap_err();
        match err {
            Error::NonConvergence { .. } | Error::SingularJacobian(_) => {}
            other => panic!("unexpected error {other:?}"),
        }
    }
}
