//! Central-difference Jacobians.

use nalgebra::{DMatrix, DVector};

/// Central-difference Jacobian of `f` at `x0` with a fixed absolute step.
pub fn central_jacobian<F>(f: F, x0: &DVector<f64>, h: f64) -> DMatrix<f64>
where
    F: Fn(&DVector<f64>) -> DVector<f64>,
{
    let n = x0.len();
    let f0 = f(x0);
    let m = f0.len();
    let mut jac = DMatrix::<f64>::zeros(m, n);
    for j in 0..n {
        let mut xp = x0.clone();
        xp[j] += h;
        let mut xm = x0.clone();
        xm[j] -= h;
        let fp = f(&xp);
        let fm = f(&xm);
        for i in 0..m {
            jac[(i, j)] = (fp[i] - fm[i]) / (2.0 * h);
        }
    }
    jac
}
