//! Central finite-difference gradients — the reference oracle every
//! analytic gradient in this crate is tested against.

use crate::error::{Error, Result};
use crate::numkit::matrix::Matrix;

/// Estimate ∂f/∂point entrywise as (f(x+h·e) − f(x−h·e)) / 2h.
///
/// `f` may fail or return a non-finite value; both abort the estimate.
pub fn finite_diff_grad(
    mut f: impl FnMut(&Matrix) -> Result<f64>,
    point: &Matrix,
    step: f64,
) -> Result<Matrix> {
    if !(step > 0.0 && step.is_finite()) {
        return Err(Error::arg("finite_diff_grad", "step", format!("{step} must be > 0")));
    }
    let mut grad = Matrix::zeros(point.rows(), point.cols());
    let mut x = point.clone();
    for i in 0..point.rows() {
        for j in 0..point.cols() {
            let orig = x.get(i, j);
            x.set(i, j, orig + step);
            let up = f(&x)?;
            x.set(i, j, orig - step);
            let down = f(&x)?;
            x.set(i, j, orig);
            if !up.is_finite() || !down.is_finite() {
                return Err(Error::non_finite(
                    "finite_diff_grad",
                    format!("f at perturbed entry ({i},{j})"),
                ));
            }
            grad.set(i, j, (up - down) / (2.0 * step));
        }
    }
    Ok(grad)
}
