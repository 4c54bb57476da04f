//! Exact block least-squares update, used as a verification oracle and an
//! unconstrained baseline.

use nalgebra::{DMatrix, SymmetricEigen};
use ndarray::Array2;

use crate::error::{CpdError, Result};
use crate::exec::Exec;
use crate::kr::{full_mttkrp, gram_hadamard};
use crate::model::FactorModel;
use crate::tensor::DenseTensor;

/// Condition number above which the Gram diagonal is loaded.
const MAX_CONDITION: f64 = 1e12;

/// `argmin_A ‖X_(n) − H_(n) Aᵀ‖²`, i.e. `X_(n)ᵀ H (HᵀH)^{-1}`.
///
/// With `regularize`, an ill-conditioned Gram gets `1e-12·tr(G)/F` added to
/// its diagonal; otherwise a singular Gram is a numerical error.
pub fn als_update(t: &DenseTensor, model: &FactorModel, mode: usize, regularize: bool, exec: Exec) -> Result<Array2<f64>> {
    let rhs = full_mttkrp(t, model, mode, exec)?;
    let gram = gram_hadamard(model, mode);
    let f = gram.nrows();
    let mut g = DMatrix::from_fn(f, f, |i, j| gram[[i, j]]);

    let eig = SymmetricEigen::new(g.clone());
    let (lo, hi) = eig
        .eigenvalues
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let ill = !(lo > 0.0) || hi / lo > MAX_CONDITION;
    if ill {
        let trace = g.trace();
        if !regularize || !(trace > 0.0) {
            return Err(CpdError::Numerical(format!(
                "Gram matrix for mode {mode} is singular (eigenvalues in [{lo:e}, {hi:e}])"
            )));
        }
        let load = 1e-12 * trace / f as f64;
        for i in 0..f {
            g[(i, i)] += load;
        }
    }
    let chol = g
        .cholesky()
        .ok_or_else(|| CpdError::Numerical(format!("Cholesky failed for mode {mode} Gram")))?;
    let b = DMatrix::from_fn(f, rhs.nrows(), |k, i| rhs[[i, k]]);
    let x = chol.solve(&b);
    Ok(Array2::from_shape_fn(rhs.dim(), |(i, k)| x[(k, i)]))
}
