//! Symmetric positive-definite solves used by the IRLS inner step.
//!
//! The normal-equation matrices here stay dense (p × p in the number of
//! regression columns); sparsity in high-cardinality designs is exploited
//! upstream when the cross products are accumulated row by row.

use nalgebra::{Cholesky, DMatrix, DVector};

use crate::error::{Error, Result};

/// Solve A x = rhs for symmetric positive-definite A via Cholesky.
///
/// A non-SPD matrix signals a collinear design and is reported as an error.
/// The residual is verified against 1e-8·‖rhs‖.
pub fn solve_spd(matrix: &DMatrix<f64>, rhs: &DVector<f64>) -> Result<DVector<f64>> {
    let chol = cholesky(matrix)?;
    let x = chol.solve(rhs);
    let residual = matrix * &x - rhs;
    let bound = 1e-8 * rhs.norm().max(f64::MIN_POSITIVE);
    if residual.norm() > bound {
        return Err(Error::computation(format!(
            "SPD solve residual {:.3e} exceeds bound {:.3e} (ill-conditioned system)",
            residual.norm(),
            bound
        )));
    }
    Ok(x)
}

/// Cholesky factorization, mapping failure to a collinearity error.
pub fn cholesky(matrix: &DMatrix<f64>) -> Result<Cholesky<f64, nalgebra::Dyn>> {
    if matrix.nrows() != matrix.ncols() {
        return Err(Error::validation(format!(
            "SPD solve requires a square matrix, got {}x{}",
            matrix.nrows(),
            matrix.ncols()
        )));
    }
    matrix.clone().cholesky().ok_or_else(|| {
        Error::computation("matrix is not positive definite (collinear design?)".to_string())
    })
}

/// Inverse of an SPD matrix through its Cholesky factor.
pub fn spd_inverse(matrix: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    Ok(cholesky(matrix)?.inverse())
}
