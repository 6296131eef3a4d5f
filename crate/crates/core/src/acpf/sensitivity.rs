use nalgebra::{DMatrix, DVector};

use super::{pf_jacobian, VoltageState};
use crate::caseio::{AdmittanceMatrix, VariableIndex};
use crate::linalg::factor;
use crate::Result;

/// `∇_x u` at a power flow solution, from `∇_u[g; ℓ] · ∇_x u = [I; 0]`.
///
/// The result is `(2N − 1) × dim(x)`. A singular stacked Jacobian signals
/// proximity to voltage collapse and is reported as an error.
pub fn sensitivity(
    u: &VoltageState,
    y: &AdmittanceMatrix,
    index: &VariableIndex,
) -> Result<DMatrix<f64>> {
    let jac = pf_jacobian(u, y, index);
    let dim_x = index.dim_x();
    let rhs = DMatrix::from_fn(index.dim_u(), dim_x, |r, c| if r == c { 1.0 } else { 0.0 });
    factor(jac)?.solve(&rhs)
}

/// `(∇_x u)ᵀ g` for a gradient `g` with respect to `u`, using one transposed
/// solve instead of forming the full sensitivity matrix.
pub fn sensitivity_vjp(
    u: &VoltageState,
    y: &AdmittanceMatrix,
    index: &VariableIndex,
    g: &[f64],
) -> Result<Vec<f64>> {
    let jac_t = pf_jacobian(u, y, index).transpose();
    let adj = factor(jac_t)?.solve_vec(&DVector::from_column_slice(g))?;
    Ok(adj.iter().take(index.dim_x()).copied().collect())
}
