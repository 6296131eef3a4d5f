use nalgebra::{DMatrix, DVector, Dyn, LU};

use crate::{Error, Result};

/// Pivot ratio below which a factorization is treated as singular.
const PIVOT_RATIO: f64 = 1e-13;

/// Dense LU factorization with partial pivoting.
pub(crate) struct Factored {
    lu: LU<f64, Dyn, Dyn>,
}

pub(crate) fn factor(m: DMatrix<f64>) -> Result<Factored> {
    let lu = m.lu();
    let u = lu.u();
    let mut max = 0.0f64;
    let mut min = f64::INFINITY;
    for i in 0..u.nrows() {
        let d = u[(i, i)].abs();
        max = max.max(d);
        min = min.min(d);
    }
    if !(max.is_finite() && min > PIVOT_RATIO * max) {
        return Err(Error::SingularJacobian);
    }
    Ok(Factored { lu })
}

impl Factored {
    pub(crate) fn solve(&self, rhs: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        self.lu.solve(rhs).ok_or(Error::SingularJacobian)
    }

    pub(crate) fn solve_vec(&self, rhs: &DVector<f64>) -> Result<DVector<f64>> {
        self.lu.solve(rhs).ok_or(Error::SingularJacobian)
    }
}
