use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{bus_injection, Dispatch, LoadVector, Network, VoltageState};
use crate::caseio::{AdmittanceMatrix, VariableIndex};
use crate::linalg::factor;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PfSettings {
    /// Convergence threshold on the ∞-norm of the mismatch.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for PfSettings {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            max_iter: 20,
        }
    }
}

/// Partial derivatives of `(p_n, q_n)` with respect to `u`, as
/// `(column, ∂p_n, ∂q_n)` triples over the nonzero pattern of row `n`.
pub(crate) fn injection_partials(
    n: usize,
    u: &VoltageState,
    y: &AdmittanceMatrix,
    index: &VariableIndex,
) -> Vec<(usize, f64, f64)> {
    let (p_n, q_n) = bus_injection(n, u, y);
    let vn = u.v[n];
    let mut out = Vec::with_capacity(2 * y.adjacency[n].len());
    for &k in &y.adjacency[n] {
        let (g, b) = (y.g[(n, k)], y.b[(n, k)]);
        if k == n {
            out.push((index.vm_col(n), p_n / vn + g * vn, q_n / vn - b * vn));
            if let Some(c) = index.angle_col[n] {
                out.push((c, -q_n - b * vn * vn, p_n - g * vn * vn));
            }
        } else {
            let vk = u.v[k];
            let (s, c) = (u.theta[n] - u.theta[k]).sin_cos();
            let gc_bs = g * c + b * s;
            let gs_bc = g * s - b * c;
            out.push((index.vm_col(k), vn * gc_bs, vn * gs_bc));
            if let Some(col) = index.angle_col[k] {
                out.push((col, vn * vk * gs_bc, -vn * vk * gc_bs));
            }
        }
    }
    out
}

/// Stacked Jacobian `∇_u [g; ℓ]`, square of size `2N − 1`.
///
/// Row blocks: generator-bus voltage magnitudes (unit rows), active injection
/// at non-slack generator buses, then active and reactive injection at load
/// buses.
pub fn pf_jacobian(u: &VoltageState, y: &AdmittanceMatrix, index: &VariableIndex) -> DMatrix<f64> {
    let dim = index.dim_u();
    let ng = index.n_gen();
    let nl = index.load_buses.len();
    let mut jac = DMatrix::zeros(dim, dim);
    for (j, &bus) in index.gen_buses.iter().enumerate() {
        jac[(j, index.vm_col(bus))] = 1.0;
    }
    for (j, &bus) in index.gen_buses.iter().enumerate().skip(1) {
        let row = ng + j - 1;
        for (c, dp, _) in injection_partials(bus, u, y, index) {
            jac[(row, c)] += dp;
        }
    }
    let base = 2 * ng - 1;
    for (j, &bus) in index.load_buses.iter().enumerate() {
        for (c, dp, dq) in injection_partials(bus, u, y, index) {
            jac[(base + j, c)] += dp;
            jac[(base + nl + j, c)] += dq;
        }
    }
    jac
}

/// Residual of the power flow equations in the row order of [`pf_jacobian`].
pub fn pf_mismatch(net: &Network, u: &VoltageState, x: &Dispatch, phi: &LoadVector) -> Vec<f64> {
    let index = &net.index;
    let ng = index.n_gen();
    let nl = index.load_buses.len();
    let mut f = vec![0.0; index.dim_u()];
    for (j, &bus) in index.gen_buses.iter().enumerate() {
        f[j] = u.v[bus] - x.v_set[j];
    }
    for (j, &bus) in index.gen_buses.iter().enumerate().skip(1) {
        let (p, _) = bus_injection(bus, u, &net.ybus);
        f[ng + j - 1] = p + phi.p_d[bus] - x.p_g[j - 1];
    }
    let base = 2 * ng - 1;
    for (j, &bus) in index.load_buses.iter().enumerate() {
        let (p, q) = bus_injection(bus, u, &net.ybus);
        f[base + j] = p + phi.p_d[bus];
        f[base + nl + j] = q + phi.q_d[bus];
    }
    f
}

fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |m, x| if x.is_nan() { f64::NAN } else { m.max(x.abs()) })
}

/// Newton–Raphson power flow. Generator buses hold their voltage setpoint and
/// (except the slack) their net active injection; load buses hold both net
/// injections; the slack angle is zero.
pub fn solve_pf(
    net: &Network,
    x: &Dispatch,
    phi: &LoadVector,
    warm: Option<&VoltageState>,
    settings: &PfSettings,
) -> Result<VoltageState> {
    let index = &net.index;
    if x.v_set.len() != index.n_gen() || x.p_g.len() + 1 != index.n_gen() {
        return Err(Error::Dimension(format!(
            "dispatch has {}+{} entries, expected {}+{}",
            x.v_set.len(),
            x.p_g.len(),
            index.n_gen(),
            index.n_gen() - 1
        )));
    }
    net.check_loads(phi)?;

    let mut state = warm
        .cloned()
        .unwrap_or_else(|| VoltageState::flat(index.n_bus));
    state.theta[index.slack] = 0.0;
    let mut u = state.to_u(index);

    for iter in 0..=settings.max_iter {
        let f = pf_mismatch(net, &state, x, phi);
        let residual = inf_norm(&f);
        if residual < settings.tol {
            return Ok(state);
        }
        if !residual.is_finite() || iter == settings.max_iter {
            return Err(Error::PfDivergence {
                iterations: iter,
                residual,
            });
        }
        let jac = pf_jacobian(&state, &net.ybus, index);
        let step = factor(jac)?.solve_vec(&DVector::from_vec(f))?;
        for (ui, di) in u.iter_mut().zip(step.iter()) {
            *ui -= di;
        }
        state = VoltageState::from_u(&u, index);
        if state.v.iter().any(|&v| !(v > 0.0)) {
            return Err(Error::PfDivergence {
                iterations: iter + 1,
                residual: f64::INFINITY,
            });
        }
    }
    unreachable!("loop returns on the final iteration")
}
