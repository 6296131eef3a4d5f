//! AC power flow: injections, branch flows, the Newton solver, the
//! constraint functions `y(x, φ)` and the Jacobians needed to push gradients
//! from constraints and costs back to the dispatch `x`.

mod constraints;
mod newton;
mod sensitivity;

pub use constraints::{
    constraint_jacobian, constraint_values, constraint_vjp, slack_injection_gradient, ConstraintKind,
    ConstraintLayout, ConstraintRow, ConstraintVector, FlowEnd, Sense,
};
pub use newton::{pf_jacobian, pf_mismatch, solve_pf, PfSettings};
pub use sensitivity::{sensitivity, sensitivity_vjp};

use serde::{Deserialize, Serialize};

use crate::caseio::{
    build_admittance, partition_variables, AdmittanceMatrix, NetworkCase, VariableIndex,
};
use crate::{Error, Result};

/// Bus voltages in polar form; the slack angle is pinned at zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VoltageState {
    pub v: Vec<f64>,
    pub theta: Vec<f64>,
}

impl VoltageState {
    pub fn flat(n: usize) -> Self {
        Self {
            v: vec![1.0; n],
            theta: vec![0.0; n],
        }
    }

    /// Pack into `u = [v_1 … v_N, θ_k for k ≠ slack]`.
    pub fn to_u(&self, index: &VariableIndex) -> Vec<f64> {
        let mut u = self.v.clone();
        u.extend(
            self.theta
                .iter()
                .enumerate()
                .filter(|&(k, _)| k != index.slack)
                .map(|(_, &t)| t),
        );
        u
    }

    pub fn from_u(u: &[f64], index: &VariableIndex) -> Self {
        let n = index.n_bus;
        let theta = index
            .angle_col
            .iter()
            .map(|c| c.map_or(0.0, |c| u[c]))
            .collect();
        Self {
            v: u[..n].to_vec(),
            theta,
        }
    }
}

/// Active and reactive demand per bus, p.u.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoadVector {
    pub p_d: Vec<f64>,
    pub q_d: Vec<f64>,
}

impl LoadVector {
    /// Flatten to `φ = [p_d; q_d]`.
    pub fn to_phi(&self) -> Vec<f64> {
        let mut phi = self.p_d.clone();
        phi.extend_from_slice(&self.q_d);
        phi
    }

    pub fn from_phi(phi: &[f64]) -> Self {
        let n = phi.len() / 2;
        Self {
            p_d: phi[..n].to_vec(),
            q_d: phi[n..].to_vec(),
        }
    }

    pub fn total_active(&self) -> f64 {
        self.p_d.iter().sum()
    }
}

/// Generator setpoints: voltage magnitudes at generator buses (slack first)
/// and active outputs of the non-slack units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dispatch {
    pub v_set: Vec<f64>,
    pub p_g: Vec<f64>,
}

impl Dispatch {
    pub fn to_x(&self) -> Vec<f64> {
        let mut x = self.v_set.clone();
        x.extend_from_slice(&self.p_g);
        x
    }

    pub fn from_x(x: &[f64], index: &VariableIndex) -> Self {
        let ng = index.n_gen();
        Self {
            v_set: x[..ng].to_vec(),
            p_g: x[ng..].to_vec(),
        }
    }

    /// Midpoint of the box `X`.
    pub fn midpoint(index: &VariableIndex) -> Self {
        let x: Vec<f64> = index
            .x_lower
            .iter()
            .zip(&index.x_upper)
            .map(|(l, u)| 0.5 * (l + u))
            .collect();
        Self::from_x(&x, index)
    }

    pub fn within(&self, index: &VariableIndex) -> bool {
        self.to_x()
            .iter()
            .zip(index.x_lower.iter().zip(&index.x_upper))
            .all(|(x, (l, u))| *l <= *x && *x <= *u)
    }
}

/// Everything derived once from a case and shared read-only by the solvers.
#[derive(Debug, Clone)]
pub struct Network {
    pub case: NetworkCase,
    pub ybus: AdmittanceMatrix,
    pub index: VariableIndex,
    pub layout: ConstraintLayout,
}

impl Network {
    pub fn new(case: NetworkCase) -> Result<Self> {
        case.validate()?;
        let ybus = build_admittance(&case)?;
        let index = partition_variables(&case);
        let layout = ConstraintLayout::new(&case, &index);
        Ok(Self {
            case,
            ybus,
            index,
            layout,
        })
    }

    pub fn check_loads(&self, phi: &LoadVector) -> Result<()> {
        let n = self.case.n_bus();
        if phi.p_d.len() != n || phi.q_d.len() != n {
            return Err(Error::Dimension(format!(
                "load vector has {}/{} entries, network has {n} buses",
                phi.p_d.len(),
                phi.q_d.len()
            )));
        }
        if !phi.p_d.iter().chain(&phi.q_d).all(|v| v.is_finite()) {
            return Err(Error::Validation("load vector has non-finite entries".into()));
        }
        Ok(())
    }

    /// Total generation cost for a dispatch and its power flow solution.
    pub fn cost(&self, x: &Dispatch, u: &VoltageState, phi: &LoadVector) -> f64 {
        generation(self, x, u, phi)
            .iter()
            .zip(&self.index.gen_of)
            .map(|(p, &g)| self.case.generators[g].cost.eval(*p, self.case.base_mva))
            .sum()
    }
}

/// Active output of every generator, ordered as `index.gen_buses`. The slack
/// output is recovered from the power balance at the slack bus.
pub fn generation(net: &Network, x: &Dispatch, u: &VoltageState, phi: &LoadVector) -> Vec<f64> {
    let s = net.index.slack;
    let (p_slack, _) = bus_injection(s, u, &net.ybus);
    let mut out = Vec::with_capacity(net.index.n_gen());
    out.push(p_slack + phi.p_d[s]);
    out.extend_from_slice(&x.p_g);
    out
}

/// Net injection `(p_n, q_n)` at one bus.
pub(crate) fn bus_injection(n: usize, u: &VoltageState, y: &AdmittanceMatrix) -> (f64, f64) {
    let mut p = 0.0;
    let mut q = 0.0;
    for &k in &y.adjacency[n] {
        let (s, c) = (u.theta[n] - u.theta[k]).sin_cos();
        let (g, b) = (y.g[(n, k)], y.b[(n, k)]);
        p += u.v[k] * (g * c + b * s);
        q += u.v[k] * (g * s - b * c);
    }
    (u.v[n] * p, u.v[n] * q)
}

/// Net active and reactive injections at every bus.
pub fn injections(u: &VoltageState, y: &AdmittanceMatrix) -> (Vec<f64>, Vec<f64>) {
    (0..y.n()).map(|n| bus_injection(n, u, y)).unzip()
}

/// Power flowing on one branch, measured at both ends.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LineFlow {
    pub p_ft: f64,
    pub q_ft: f64,
    pub p_tf: f64,
    pub q_tf: f64,
    pub f_ft: f64,
    pub f_tf: f64,
}

/// Complex power `S = V_a conj(y_aa V_a + y_ab V_b)` leaving end `a`.
pub(crate) fn end_flow(
    v_a: f64,
    v_b: f64,
    theta_ab: f64,
    y_aa: nalgebra::Complex<f64>,
    y_ab: nalgebra::Complex<f64>,
) -> (f64, f64) {
    let (s, c) = theta_ab.sin_cos();
    let vv = v_a * v_b;
    let p = v_a * v_a * y_aa.re + vv * (y_ab.re * c + y_ab.im * s);
    let q = -v_a * v_a * y_aa.im + vv * (y_ab.re * s - y_ab.im * c);
    (p, q)
}

pub fn line_flows(u: &VoltageState, case: &NetworkCase, y: &AdmittanceMatrix) -> Vec<LineFlow> {
    case.branches
        .iter()
        .zip(&y.branches)
        .map(|(br, ya)| {
            let (f, t) = (br.from, br.to);
            let th = u.theta[f] - u.theta[t];
            let (p_ft, q_ft) = end_flow(u.v[f], u.v[t], th, ya.ff, ya.ft);
            let (p_tf, q_tf) = end_flow(u.v[t], u.v[f], -th, ya.tt, ya.tf);
            LineFlow {
                p_ft,
                q_ft,
                p_tf,
                q_tf,
                f_ft: p_ft.hypot(q_ft),
                f_tf: p_tf.hypot(q_tf),
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::caseio::parse_case;

    fn two_bus() -> Network {
        Network::new(parse_case(include_str!("../../fixtures/case2.m")).unwrap()).unwrap()
    }

    #[test]
    fn flat_state_has_no_injection_on_lossless_network() {
        let net = two_bus();
        let (p, q) = injections(&VoltageState::flat(2), &net.ybus);
        assert!(p.iter().chain(&q).all(|v| v.abs() < 1e-15));
        for fl in line_flows(&VoltageState::flat(2), &net.case, &net.ybus) {
            assert_eq!(fl.f_ft, 0.0);
            assert_eq!(fl.f_tf, 0.0);
        }
    }

    #[test]
    fn two_bus_transfer() {
        let net = two_bus();
        let u = VoltageState {
            v: vec![1.0, 1.0],
            theta: vec![0.0, -0.1],
        };
        let (p, _) = injections(&u, &net.ybus);
        let expected = 10.0 * 0.1f64.sin();
        assert!((p[0] - expected).abs() < 1e-12);
        assert!((p[0] - 0.9983341664682815).abs() < 1e-12);
        let fl = line_flows(&u, &net.case, &net.ybus)[0];
        assert!((fl.p_ft - expected).abs() < 1e-12);
        // lossless: what leaves one end arrives at the other
        assert!((fl.p_ft + fl.p_tf).abs() < 1e-12);
    }

    #[test]
    fn state_packing_round_trips() {
        let net =
            Network::new(parse_case(include_str!("../../fixtures/case118.m")).unwrap()).unwrap();
        let mut u = VoltageState::flat(118);
        for k in 0..118 {
            u.v[k] = 1.0 + 0.001 * k as f64;
            if k != net.index.slack {
                u.theta[k] = -0.002 * k as f64;
            }
        }
        let packed = u.to_u(&net.index);
        assert_eq!(packed.len(), net.index.dim_u());
        assert_eq!(VoltageState::from_u(&packed, &net.index), u);
    }
}
