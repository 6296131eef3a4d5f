use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::newton::injection_partials;
use super::{bus_injection, end_flow, LoadVector, Network, VoltageState};
use crate::caseio::{AdmittanceMatrix, NetworkCase, VariableIndex};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Sense {
    Upper,
    Lower,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FlowEnd {
    From,
    To,
}

/// Physical quantity a constraint row bounds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ConstraintKind {
    /// Reactive output of the generator at `index.gen_buses[slot]` (non-slack).
    GenQ { slot: usize },
    SlackP,
    SlackQ,
    /// Voltage magnitude at a load bus.
    LoadV { bus: usize },
    /// Squared apparent flow at one end of a branch.
    Flow { branch: usize, end: FlowEnd },
}

/// One scalar constraint `value ≤ limit`. Lower bounds are stored negated.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConstraintRow {
    #[serde(flatten)]
    pub kind: ConstraintKind,
    pub sense: Sense,
    pub limit: f64,
    /// Multiplier bringing `value − limit` to p.u.-like units for the
    /// logistic surrogate: `1 / (2 f̄)` on squared-flow rows, 1 elsewhere.
    pub scale: f64,
}

impl ConstraintRow {
    pub fn label(&self, case: &NetworkCase, index: &VariableIndex) -> String {
        let dir = match self.sense {
            Sense::Upper => "max",
            Sense::Lower => "min",
        };
        match self.kind {
            ConstraintKind::GenQ { slot } => {
                format!("qg_{dir}@{}", case.buses[index.gen_buses[slot]].id)
            }
            ConstraintKind::SlackP => format!("pg_{dir}@{}", case.buses[index.slack].id),
            ConstraintKind::SlackQ => format!("qg_{dir}@{}", case.buses[index.slack].id),
            ConstraintKind::LoadV { bus } => format!("v_{dir}@{}", case.buses[bus].id),
            ConstraintKind::Flow { branch, end } => {
                let br = &case.branches[branch];
                let (a, b) = match end {
                    FlowEnd::From => (br.from, br.to),
                    FlowEnd::To => (br.to, br.from),
                };
                format!("flow@{}-{}#{branch}", case.buses[a].id, case.buses[b].id)
            }
        }
    }
}

/// Fixed ordering of the constraint rows of a case.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstraintLayout {
    pub rows: Vec<ConstraintRow>,
}

impl ConstraintLayout {
    /// Rows, in order: reactive limits of non-slack generators, slack active
    /// and reactive limits, load-bus voltage limits, branch flow limits at
    /// both ends. Two-sided bounds give an upper and a lower row; infinite
    /// bounds give none.
    pub fn new(case: &NetworkCase, index: &VariableIndex) -> Self {
        let mut rows = Vec::new();
        let mut two_sided = |kind, lo: f64, hi: f64| {
            if hi.is_finite() {
                rows.push(ConstraintRow {
                    kind,
                    sense: Sense::Upper,
                    limit: hi,
                    scale: 1.0,
                });
            }
            if lo.is_finite() {
                rows.push(ConstraintRow {
                    kind,
                    sense: Sense::Lower,
                    limit: -lo,
                    scale: 1.0,
                });
            }
        };
        for (slot, &g) in index.gen_of.iter().enumerate().skip(1) {
            let gen = &case.generators[g];
            two_sided(ConstraintKind::GenQ { slot }, gen.q_min, gen.q_max);
        }
        let slack_gen = &case.generators[index.gen_of[0]];
        two_sided(ConstraintKind::SlackP, slack_gen.p_min, slack_gen.p_max);
        two_sided(ConstraintKind::SlackQ, slack_gen.q_min, slack_gen.q_max);
        for &bus in &index.load_buses {
            let b = &case.buses[bus];
            two_sided(ConstraintKind::LoadV { bus }, b.v_min, b.v_max);
        }
        for (branch, br) in case.branches.iter().enumerate() {
            if br.rate.is_finite() {
                for end in [FlowEnd::From, FlowEnd::To] {
                    rows.push(ConstraintRow {
                        kind: ConstraintKind::Flow { branch, end },
                        sense: Sense::Upper,
                        limit: br.rate * br.rate,
                        scale: 1.0 / (2.0 * br.rate),
                    });
                }
            }
        }
        Self { rows }
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }
}

/// Constraint values `y` with their limits `ȳ`, row-aligned with a layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstraintVector {
    pub values: Vec<f64>,
    pub limits: Vec<f64>,
    pub scales: Vec<f64>,
}

impl ConstraintVector {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Scaled margins `s_i (y_i − ȳ_i)`; positive means violated.
    pub fn residuals(&self) -> Vec<f64> {
        self.values
            .iter()
            .zip(&self.limits)
            .zip(&self.scales)
            .map(|((y, l), s)| s * (y - l))
            .collect()
    }

    pub fn violated(&self) -> impl Iterator<Item = bool> + '_ {
        self.values.iter().zip(&self.limits).map(|(y, l)| y > l)
    }
}

fn signed(sense: Sense, v: f64) -> f64 {
    match sense {
        Sense::Upper => v,
        Sense::Lower => -v,
    }
}

/// Evaluate every constraint row at a power flow solution.
pub fn constraint_values(net: &Network, u: &VoltageState, phi: &LoadVector) -> ConstraintVector {
    let m = net.layout.len();
    let mut values = Vec::with_capacity(m);
    let mut limits = Vec::with_capacity(m);
    let mut scales = Vec::with_capacity(m);
    let y = &net.ybus;
    let index = &net.index;
    let slack = index.slack;
    let mut flow_cache: Option<(usize, super::LineFlow)> = None;

    for row in &net.layout.rows {
        let raw = match row.kind {
            ConstraintKind::GenQ { slot } => {
                let bus = index.gen_buses[slot];
                bus_injection(bus, u, y).1 + phi.q_d[bus]
            }
            ConstraintKind::SlackP => bus_injection(slack, u, y).0 + phi.p_d[slack],
            ConstraintKind::SlackQ => bus_injection(slack, u, y).1 + phi.q_d[slack],
            ConstraintKind::LoadV { bus } => u.v[bus],
            ConstraintKind::Flow { branch, end } => {
                let fl = match flow_cache {
                    Some((b, fl)) if b == branch => fl,
                    _ => {
                        let fl = branch_flow(branch, u, &net.case, y);
                        flow_cache = Some((branch, fl));
                        fl
                    }
                };
                match end {
                    FlowEnd::From => fl.p_ft * fl.p_ft + fl.q_ft * fl.q_ft,
                    FlowEnd::To => fl.p_tf * fl.p_tf + fl.q_tf * fl.q_tf,
                }
            }
        };
        values.push(signed(row.sense, raw));
        limits.push(row.limit);
        scales.push(row.scale);
    }
    ConstraintVector {
        values,
        limits,
        scales,
    }
}

fn branch_flow(
    branch: usize,
    u: &VoltageState,
    case: &NetworkCase,
    y: &AdmittanceMatrix,
) -> super::LineFlow {
    let br = &case.branches[branch];
    let ya = &y.branches[branch];
    let th = u.theta[br.from] - u.theta[br.to];
    let (p_ft, q_ft) = end_flow(u.v[br.from], u.v[br.to], th, ya.ff, ya.ft);
    let (p_tf, q_tf) = end_flow(u.v[br.to], u.v[br.from], -th, ya.tt, ya.tf);
    super::LineFlow {
        p_ft,
        q_ft,
        p_tf,
        q_tf,
        f_ft: p_ft.hypot(q_ft),
        f_tf: p_tf.hypot(q_tf),
    }
}

/// `∇_u` of the active injection at the slack bus (equal to `∇_u p^g_slack`).
pub fn slack_injection_gradient(net: &Network, u: &VoltageState) -> Vec<f64> {
    let mut grad = vec![0.0; net.index.dim_u()];
    for (c, dp, _) in injection_partials(net.index.slack, u, &net.ybus, &net.index) {
        grad[c] += dp;
    }
    grad
}

/// Analytic `∇_u y`, one row per layout row.
pub fn constraint_jacobian(net: &Network, u: &VoltageState) -> DMatrix<f64> {
    let mut jac = DMatrix::zeros(net.layout.len(), net.index.dim_u());
    for r in 0..net.layout.len() {
        row_partials(net, u, r, |c, d| jac[(r, c)] += d);
    }
    jac
}

/// `(∇_u y)ᵀ w` without forming the full Jacobian; rows with zero weight are
/// skipped.
pub fn constraint_vjp(net: &Network, u: &VoltageState, w: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; net.index.dim_u()];
    for (r, &wr) in w.iter().enumerate() {
        if wr != 0.0 {
            row_partials(net, u, r, |c, d| out[c] += wr * d);
        }
    }
    out
}

fn row_partials(net: &Network, u: &VoltageState, r: usize, mut emit: impl FnMut(usize, f64)) {
    let index = &net.index;
    let y = &net.ybus;
    let row = &net.layout.rows[r];
    let sign = signed(row.sense, 1.0);
    match row.kind {
        ConstraintKind::GenQ { slot } => {
            for (c, _, dq) in injection_partials(index.gen_buses[slot], u, y, index) {
                emit(c, sign * dq);
            }
        }
        ConstraintKind::SlackP | ConstraintKind::SlackQ => {
            let active = row.kind == ConstraintKind::SlackP;
            for (c, dp, dq) in injection_partials(index.slack, u, y, index) {
                emit(c, sign * if active { dp } else { dq });
            }
        }
        ConstraintKind::LoadV { bus } => emit(index.vm_col(bus), sign),
        ConstraintKind::Flow { branch, end } => {
            let br = &net.case.branches[branch];
            let ya = &y.branches[branch];
            let (a, b, y_aa, y_ab) = match end {
                FlowEnd::From => (br.from, br.to, ya.ff, ya.ft),
                FlowEnd::To => (br.to, br.from, ya.tt, ya.tf),
            };
            let (va, vb) = (u.v[a], u.v[b]);
            let (s, c) = (u.theta[a] - u.theta[b]).sin_cos();
            let (gr, gi) = (y_ab.re, y_ab.im);
            let k1 = gr * c + gi * s;
            let k2 = gr * s - gi * c;
            let p = va * va * y_aa.re + va * vb * k1;
            let q = -va * va * y_aa.im + va * vb * k2;

            let dp_dva = 2.0 * va * y_aa.re + vb * k1;
            let dp_dvb = va * k1;
            let dp_dta = -va * vb * k2;
            let dq_dva = -2.0 * va * y_aa.im + vb * k2;
            let dq_dvb = va * k2;
            let dq_dta = va * vb * k1;

            emit(index.vm_col(a), 2.0 * (p * dp_dva + q * dq_dva));
            emit(index.vm_col(b), 2.0 * (p * dp_dvb + q * dq_dvb));
            let d_ta = 2.0 * (p * dp_dta + q * dq_dta);
            if let Some(col) = index.angle_col[a] {
                emit(col, d_ta);
            }
            if let Some(col) = index.angle_col[b] {
                emit(col, -d_ta);
            }
        }
    }
}
