//! Network model: MATPOWER case parsing, admittance assembly and the
//! partition of grid quantities into controls, loads and states.

mod admittance;
mod index;
mod parse;

pub use admittance::{build_admittance, AdmittanceMatrix, BranchAdmittance};
pub use index::{partition_variables, VariableIndex};
pub use parse::{parse_case, read_case, write_matpower};

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Role of a bus in the power flow.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BusKind {
    Slack,
    Generator,
    Load,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BusRecord {
    /// External bus number from the case file.
    pub id: usize,
    pub kind: BusKind,
    pub p_d: f64,
    pub q_d: f64,
    /// Shunt conductance at 1 p.u. voltage.
    pub g_sh: f64,
    /// Shunt susceptance at 1 p.u. voltage.
    pub b_sh: f64,
    pub v_min: f64,
    pub v_max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BranchRecord {
    /// Internal (0-based) index of the from-bus.
    pub from: usize,
    pub to: usize,
    pub r: f64,
    pub x: f64,
    /// Total line-charging susceptance.
    pub b_sh: f64,
    /// Apparent power limit; `f64::INFINITY` when unlimited.
    pub rate: f64,
    /// Off-nominal turns ratio (1.0 for lines).
    pub tap: f64,
    /// Phase shift in radians.
    pub shift: f64,
}

/// Polynomial cost `c2 p^2 + c1 p + c0` with `p` in MW, result in $/h.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostCurve {
    pub c2: f64,
    pub c1: f64,
    pub c0: f64,
}

impl CostCurve {
    /// Cost for an output given in p.u. on `base_mva`.
    pub fn eval(&self, p_pu: f64, base_mva: f64) -> f64 {
        let p = p_pu * base_mva;
        (self.c2 * p + self.c1) * p + self.c0
    }

    /// Derivative of [`eval`](Self::eval) with respect to the p.u. output.
    pub fn marginal(&self, p_pu: f64, base_mva: f64) -> f64 {
        (2.0 * self.c2 * p_pu * base_mva + self.c1) * base_mva
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenRecord {
    /// Internal index of the hosting bus.
    pub bus: usize,
    pub p_min: f64,
    pub p_max: f64,
    pub q_min: f64,
    pub q_max: f64,
    pub cost: CostCurve,
}

/// Immutable grid description, all quantities in per-unit on `base_mva`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkCase {
    pub name: String,
    pub base_mva: f64,
    pub buses: Vec<BusRecord>,
    pub branches: Vec<BranchRecord>,
    pub generators: Vec<GenRecord>,
}

impl NetworkCase {
    pub fn n_bus(&self) -> usize {
        self.buses.len()
    }

    pub fn slack_bus(&self) -> usize {
        self.buses
            .iter()
            .position(|b| b.kind == BusKind::Slack)
            .expect("validated case has a slack bus")
    }

    /// Generator hosted at `bus`, if any.
    pub fn generator_at(&self, bus: usize) -> Option<usize> {
        self.generators.iter().position(|g| g.bus == bus)
    }

    /// Nominal demand as a load vector.
    pub fn nominal_loads(&self) -> crate::acpf::LoadVector {
        crate::acpf::LoadVector {
            p_d: self.buses.iter().map(|b| b.p_d).collect(),
            q_d: self.buses.iter().map(|b| b.q_d).collect(),
        }
    }

    /// Canonical JSON dump used for debugging.
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Check the structural invariants every consumer relies on.
    pub fn validate(&self) -> Result<()> {
        let n = self.buses.len();
        if !(self.base_mva > 0.0) {
            return Err(Error::Validation(format!(
                "base_mva must be positive, got {}",
                self.base_mva
            )));
        }
        if n == 0 {
            return Err(Error::Validation("case has no buses".into()));
        }
        let slacks = self
            .buses
            .iter()
            .filter(|b| b.kind == BusKind::Slack)
            .count();
        match slacks {
            1 => {}
            0 => return Err(Error::Validation("no slack bus".into())),
            k => return Err(Error::Validation(format!("duplicate slack bus ({k} found)"))),
        }
        for b in &self.buses {
            if b.v_min > b.v_max {
                return Err(Error::Validation(format!(
                    "bus {}: v_min {} > v_max {}",
                    b.id, b.v_min, b.v_max
                )));
            }
        }
        for (i, br) in self.branches.iter().enumerate() {
            if br.from >= n || br.to >= n {
                return Err(Error::Validation(format!(
                    "branch {i} refers to a missing bus"
                )));
            }
            if br.from == br.to {
                return Err(Error::Validation(format!("branch {i} is a self-loop")));
            }
        }
        let mut hosted = vec![false; n];
        for (i, g) in self.generators.iter().enumerate() {
            if g.bus >= n {
                return Err(Error::Validation(format!(
                    "generator {i} refers to a missing bus"
                )));
            }
            if hosted[g.bus] {
                return Err(Error::Validation(format!(
                    "bus {} hosts more than one generator",
                    self.buses[g.bus].id
                )));
            }
            hosted[g.bus] = true;
            if g.p_min > g.p_max || g.q_min > g.q_max {
                return Err(Error::Validation(format!(
                    "generator {i} at bus {} has inverted limits",
                    self.buses[g.bus].id
                )));
            }
        }
        for (k, b) in self.buses.iter().enumerate() {
            let expect_gen = b.kind != BusKind::Load;
            if expect_gen != hosted[k] {
                return Err(Error::Validation(format!(
                    "bus {} is {:?} but {} a generator",
                    b.id,
                    b.kind,
                    if hosted[k] { "hosts" } else { "does not host" }
                )));
            }
        }
        Ok(())
    }
}
