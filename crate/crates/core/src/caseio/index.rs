use serde::{Deserialize, Serialize};

use super::{BusKind, NetworkCase};

/// Positions of every grid quantity inside the flat vectors the solvers use.
///
/// - `x` (controls): voltage setpoints at generator buses (slack first), then
///   active output of every non-slack generator.
/// - `u` (states): all voltage magnitudes in bus order, then the angles of all
///   buses except the slack.
/// - `φ` (loads): active demand at every bus, then reactive demand.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariableIndex {
    pub n_bus: usize,
    pub slack: usize,
    /// Generator buses, slack first then ascending bus order.
    pub gen_buses: Vec<usize>,
    /// Generator record hosted at each entry of `gen_buses`.
    pub gen_of: Vec<usize>,
    pub load_buses: Vec<usize>,
    /// Column of `θ_k` in `u`, `None` for the slack.
    pub angle_col: Vec<Option<usize>>,
    pub x_lower: Vec<f64>,
    pub x_upper: Vec<f64>,
}

impl VariableIndex {
    pub fn n_gen(&self) -> usize {
        self.gen_buses.len()
    }

    pub fn dim_x(&self) -> usize {
        2 * self.gen_buses.len() - 1
    }

    pub fn dim_u(&self) -> usize {
        2 * self.n_bus - 1
    }

    pub fn dim_phi(&self) -> usize {
        2 * self.n_bus
    }

    /// Column of `v_k` in `u`.
    pub fn vm_col(&self, bus: usize) -> usize {
        bus
    }

    /// Position in `x` of the active output at `gen_buses[j]`, `j ≥ 1`.
    pub fn p_slot(&self, j: usize) -> usize {
        debug_assert!(j >= 1);
        self.gen_buses.len() + j - 1
    }
}

pub fn partition_variables(case: &NetworkCase) -> VariableIndex {
    let n = case.n_bus();
    let slack = case.slack_bus();
    let mut gen_buses = vec![slack];
    gen_buses.extend(
        (0..n).filter(|&k| k != slack && case.buses[k].kind == BusKind::Generator),
    );
    let gen_of: Vec<usize> = gen_buses
        .iter()
        .map(|&k| case.generator_at(k).expect("validated generator bus"))
        .collect();
    let load_buses = (0..n)
        .filter(|&k| case.buses[k].kind == BusKind::Load)
        .collect();

    let mut angle_col = vec![None; n];
    let mut col = n;
    for (k, slot) in angle_col.iter_mut().enumerate() {
        if k != slack {
            *slot = Some(col);
            col += 1;
        }
    }

    let mut x_lower = Vec::with_capacity(2 * gen_buses.len() - 1);
    let mut x_upper = Vec::with_capacity(2 * gen_buses.len() - 1);
    for &k in &gen_buses {
        x_lower.push(case.buses[k].v_min);
        x_upper.push(case.buses[k].v_max);
    }
    for &g in &gen_of[1..] {
        x_lower.push(case.generators[g].p_min);
        x_upper.push(case.generators[g].p_max);
    }

    VariableIndex {
        n_bus: n,
        slack,
        gen_buses,
        gen_of,
        load_buses,
        angle_col,
        x_lower,
        x_upper,
    }
}
