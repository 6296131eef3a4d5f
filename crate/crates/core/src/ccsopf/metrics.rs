use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::acpf::{constraint_values, solve_pf, ConstraintVector, LoadVector, Network, PfSettings};
use crate::policy::{forward, PolicyParams};
use crate::{Error, Result};

pub const METRICS_SCHEMA_VERSION: u32 = 1;

/// Test-set performance of a dispatch policy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub schema_version: u32,
    pub policy: String,
    pub case: String,
    pub n_samples: usize,
    /// Samples without a power flow solution; they count as violating
    /// every constraint.
    pub pf_failures: usize,
    pub failed_samples: Vec<usize>,
    /// Samples where an optimizer stopped before convergence.
    #[serde(default)]
    pub unconverged: usize,
    pub constraint_labels: Vec<String>,
    pub violation_frequency: Vec<f64>,
    pub max_violation_pct: f64,
    pub worst_constraint: Option<String>,
    /// Mean over samples with a power flow solution.
    pub average_cost: Option<f64>,
    /// `null` for failed samples.
    pub sample_costs: Vec<Option<f64>>,
    pub eval_time_s: f64,
}

impl Metrics {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let value: serde_json::Value = serde_json::from_str(text)?;
        let version = value.get("schema_version").and_then(|v| v.as_u64());
        if version != Some(u64::from(METRICS_SCHEMA_VERSION)) {
            return Err(Error::Validation(format!(
                "metrics schema version {version:?}, expected {METRICS_SCHEMA_VERSION}"
            )));
        }
        Ok(serde_json::from_value(value)?)
    }

    pub fn to_markdown(&self) -> String {
        let mut out = format!(
            "| policy | case | samples | max violation [%] | average cost [$] | PF failures | eval time [s] |\n\
             |---|---|---|---|---|---|---|\n\
             | {} | {} | {} | {:.2} | {} | {} | {:.3} |\n",
            self.policy,
            self.case,
            self.n_samples,
            self.max_violation_pct,
            self.average_cost.map_or("n/a".to_string(), |c| format!("{c:.2}")),
            self.pf_failures,
            self.eval_time_s
        );
        if let Some(w) = &self.worst_constraint {
            out.push_str(&format!("\nMost violated constraint: `{w}`\n"));
        }
        out
    }
}

/// Accumulates per-sample outcomes into [`Metrics`].
pub struct MetricsBuilder {
    policy: String,
    case: String,
    labels: Vec<String>,
    counts: Vec<usize>,
    costs: Vec<Option<f64>>,
    failed: Vec<usize>,
    unconverged: usize,
    started: Instant,
}

impl MetricsBuilder {
    pub fn new(net: &Network, policy: impl Into<String>) -> Self {
        Self {
            policy: policy.into(),
            case: net.case.name.clone(),
            labels: net
                .layout
                .rows
                .iter()
                .map(|r| r.label(&net.case, &net.index))
                .collect(),
            counts: vec![0; net.layout.len()],
            costs: Vec::new(),
            failed: Vec::new(),
            unconverged: 0,
            started: Instant::now(),
        }
    }

    pub fn record(&mut self, cost: f64, y: &ConstraintVector) {
        for (c, v) in self.counts.iter_mut().zip(y.violated()) {
            *c += usize::from(v);
        }
        self.costs.push(Some(cost));
    }

    pub fn record_failure(&mut self) {
        self.failed.push(self.costs.len());
        self.counts.iter_mut().for_each(|c| *c += 1);
        self.costs.push(None);
    }

    pub fn record_unconverged(&mut self) {
        self.unconverged += 1;
    }

    pub fn finish(self) -> Metrics {
        let elapsed = self.started.elapsed().as_secs_f64();
        let n = self.costs.len();
        let freq: Vec<f64> = self
            .counts
            .iter()
            .map(|&c| if n == 0 { 0.0 } else { c as f64 / n as f64 })
            .collect();
        let worst = freq
            .iter()
            .enumerate()
            .filter(|(_, &f)| f > 0.0)
            .max_by(|a, b| a.1.total_cmp(b.1).then(b.0.cmp(&a.0)))
            .map(|(i, _)| i);
        let ok: Vec<f64> = self.costs.iter().flatten().copied().collect();
        Metrics {
            schema_version: METRICS_SCHEMA_VERSION,
            policy: self.policy,
            case: self.case,
            n_samples: n,
            pf_failures: self.failed.len(),
            failed_samples: self.failed,
            unconverged: self.unconverged,
            max_violation_pct: 100.0 * freq.iter().copied().fold(0.0, f64::max),
            worst_constraint: worst.map(|i| self.labels[i].clone()),
            constraint_labels: self.labels,
            violation_frequency: freq,
            average_cost: (!ok.is_empty()).then(|| ok.iter().sum::<f64>() / ok.len() as f64),
            sample_costs: self.costs,
            eval_time_s: elapsed,
        }
    }
}

/// Run the policy on every sample and score it with the hard indicator.
pub fn evaluate(
    net: &Network,
    params: &PolicyParams,
    samples: &[LoadVector],
    pf: &PfSettings,
) -> Result<Metrics> {
    params.check_network(&net.index)?;
    let mut builder = MetricsBuilder::new(net, format!("dnn-{}", params.mode));
    for phi in samples {
        let x = forward(params, phi)?;
        match solve_pf(net, &x, phi, None, pf) {
            Ok(u) => builder.record(net.cost(&x, &u, phi), &constraint_values(net, &u, phi)),
            Err(Error::PfDivergence { .. } | Error::SingularJacobian) => builder.record_failure(),
            Err(e) => return Err(e),
        }
    }
    Ok(builder.finish())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::caseio::parse_case;

    fn vector(values: &[f64]) -> ConstraintVector {
        ConstraintVector {
            values: values.to_vec(),
            limits: vec![1.0; values.len()],
            scales: vec![1.0; values.len()],
        }
    }

    #[test]
    fn counting_one_violation_in_three() {
        let net =
            Network::new(parse_case(include_str!("../../fixtures/case2.m")).unwrap()).unwrap();
        let m = net.layout.len();
        let mut b = MetricsBuilder::new(&net, "test");
        b.record(10.0, &vector(&vec![0.0; m]));
        let mut v = vec![0.0; m];
        v[1] = 2.0;
        b.record(20.0, &vector(&v));
        b.record(30.0, &vector(&vec![0.0; m]));
        let metrics = b.finish();
        assert_eq!(metrics.violation_frequency[1], 1.0 / 3.0);
        assert!((metrics.max_violation_pct - 100.0 / 3.0).abs() < 1e-12);
        assert_eq!(metrics.average_cost, Some(20.0));
        assert_eq!(metrics.worst_constraint.as_deref(), Some(metrics.constraint_labels[1].as_str()));
    }

    #[test]
    fn failures_violate_everything_and_skip_the_mean() {
        let net =
            Network::new(parse_case(include_str!("../../fixtures/case2.m")).unwrap()).unwrap();
        let m = net.layout.len();
        let mut b = MetricsBuilder::new(&net, "test");
        b.record(10.0, &vector(&vec![0.0; m]));
        b.record_failure();
        let metrics = b.finish();
        assert_eq!(metrics.pf_failures, 1);
        assert_eq!(metrics.failed_samples, vec![1]);
        assert!(metrics.violation_frequency.iter().all(|&f| f == 0.5));
        assert_eq!(metrics.average_cost, Some(10.0));
        assert_eq!(metrics.sample_costs, vec![Some(10.0), None]);
    }

    #[test]
    fn schema_version_is_checked() {
        let net =
            Network::new(parse_case(include_str!("../../fixtures/case2.m")).unwrap()).unwrap();
        let metrics = MetricsBuilder::new(&net, "x").finish();
        let text = metrics.to_json().unwrap();
        assert!(Metrics::from_json(&text).is_ok());
        let bumped = text.replace("\"schema_version\": 1", "\"schema_version\": 9");
        assert!(Metrics::from_json(&bumped).is_err());
    }
}
