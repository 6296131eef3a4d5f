use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::acpf::PfSettings;
use crate::policy::PolicyMode;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub delta: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            delta: 1e-8,
        }
    }
}

/// Hyperparameters of a training run. Missing keys take their defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    /// Allowed violation probability per constraint.
    pub alpha: f64,
    /// Logistic sharpness.
    pub epsilon: f64,
    pub epochs: usize,
    /// Initial primal (Adam) step, halved every epoch.
    pub mu0: f64,
    /// Initial dual step, decayed as `ν0 / √k`.
    pub nu0: f64,
    /// Relative load variation radius `R`.
    #[serde(alias = "R")]
    pub radius: f64,
    pub n_train: usize,
    pub n_test: usize,
    pub seed: u64,
    pub adam: AdamConfig,
    pub pf: PfSettings,
    pub mode: PolicyMode,
    /// Fraction of power flow failures in one epoch that aborts training.
    pub max_failure_fraction: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            alpha: 0.05,
            epsilon: 0.01,
            epochs: 5,
            mu0: 1e-3,
            nu0: 3e-4,
            radius: 0.1,
            n_train: 800,
            n_test: 200,
            seed: 0,
            adam: AdamConfig::default(),
            pf: PfSettings::default(),
            mode: PolicyMode::Full,
            max_failure_fraction: 0.2,
        }
    }
}

impl TrainConfig {
    /// Read a `.toml` or `.json` file (chosen by extension; JSON otherwise).
    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| {
            Error::Config(format!("cannot read config {}: {e}", path.display()))
        })?;
        let cfg: Self = if path.extension().is_some_and(|e| e == "toml") {
            toml::from_str(&text).map_err(|e| Error::Config(e.to_string()))?
        } else {
            serde_json::from_str(&text).map_err(|e| Error::Config(e.to_string()))?
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::Config(what.to_string()));
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return bad("alpha must lie in (0, 1)");
        }
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return bad("epsilon must be positive");
        }
        if !(self.mu0 >= 0.0 && self.mu0.is_finite()) {
            return bad("mu0 must be non-negative");
        }
        if !(self.nu0 >= 0.0 && self.nu0.is_finite()) {
            return bad("nu0 must be non-negative");
        }
        if !(0.0..1.0).contains(&self.radius) {
            return bad("radius must lie in [0, 1)");
        }
        if self.n_train == 0 || self.n_test == 0 {
            return bad("n_train and n_test must be positive");
        }
        let a = &self.adam;
        if !((0.0..1.0).contains(&a.beta1) && (0.0..1.0).contains(&a.beta2) && a.delta > 0.0) {
            return bad("adam needs beta1, beta2 in [0, 1) and delta > 0");
        }
        if !(self.pf.tol > 0.0) || self.pf.max_iter == 0 {
            return bad("pf needs tol > 0 and max_iter ≥ 1");
        }
        if !(0.0..=1.0).contains(&self.max_failure_fraction) {
            return bad("max_failure_fraction must lie in [0, 1]");
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn partial_toml_keeps_defaults() {
        let cfg: TrainConfig = toml::from_str("alpha = 0.1\nR = 0.2\n[adam]\nbeta1 = 0.8\n").unwrap();
        assert_eq!(cfg.alpha, 0.1);
        assert_eq!(cfg.radius, 0.2);
        assert_eq!(cfg.adam.beta1, 0.8);
        assert_eq!(cfg.adam.beta2, 0.999);
        assert_eq!(cfg.epochs, 5);
        cfg.validate().unwrap();
    }

    #[test]
    fn json_with_mode() {
        let cfg: TrainConfig = serde_json::from_str(r#"{"mode": "agc", "nu0": 1.5e-4}"#).unwrap();
        assert_eq!(cfg.mode, PolicyMode::Agc);
        assert_eq!(cfg.nu0, 1.5e-4);
    }

    #[test]
    fn rejects_bad_values() {
        for bad in [
            TrainConfig { alpha: 1.0, ..Default::default() },
            TrainConfig { epsilon: 0.0, ..Default::default() },
            TrainConfig { radius: 1.0, ..Default::default() },
            TrainConfig { n_train: 0, ..Default::default() },
        ] {
            assert!(matches!(bad.validate(), Err(Error::Config(_))));
        }
        assert!(serde_json::from_str::<TrainConfig>(r#"{"alpah": 0.1}"#).is_err());
    }
}
