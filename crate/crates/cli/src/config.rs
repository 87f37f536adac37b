//! TOML run configuration with `dataset`, `model`, `train`, `attack` and
//! `experiment` sections. Unknown keys are rejected at every level.

use std::path::Path;

use anyhow::{Context, Result};
use natias::attacks::{AttackConfig, Method};
use natias::costs::CostKind;
use natias::diffnet::{ArchConfig, TrainConfig};
use natias::eval::{DetectorSpec, ExperimentConfig};
use serde::{Deserialize, Serialize};

use crate::Invalid;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetSection {
    pub n: usize,
    pub size: usize,
    pub payload: f64,
    pub cost: CostKind,
}

impl Default for DatasetSection {
    fn default() -> Self {
        Self { n: 200, size: 64, payload: 0.4, cost: CostKind::Suniward }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentSection {
    pub covers: usize,
    pub data_seed: u64,
    pub target: DetectorSpec,
    pub detectors: Vec<DetectorSpec>,
    pub methods: Vec<Method>,
    pub attack_limit: Option<usize>,
    /// Training covers attacked for the retraining scenario.
    pub retrain_limit: Option<usize>,
    /// Taps compared by the ablation; empty means every tap of the target.
    pub taps: Vec<String>,
}

impl Default for ExperimentSection {
    fn default() -> Self {
        let e = ExperimentConfig::default();
        Self {
            covers: e.covers,
            data_seed: e.data_seed,
            target: e.target,
            detectors: e.detectors,
            methods: e.methods,
            attack_limit: e.attack_limit,
            retrain_limit: None,
            taps: Vec::new(),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Global seed; the `--seed` flag and then `NATIAS_SEED` take precedence
    /// when this is absent.
    pub seed: Option<u64>,
    pub jobs: Option<usize>,
    pub dataset: DatasetSection,
    pub model: ArchConfig,
    pub train: TrainConfig,
    pub attack: AttackConfig,
    pub experiment: ExperimentSection,
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else { return Ok(Self::default()) };
        let text = std::fs::read_to_string(path).with_context(|| Invalid(format!("cannot read config {}", path.display())))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Invalid(format!("config: {e}")).into())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.attack.validate()?;
        self.experiment().validate()?;
        Ok(())
    }

    pub fn experiment(&self) -> ExperimentConfig {
        let e = &self.experiment;
        ExperimentConfig {
            covers: e.covers,
            size: self.dataset.size,
            data_seed: e.data_seed,
            payload: self.dataset.payload,
            cost: self.dataset.cost,
            seed: self.seed.unwrap_or(1),
            target: e.target.clone(),
            detectors: e.detectors.clone(),
            methods: e.methods.clone(),
            attack: self.attack.clone(),
            train: self.train.clone(),
            attack_limit: e.attack_limit,
            jobs: self.jobs.unwrap_or(1),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip() {
        let c = RunConfig { seed: Some(5), ..RunConfig::default() };
        assert_eq!(RunConfig::parse(&c.to_toml()).unwrap(), c);
        assert_eq!(RunConfig::parse("").unwrap(), RunConfig::default());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(RunConfig::parse("bogus = 1").is_err());
        assert!(RunConfig::parse("[attack]\nalpah = 3.0").is_err());
        assert!(RunConfig::parse("[model]\nchannels = [4, 4, 4]\nwidth = 2").is_err());
    }

    #[test]
    fn sections_override_defaults() {
        let c = RunConfig::parse("seed = 9\n[attack]\nalpha = 3.0\n[dataset]\ncost = \"hill\"\n[experiment]\nmethods = [\"usgs\"]").unwrap();
        assert_eq!(c.attack.alpha, 3.0);
        assert_eq!(c.dataset.cost, CostKind::Hill);
        let e = c.experiment();
        assert_eq!((e.seed, e.methods.clone(), e.cost), (9, vec![Method::Usgs], CostKind::Hill));
        assert_eq!(e.attack.beta_step, AttackConfig::default().beta_step);
    }
}
