//! Run configuration: one JSON document, unknown keys rejected.

use crate::CliError;
use crlearn::config::preset;
use crlearn::hal::{LearnerConfig, Scenario};
use crlearn::{DecoherenceModel, GrowthPolicy, JParams, LambdaParams, NoiseModel, QuerySpace};
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpaceConfig {
    pub t_min: f64,
    pub t_max: f64,
    pub n_times: usize,
}

impl Default for SpaceConfig {
    fn default() -> Self {
        Self { t_min: 1e-7, t_max: 6e-7, n_times: 81 }
    }
}

/// Calibration values for the components outside a parameter mask.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PriorConfig {
    /// Use the true parameters (simulation studies).
    Truth,
    Values(LambdaParams),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Named device preset supplying the true parameters and noise.
    pub preset: Option<String>,
    /// Explicit true parameters; overrides the preset's.
    pub theta: Option<JParams>,
    /// Explicit noise model; overrides the preset's.
    pub noise: Option<NoiseModel>,
    pub space: SpaceConfig,
    pub learner: LearnerConfig,
    /// Scenarios to run; defaults to the learner's own scenario.
    pub scenarios: Option<Vec<Scenario>>,
    pub n_runs: usize,
    pub seed: u64,
    pub output: Option<PathBuf>,
    /// Replay a recorded dataset instead of simulating.
    pub dataset: Option<PathBuf>,
    /// Shots per query for `generate`.
    pub shots_per_query: usize,
    /// Test queries per run for the testing error.
    pub test_queries: usize,
    pub prior: Option<PriorConfig>,
    /// Candidate decoherence models for the fit table of `analyze`.
    pub decoherence_models: Option<Vec<DecoherenceModel>>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            preset: None,
            theta: None,
            noise: None,
            space: SpaceConfig::default(),
            learner: LearnerConfig::default(),
            scenarios: None,
            n_runs: 1,
            seed: 0,
            output: None,
            dataset: None,
            shots_per_query: 10,
            test_queries: 10_000,
            prior: None,
            decoherence_models: None,
        }
    }
}

/// Everything a command needs, with presets and defaults applied.
#[derive(Clone, Debug)]
pub struct Resolved {
    pub config: RunConfig,
    pub theta: LambdaParams,
    pub noise: NoiseModel,
    pub space: QuerySpace,
    pub scenarios: Vec<Scenario>,
    pub prior: Option<LambdaParams>,
}

pub fn parse(text: &str) -> Result<RunConfig, CliError> {
    let de = &mut serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(de).map_err(|e| CliError::Config(format!("at `{}`: {}", e.path(), e.inner())))
}

pub fn load(path: &Path) -> Result<RunConfig, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
    parse(&text)
}

impl RunConfig {
    pub fn resolve(self) -> Result<Resolved, CliError> {
        let cfg_err = |e: crlearn::Error| CliError::Config(e.to_string());
        let base = self.preset.as_deref().map(preset).transpose().map_err(cfg_err)?;
        let theta = match (&self.theta, &base) {
            (Some(j), _) => *j,
            (None, Some(p)) => p.theta,
            (None, None) => return Err(CliError::Config("either `preset` or `theta` is required".into())),
        };
        let noise = match (&self.noise, &base) {
            (Some(n), _) => n.clone(),
            (None, Some(p)) => p.noise.clone(),
            (None, None) => NoiseModel::noiseless(),
        };
        noise.validate().map_err(cfg_err)?;
        let space = QuerySpace::uniform_grid(self.space.t_min, self.space.t_max, self.space.n_times, GrowthPolicy::Fixed)
            .map_err(cfg_err)?;
        self.learner.validate(&space).map_err(cfg_err)?;
        if self.n_runs == 0 {
            return Err(CliError::Config("`n_runs` must be at least 1".into()));
        }
        if self.test_queries == 0 {
            return Err(CliError::Config("`test_queries` must be at least 1".into()));
        }
        let scenarios = self.scenarios.clone().unwrap_or_else(|| vec![self.learner.scenario]);
        if scenarios.is_empty() {
            return Err(CliError::Config("`scenarios` must not be empty".into()));
        }
        let theta = crlearn::model::j_to_lambda(&theta);
        let prior = match &self.prior {
            None => None,
            Some(PriorConfig::Truth) => Some(theta),
            Some(PriorConfig::Values(l)) => Some(*l),
        };
        if self.learner.param_mask.is_some() && prior.is_none() {
            return Err(CliError::Config("`learner.param_mask` needs a `prior`".into()));
        }
        Ok(Resolved { config: self, theta, noise, space, scenarios, prior })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_keys_report_their_path() {
        let err = parse(r#"{"preset": "D-config2", "learner": {"n_b": 10, "oops": 1}}"#).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("learner"), "{msg}");
        assert!(msg.contains("oops"), "{msg}");
    }

    #[test]
    fn preset_resolves() {
        let r = parse(r#"{"preset": "D-config2", "scenarios": ["Passive", "HalFiFixed"]}"#).unwrap().resolve().unwrap();
        assert_eq!(r.scenarios.len(), 2);
        assert_eq!(r.space.len(), 486);
        assert!(parse(r#"{"preset": "nope"}"#).unwrap().resolve().is_err());
        assert!(parse("{}").unwrap().resolve().is_err());
    }

    #[test]
    fn mask_needs_prior() {
        let text = r#"{"preset": "D-config2", "learner": {"param_mask": ["omega0", "omega1"]}}"#;
        assert!(parse(text).unwrap().resolve().is_err());
        let text = r#"{"preset": "D-config2", "prior": "truth", "learner": {"param_mask": ["omega0", "omega1"]}}"#;
        assert!(parse(text).unwrap().resolve().unwrap().prior.is_some());
    }
}
