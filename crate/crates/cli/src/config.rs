//! Run configuration: one JSON file, overridable from the command line.

use std::path::Path;

use serde::{Deserialize, Serialize};
use trajdet::detector::DetectionConfig;
use trajdet::models::{ModelConfig, TrainConfig};
use trajdet::pipeline::{ExperimentConfig, ValidationConfig};
use trajdet::simgen::SimConfig;
use trajdet::trajstore::{OcclusionPolicy, WindowSpec};
use trajdet::tuner::GridSpec;

use crate::error::CliError;

pub const WORKERS_ENV: &str = "TRAJDET_WORKERS";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub matches: usize,
    pub split: [f64; 3],
    pub sim: SimConfig,
    pub occlusion: Option<OcclusionPolicy>,
    pub window: WindowSpec,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub grid: GridSpec,
    pub validation: ValidationConfig,
    pub w_eval: usize,
    pub test_segment: usize,
    /// Thresholds used by `infer`/`evaluate` when no tuned file is given.
    pub detection: DetectionConfig,
    /// Worker threads; `None` uses every core.
    pub workers: Option<usize>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let e = ExperimentConfig::default();
        RunConfig {
            seed: e.seed,
            matches: e.matches,
            split: e.split,
            sim: e.sim,
            occlusion: e.occlusion,
            window: e.window,
            model: e.model,
            train: e.train,
            grid: e.grid,
            validation: e.validation,
            w_eval: e.w_eval,
            test_segment: e.test_segment,
            detection: DetectionConfig::default(),
            workers: None,
        }
    }
}

/// Command-line values that take precedence over the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub matches: Option<usize>,
    pub epochs: Option<usize>,
    pub workers: Option<usize>,
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<RunConfig, CliError> {
        let Some(path) = path else {
            return Ok(RunConfig::default());
        };
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }

    /// Applies flag overrides, then the worker environment variable when no
    /// flag set the worker count, and validates the result.
    pub fn resolve(mut self, o: &Overrides, env_workers: Option<String>) -> Result<RunConfig, CliError> {
        if let Some(seed) = o.seed {
            self.seed = seed;
        }
        if let Some(matches) = o.matches {
            self.matches = matches;
        }
        if let Some(epochs) = o.epochs {
            self.train.max_epochs = epochs;
        }
        match (o.workers, env_workers) {
            (Some(w), _) => self.workers = Some(w),
            (None, Some(v)) => {
                let w = v
                    .trim()
                    .parse()
                    .map_err(|_| CliError::Config(format!("{WORKERS_ENV}: expected a positive integer, got {v:?}")))?;
                self.workers = Some(w);
            }
            (None, None) => {}
        }
        if self.workers == Some(0) {
            return Err(CliError::Config("invalid config field `workers`: must be positive".into()));
        }
        self.experiment().validate()?;
        self.detection.validate()?;
        Ok(self)
    }

    pub fn experiment(&self) -> ExperimentConfig {
        ExperimentConfig {
            seed: self.seed,
            matches: self.matches,
            split: self.split,
            sim: self.sim.clone(),
            occlusion: self.occlusion,
            window: self.window,
            model: self.model.clone(),
            train: self.train.clone(),
            grid: self.grid,
            validation: self.validation,
            w_eval: self.w_eval,
            test_segment: self.test_segment,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn precedence_flag_over_file_over_default() {
        let file: RunConfig = serde_json::from_str(r#"{"seed": 5, "matches": 6}"#).unwrap();
        assert_eq!(file.w_eval, 51);
        let o = Overrides {
            seed: Some(9),
            ..Overrides::default()
        };
        let r = file.resolve(&o, None).unwrap();
        assert_eq!((r.seed, r.matches), (9, 6));
    }

    #[test]
    fn worker_flag_beats_env_beats_file() {
        let file = RunConfig {
            workers: Some(3),
            ..RunConfig::default()
        };
        let flag = Overrides {
            workers: Some(2),
            ..Overrides::default()
        };
        assert_eq!(file.clone().resolve(&flag, Some("4".into())).unwrap().workers, Some(2));
        let none = Overrides::default();
        assert_eq!(file.clone().resolve(&none, Some("4".into())).unwrap().workers, Some(4));
        assert_eq!(file.clone().resolve(&none, None).unwrap().workers, Some(3));
        assert!(file.resolve(&none, Some("many".into())).is_err());
    }

    #[test]
    fn validation_names_the_field() {
        let file: RunConfig = serde_json::from_str(r#"{"train": {"background_ratio": 2.0}}"#).unwrap();
        let err = file.resolve(&Overrides::default(), None).unwrap_err().to_string();
        assert!(err.contains("train.background_ratio"), "{err}");
    }

    #[test]
    fn unknown_fields_rejected() {
        assert!(serde_json::from_str::<RunConfig>(r#"{"model": {"widht": 3}}"#).is_err());
    }
}
