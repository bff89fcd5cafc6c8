//! End-to-end runs on synthetic data: simulate, split, train, tune on
//! validation segments, evaluate on the test split.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evaluator::{evaluate_segments, Metrics};
use crate::exec::Exec;
use crate::models::{train, Dataset, EpochLog, LabeledMatch, Model, ModelConfig, TrainConfig, TrainReport, ValidationSet};
use crate::simgen::{generate_many, train_test_split, SimConfig, SimMatch};
use crate::trajstore::{occlude, OcclusionPolicy, WindowSpec};
use crate::tuner::{tune, GridSpec, TunedConfig};

/// Derives an independent sub-seed for one pipeline stage.
pub fn derive_seed(seed: u64, stage: u64) -> u64 {
    // splitmix64 finalizer
    let mut z = seed.wrapping_add(stage.wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub const STAGE_SIM: u64 = 1;
pub const STAGE_SPLIT: u64 = 2;
pub const STAGE_INIT: u64 = 3;
pub const STAGE_TRAIN: u64 = 4;
pub const STAGE_VALIDATION: u64 = 5;
pub const STAGE_OCCLUSION: u64 = 6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ValidationConfig {
    /// Validation segment length in frames.
    pub segment: usize,
    /// Segments per validation match scored after each training epoch;
    /// `None` uses every segment. Final tuning always uses every segment.
    pub per_match: Option<usize>,
}

impl Default for ValidationConfig {
    fn default() -> Self {
        ValidationConfig {
            segment: 500,
            per_match: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Master seed; every stage seed is derived from it.
    pub seed: u64,
    pub matches: usize,
    /// Train/validation/test proportions.
    pub split: [f64; 3],
    pub sim: SimConfig,
    pub occlusion: Option<OcclusionPolicy>,
    pub window: WindowSpec,
    /// `window` and `input_channels` are derived from [`Self::window`].
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub grid: GridSpec,
    pub validation: ValidationConfig,
    pub w_eval: usize,
    pub test_segment: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            seed: 0,
            matches: 14,
            split: [10.0, 2.0, 2.0],
            sim: SimConfig::default(),
            occlusion: None,
            window: WindowSpec::default(),
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            grid: GridSpec::default(),
            validation: ValidationConfig::default(),
            w_eval: 51,
            test_segment: 15000,
        }
    }
}

impl ExperimentConfig {
    /// Model configuration with window length and channel count taken from
    /// the window spec.
    pub fn model_config(&self) -> ModelConfig {
        let players = 2 * self.sim.players_per_team;
        ModelConfig {
            window: self.window.length,
            input_channels: 2 * (1 + self.window.players.slots(players)),
            ..self.model.clone()
        }
    }

    /// Training settings with the seed derived from the master seed.
    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            seed: derive_seed(self.seed, STAGE_TRAIN),
            ..self.train.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.matches < 3 {
            return Err(Error::config("matches", "need at least 3 matches for a train/validation/test split"));
        }
        self.sim.validate()?;
        self.window.validate()?;
        self.model_config().validate()?;
        self.train.validate()?;
        self.grid.validate()?;
        if let Some(o) = &self.occlusion {
            o.validate()?;
        }
        if self.w_eval % 2 == 0 {
            return Err(Error::config("w_eval", "must be odd"));
        }
        if self.validation.segment == 0 {
            return Err(Error::config("validation.segment", "must be positive"));
        }
        if self.test_segment == 0 {
            return Err(Error::config("test_segment", "must be positive"));
        }
        Ok(())
    }
}

/// Simulated matches split into train/validation/test parts.
#[derive(Debug, Clone)]
pub struct SyntheticData {
    pub train: Vec<SimMatch>,
    pub val: Vec<SimMatch>,
    pub test: Vec<SimMatch>,
}

/// Generates every match, applies the optional occlusion policy to the
/// trajectories (labels are untouched) and splits by match.
pub fn simulate(config: &ExperimentConfig, exec: Exec) -> Result<SyntheticData> {
    let sim = SimConfig {
        seed: derive_seed(config.seed, STAGE_SIM),
        ..config.sim.clone()
    };
    let mut all = generate_many(&sim, config.matches, exec)?;
    if let Some(policy) = &config.occlusion {
        let occ_seed = derive_seed(config.seed, STAGE_OCCLUSION);
        for (i, m) in all.iter_mut().enumerate() {
            m.trajectories = occlude(&m.trajectories, policy, derive_seed(occ_seed, i as u64));
        }
    }
    let split = train_test_split(&all, config.split, derive_seed(config.seed, STAGE_SPLIT))?;
    Ok(SyntheticData {
        train: split.train,
        val: split.val,
        test: split.test,
    })
}

pub fn labeled(matches: &[SimMatch]) -> Vec<LabeledMatch> {
    matches
        .iter()
        .map(|m| LabeledMatch::new(m.trajectories.clone(), m.labels.clone()))
        .collect()
}

/// Validation segments scored during training.
pub fn epoch_validation_set(config: &ExperimentConfig, matches: Vec<LabeledMatch>) -> ValidationSet {
    ValidationSet::sample(
        matches,
        config.validation.segment,
        config.validation.per_match.unwrap_or(usize::MAX),
        derive_seed(config.seed, STAGE_VALIDATION),
    )
}

/// Every validation segment, used for the final threshold search.
pub fn full_validation_set(config: &ExperimentConfig, matches: Vec<LabeledMatch>) -> ValidationSet {
    ValidationSet::sample(matches, config.validation.segment, usize::MAX, 0)
}

/// Builds a fresh model and trains it, validating after every epoch.
pub fn train_on(
    config: &ExperimentConfig,
    train_matches: Vec<LabeledMatch>,
    val_matches: Vec<LabeledMatch>,
    exec: Exec,
) -> Result<TrainReport> {
    let dataset = Dataset::new(train_matches, config.window);
    let validation = epoch_validation_set(config, val_matches);
    let model = Model::new(config.model_config(), derive_seed(config.seed, STAGE_INIT))?;
    train(model, &dataset, &validation, &config.train_config(), &config.grid, config.w_eval, exec)
}

pub fn tune_on(model: &Model, validation: &ValidationSet, config: &ExperimentConfig, exec: Exec) -> Result<TunedConfig> {
    let timelines = validation.timelines(model, &config.window, exec)?;
    Ok(tune(&timelines, &validation.ground_truth(), &config.grid, config.w_eval, config.sim.fps, exec))
}

#[derive(Debug, Clone)]
pub struct ExperimentReport {
    pub model: Model,
    pub log: Vec<EpochLog>,
    pub best_epoch: usize,
    pub tuned: TunedConfig,
    pub metrics: Metrics,
}

/// Runs the whole pipeline in memory.
pub fn run_experiment(config: &ExperimentConfig, exec: Exec) -> Result<ExperimentReport> {
    config.validate()?;
    let data = simulate(config, exec)?;
    let train_matches = labeled(&data.train);
    let val_matches = labeled(&data.val);
    let test_matches = labeled(&data.test);

    let report = train_on(config, train_matches, val_matches.clone(), exec)?;
    let validation = full_validation_set(config, val_matches);
    let tuned = tune_on(&report.model, &validation, config, exec)?;
    let metrics = evaluate_segments(
        &report.model,
        &test_matches,
        &tuned.detection_config(),
        &config.window,
        config.test_segment,
        exec,
    )?;
    Ok(ExperimentReport {
        model: report.model,
        log: report.log,
        best_epoch: report.best_epoch,
        tuned,
        metrics,
    })
}

/// Side-by-side table with one section per named run.
pub fn comparison_table(runs: &[(String, Metrics)]) -> String {
    let mut out = String::new();
    for (i, (name, metrics)) in runs.iter().enumerate() {
        if i > 0 {
            out.push('\n');
        }
        let _ = writeln!(out, "== {name} ==");
        out.push_str(&metrics.to_table());
    }
    out
}
