use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use trajdet::detector::{detect, infer_timeline, write_detections_csv, DetectionConfig, Segment};
use trajdet::evaluator::{evaluate_segments, parse_summary_csv, summary_table};
use trajdet::models::{load_model, save_model, LabeledMatch, Model, ModelManifest};
use trajdet::pipeline::{self, ExperimentConfig};
use trajdet::trajstore::{load_match, write_labels, write_trajectories};
use trajdet::tuner::TunedConfig;
use trajdet::{Error, Exec};

use crate::config::RunConfig;
use crate::error::CliError;

pub const DATASET_FILE: &str = "dataset.json";
const DATASET_FORMAT: &str = "trajdet-dataset/v1";

/// Index of a simulated data directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub format: String,
    pub seed: u64,
    pub fps: f64,
    pub train: Vec<String>,
    pub val: Vec<String>,
    pub test: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SplitName {
    Train,
    Val,
    Test,
}

impl FromStr for SplitName {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "train" => Ok(SplitName::Train),
            "val" => Ok(SplitName::Val),
            "test" => Ok(SplitName::Test),
            _ => Err(format!("unknown split {s:?} (train, val, test)")),
        }
    }
}

fn io_err(path: &Path, e: std::io::Error) -> CliError {
    CliError::Core(Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn trajectory_path(dir: &Path, id: &str) -> PathBuf {
    dir.join(format!("{id}.jsonl"))
}

fn labels_path(dir: &Path, id: &str) -> PathBuf {
    dir.join(format!("{id}.labels.csv"))
}

impl DatasetManifest {
    pub fn load(dir: &Path) -> Result<DatasetManifest, CliError> {
        let path = dir.join(DATASET_FILE);
        let text = fs::read_to_string(&path).map_err(|e| io_err(&path, e))?;
        let manifest: DatasetManifest = serde_json::from_str(&text).map_err(|e| {
            CliError::Core(Error::Parse {
                path: path.clone(),
                line: e.line(),
                message: e.to_string(),
            })
        })?;
        if manifest.format != DATASET_FORMAT {
            return Err(CliError::Core(Error::Parse {
                path,
                line: 0,
                message: format!("unsupported format {:?}", manifest.format),
            }));
        }
        Ok(manifest)
    }

    pub fn ids(&self, split: SplitName) -> &[String] {
        match split {
            SplitName::Train => &self.train,
            SplitName::Val => &self.val,
            SplitName::Test => &self.test,
        }
    }
}

fn load_split(dir: &Path, split: SplitName) -> Result<Vec<LabeledMatch>, CliError> {
    let manifest = DatasetManifest::load(dir)?;
    manifest
        .ids(split)
        .iter()
        .map(|id| {
            let (m, labels) = load_match(&trajectory_path(dir, id), &labels_path(dir, id))?;
            Ok(LabeledMatch::new(m, labels))
        })
        .collect()
}

/// The experiment config with the window taken from the trained model.
fn experiment_for(cfg: &RunConfig, manifest: &ModelManifest) -> ExperimentConfig {
    ExperimentConfig {
        window: manifest.window,
        ..cfg.experiment()
    }
}

fn detection_config(cfg: &RunConfig, tuned: Option<&Path>) -> Result<DetectionConfig, CliError> {
    match tuned {
        Some(path) => Ok(TunedConfig::load(path)?.detection_config()),
        None => Ok(cfg.detection.clone()),
    }
}

pub fn simulate(cfg: &RunConfig, out: &Path) -> Result<(), CliError> {
    let exp = cfg.experiment();
    let data = pipeline::simulate(&exp, Exec::default())?;
    fs::create_dir_all(out).map_err(|e| io_err(out, e))?;
    let mut ids = Vec::new();
    for part in [&data.train, &data.val, &data.test] {
        let mut names = Vec::new();
        for m in part {
            let id = &m.trajectories.id;
            write_trajectories(&m.trajectories, &trajectory_path(out, id))?;
            write_labels(&m.labels, &labels_path(out, id))?;
            names.push(id.clone());
        }
        ids.push(names);
    }
    let [train, val, test] = <[Vec<String>; 3]>::try_from(ids).expect("three parts");
    log::info!(
        "simulated {} matches: {} train, {} val, {} test",
        cfg.matches,
        train.len(),
        val.len(),
        test.len()
    );
    let manifest = DatasetManifest {
        format: DATASET_FORMAT.into(),
        seed: cfg.seed,
        fps: cfg.sim.fps,
        train,
        val,
        test,
    };
    let path = out.join(DATASET_FILE);
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    fs::write(&path, text + "\n").map_err(|e| io_err(&path, e))
}

pub fn train(cfg: &RunConfig, data: &Path, out: &Path) -> Result<(), CliError> {
    let exp = cfg.experiment();
    let train = load_split(data, SplitName::Train)?;
    let val = load_split(data, SplitName::Val)?;
    let report = pipeline::train_on(&exp, train, val, Exec::default())?;
    save_model(out, &report.model, &exp.window, &exp.train_config())?;
    let mut log = String::from("epoch,train_loss,val_f_pass,val_f_reception,val_f_shot,val_mean_f,best\n");
    for e in &report.log {
        let _ = writeln!(
            log,
            "{},{:.6},{:.6},{:.6},{:.6},{:.6},{}",
            e.epoch,
            e.train_loss,
            e.val_f[0],
            e.val_f[1],
            e.val_f[2],
            e.val_mean_f,
            u8::from(e.epoch == report.best_epoch)
        );
    }
    let path = out.join("train_log.csv");
    fs::write(&path, log).map_err(|e| io_err(&path, e))?;
    log::info!("saved model from epoch {} to {}", report.best_epoch, out.display());
    Ok(())
}

pub fn infer(
    cfg: &RunConfig,
    model_dir: &Path,
    data: &Path,
    split: SplitName,
    tuned: Option<&Path>,
    out: &Path,
) -> Result<(), CliError> {
    let (model, manifest) = load_model(model_dir)?;
    let detection = detection_config(cfg, tuned)?;
    let matches = load_split(data, split)?;
    fs::create_dir_all(out).map_err(|e| io_err(out, e))?;
    for m in &matches {
        let t = &m.trajectories;
        let whole = Segment {
            start: 0,
            end: t.frame_count,
        };
        let timeline = infer_timeline(&model, t, whole, &manifest.window, Exec::default())?;
        timeline.write_csv(&out.join(format!("{}.timeline.csv", t.id)))?;
        let dets = detect(&timeline, &detection);
        write_detections_csv(&dets, &out.join(format!("{}.detections.csv", t.id)))?;
        log::info!("{}: {} frames, {} detections", t.id, t.frame_count, dets.len());
    }
    Ok(())
}

pub fn tune(cfg: &RunConfig, model_dir: &Path, data: &Path, out: &Path) -> Result<(), CliError> {
    let (model, manifest) = load_model(model_dir)?;
    let exp = experiment_for(cfg, &manifest);
    let val = load_split(data, SplitName::Val)?;
    let validation = pipeline::full_validation_set(&exp, val);
    let tuned = pipeline::tune_on(&model, &validation, &exp, Exec::default())?;
    for (class, t) in &tuned.classes {
        log::info!("{class}: tau {:.2}, nms window {}, F {:.3}", t.tau, t.w_nms, t.f_score);
    }
    tuned.save(out)?;
    Ok(())
}

pub fn evaluate(
    cfg: &RunConfig,
    model_dir: &Path,
    data: &Path,
    split: SplitName,
    tuned: Option<&Path>,
    out: &Path,
) -> Result<(), CliError> {
    let (model, manifest): (Model, ModelManifest) = load_model(model_dir)?;
    let detection = detection_config(cfg, tuned)?;
    let matches = load_split(data, split)?;
    let metrics = evaluate_segments(
        &model,
        &matches,
        &detection,
        &manifest.window,
        cfg.test_segment,
        Exec::default(),
    )?;
    fs::write(out, metrics.to_csv()).map_err(|e| io_err(out, e))?;
    print!("{}", metrics.to_table());
    Ok(())
}

pub fn report(runs: &[(String, PathBuf)]) -> Result<(), CliError> {
    let mut out = String::new();
    for (i, (name, path)) in runs.iter().enumerate() {
        let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
        let rows = parse_summary_csv(&text, path)?;
        if i > 0 {
            out.push('\n');
        }
        let _ = writeln!(out, "== {name} ==");
        out.push_str(&summary_table(&rows));
    }
    print!("{out}");
    Ok(())
}
