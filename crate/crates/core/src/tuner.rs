//! Per-class grid search over detection threshold and NMS window.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::detector::{sorted_candidates, suppress, ClassDetection, DetectionConfig, ProbabilityTimeline};
use crate::error::{Error, Result};
use crate::evaluator::{f_score, match_events};
use crate::exec::Exec;
use crate::trajstore::{EventClass, EventLabel};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridSpec {
    pub tau_min: f64,
    pub tau_max: f64,
    pub tau_step: f64,
    pub w_min: usize,
    pub w_max: usize,
    pub w_step: usize,
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec {
            tau_min: 0.30,
            tau_max: 0.98,
            tau_step: 0.02,
            w_min: 3,
            w_max: 59,
            w_step: 2,
        }
    }
}

impl GridSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau_step > 0.0) {
            return Err(Error::config("grid.tau_step", "must be positive"));
        }
        if !(0.0 < self.tau_min && self.tau_min <= self.tau_max && self.tau_max < 1.0) {
            return Err(Error::config("grid.tau_min", "need 0 < tau_min <= tau_max < 1"));
        }
        if self.w_step == 0 {
            return Err(Error::config("grid.w_step", "must be positive"));
        }
        if self.w_min == 0 || self.w_min > self.w_max {
            return Err(Error::config("grid.w_min", "need 1 <= w_min <= w_max"));
        }
        Ok(())
    }

    /// Inclusive threshold values, rounded to 1e-9 so that e.g. the 11th
    /// value is exactly 0.5.
    pub fn taus(&self) -> Vec<f64> {
        let n = ((self.tau_max - self.tau_min) / self.tau_step + 1e-9).floor() as usize + 1;
        (0..n)
            .map(|i| ((self.tau_min + i as f64 * self.tau_step) * 1e9).round() / 1e9)
            .collect()
    }

    pub fn windows(&self) -> Vec<usize> {
        (self.w_min..=self.w_max).step_by(self.w_step).collect()
    }

    pub fn len(&self) -> usize {
        self.taus().len() * self.windows().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassTuning {
    pub tau: f64,
    pub w_nms: usize,
    pub f_score: f64,
    /// False when the validation data had no event of this class.
    pub tunable: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TunedConfig {
    pub classes: BTreeMap<EventClass, ClassTuning>,
    pub w_eval: usize,
    pub fps: f64,
}

pub const TUNED_FORMAT: &str = "trajdet-tuned/v1";

#[derive(Serialize, Deserialize)]
struct TunedFile {
    format: String,
    #[serde(flatten)]
    config: TunedConfig,
}

impl TunedConfig {
    pub fn class(&self, class: EventClass) -> &ClassTuning {
        &self.classes[&class]
    }

    pub fn f_scores(&self) -> [f64; 3] {
        EventClass::ALL.map(|c| self.class(c).f_score)
    }

    pub fn tunable_f_scores(&self) -> Vec<f64> {
        EventClass::ALL
            .iter()
            .map(|&c| self.class(c))
            .filter(|t| t.tunable)
            .map(|t| t.f_score)
            .collect()
    }

    pub fn detection_config(&self) -> DetectionConfig {
        DetectionConfig {
            classes: EventClass::ALL.map(|c| {
                let t = self.class(c);
                ClassDetection {
                    tau: t.tau,
                    nms_window: t.w_nms,
                }
            }),
            w_eval: self.w_eval,
            fps: self.fps,
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = TunedFile {
            format: TUNED_FORMAT.into(),
            config: self.clone(),
        };
        let text = serde_json::to_string_pretty(&file).expect("tuned config serializes");
        std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<TunedConfig> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let file: TunedFile = serde_json::from_str(&text).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: e.line(),
            message: e.to_string(),
        })?;
        if file.format != TUNED_FORMAT {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: 0,
                message: format!("unsupported format {:?}", file.format),
            });
        }
        let config = file.config;
        if let Some(missing) = EventClass::ALL.iter().find(|c| !config.classes.contains_key(c)) {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: 0,
                message: format!("missing class {missing}"),
            });
        }
        Ok(config)
    }
}

/// Pooled (TP, FP, FN) for one class at one grid point. `candidates` holds
/// the per-timeline candidate lists at the grid's lowest threshold.
fn grid_point_counts(
    timelines: &[ProbabilityTimeline],
    candidates: &[Vec<(usize, f64)>],
    truth: &[Vec<EventLabel>],
    class: EventClass,
    tau: f64,
    w_nms: usize,
    w_eval: usize,
) -> (usize, usize, usize) {
    let mut total = (0, 0, 0);
    for ((tl, cands), gt) in timelines.iter().zip(candidates).zip(truth) {
        // candidates are sorted by descending probability
        let cut = cands.partition_point(|(_, p)| *p >= tau);
        let dets = suppress(&cands[..cut], tl.start, tl.rows.len(), class, w_nms);
        let (tp, fp, fn_) = match_events(&dets, gt, w_eval, class).counts();
        total = (total.0 + tp, total.1 + fp, total.2 + fn_);
    }
    total
}

fn pooled_f((tp, fp, fn_): (usize, usize, usize)) -> f64 {
    let p = if tp + fp > 0 { tp as f64 / (tp + fp) as f64 } else { 0.0 };
    let r = if tp + fn_ > 0 { tp as f64 / (tp + fn_) as f64 } else { 0.0 };
    f_score(p, r)
}

/// True when `a` should replace `b` as the best grid point.
fn better(a: &ClassTuning, b: &ClassTuning) -> bool {
    a.f_score > b.f_score
        || (a.f_score == b.f_score && (a.tau > b.tau || (a.tau == b.tau && a.w_nms < b.w_nms)))
}

/// Finds, for each class independently, the grid point maximizing the
/// pooled F-score over all validation timelines. `truth[i]` holds the
/// labels inside `timelines[i]`. Ties go to the higher threshold, then the
/// smaller window. A class with no validation events gets `tau = 0.5`,
/// `w_nms = w_eval` and `tunable = false`.
pub fn tune(
    timelines: &[ProbabilityTimeline],
    truth: &[Vec<EventLabel>],
    grid: &GridSpec,
    w_eval: usize,
    fps: f64,
    exec: Exec,
) -> TunedConfig {
    assert_eq!(timelines.len(), truth.len(), "one ground-truth list per timeline");
    let taus = grid.taus();
    let windows = grid.windows();
    let tau_floor = taus.iter().copied().fold(f64::INFINITY, f64::min);
    let mut classes = BTreeMap::new();
    for class in EventClass::ALL {
        let has_truth = truth.iter().flatten().any(|l| l.class == class);
        if !has_truth {
            log::warn!("no validation events of class {class}; using default threshold and window");
            classes.insert(
                class,
                ClassTuning {
                    tau: 0.5,
                    w_nms: w_eval,
                    f_score: 0.0,
                    tunable: false,
                },
            );
            continue;
        }
        let candidates: Vec<Vec<(usize, f64)>> =
            timelines.iter().map(|tl| sorted_candidates(tl, class, tau_floor)).collect();
        let points = exec.map_range(0..taus.len() * windows.len(), |i| {
            let (tau, w_nms) = (taus[i / windows.len()], windows[i % windows.len()]);
            let counts = grid_point_counts(timelines, &candidates, truth, class, tau, w_nms, w_eval);
            ClassTuning {
                tau,
                w_nms,
                f_score: pooled_f(counts),
                tunable: true,
            }
        });
        let best = points
            .into_iter()
            .reduce(|best, p| if better(&p, &best) { p } else { best })
            .expect("grid is non-empty");
        classes.insert(class, best);
    }
    TunedConfig { classes, w_eval, fps }
}
