//! Sliding-window inference and conversion of probability timelines into
//! discrete detections.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::models::{Model, NUM_CLASSES};
use crate::trajstore::{build_window, EventClass, MatchTrajectories, WindowSpec};

/// Half-open frame range `[start, end)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segment {
    pub start: usize,
    pub end: usize,
}

impl Segment {
    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end <= self.start
    }

    pub fn contains(&self, frame: usize) -> bool {
        (self.start..self.end).contains(&frame)
    }

    /// Consecutive segments of at most `length` frames covering `[0, frames)`.
    pub fn tile(frames: usize, length: usize) -> Vec<Segment> {
        let length = length.max(1);
        (0..frames)
            .step_by(length)
            .map(|start| Segment {
                start,
                end: (start + length).min(frames),
            })
            .collect()
    }
}

/// Per-frame class probabilities `[background, pass, reception, shot]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbabilityTimeline {
    pub match_id: String,
    pub start: usize,
    pub rows: Vec<[f64; NUM_CLASSES]>,
}

impl ProbabilityTimeline {
    pub fn segment(&self) -> Segment {
        Segment {
            start: self.start,
            end: self.start + self.rows.len(),
        }
    }

    pub fn class_probs(&self, class: EventClass) -> impl Iterator<Item = (usize, f64)> + '_ {
        let k = class.prob_index();
        self.rows.iter().enumerate().map(move |(i, r)| (self.start + i, r[k]))
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut out = BufWriter::new(file);
        let io = |e| Error::io(path, e);
        writeln!(out, "frame,p_background,p_pass,p_reception,p_shot").map_err(io)?;
        for (i, r) in self.rows.iter().enumerate() {
            writeln!(out, "{},{},{},{},{}", self.start + i, r[0], r[1], r[2], r[3]).map_err(io)?;
        }
        out.flush().map_err(io)
    }
}

/// Runs the model on a window centered on every frame of `segment`.
/// Windows reaching past the match edges are zero-padded. Frames whose
/// window contains no ball get a pure-background row.
pub fn infer_timeline(
    model: &Model,
    m: &MatchTrajectories,
    segment: Segment,
    spec: &WindowSpec,
    exec: Exec,
) -> Result<ProbabilityTimeline> {
    let cfg = model.config();
    let channels = 2 * spec.objects(m);
    if cfg.window != spec.length || cfg.input_channels != channels {
        return Err(Error::Contract(format!(
            "model expects T={} with {} channels, window spec gives T={} with {channels}",
            cfg.window, cfg.input_channels, spec.length
        )));
    }
    if segment.end > m.frame_count {
        return Err(Error::Range {
            what: "segment end",
            value: segment.end,
            limit: m.frame_count,
        });
    }
    let m = if m.is_normalized() {
        std::borrow::Cow::Borrowed(m)
    } else {
        std::borrow::Cow::Owned(m.normalize())
    };
    let rows = exec.map_range(segment.start..segment.end, |t| match build_window(&m, spec, t) {
        Ok(w) => model.predict(&w).map(Some),
        Err(Error::NoBall { .. }) => Ok(None),
        Err(e) => Err(e),
    });
    let mut missing = 0usize;
    let rows = rows
        .into_iter()
        .map(|r| {
            r.map(|row| {
                row.unwrap_or_else(|| {
                    missing += 1;
                    [1.0, 0.0, 0.0, 0.0]
                })
            })
        })
        .collect::<Result<Vec<_>>>()?;
    if missing > 0 {
        log::warn!(
            "{}: {missing} frames in [{}, {}) had no ball in their window; scored as background",
            m.id,
            segment.start,
            segment.end
        );
    }
    Ok(ProbabilityTimeline {
        match_id: m.id.clone(),
        start: segment.start,
        rows,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub class: EventClass,
    pub frame: usize,
    pub confidence: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassDetection {
    /// Probability threshold, in (0, 1).
    pub tau: f64,
    /// Minimum spacing in frames between same-class detections.
    pub nms_window: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionConfig {
    /// Indexed by [`EventClass::index`].
    pub classes: [ClassDetection; 3],
    pub w_eval: usize,
    pub fps: f64,
}

impl Default for DetectionConfig {
    fn default() -> Self {
        let c = ClassDetection {
            tau: 0.5,
            nms_window: 51,
        };
        DetectionConfig {
            classes: [c; 3],
            w_eval: 51,
            fps: 30.0,
        }
    }
}

impl DetectionConfig {
    pub fn class(&self, class: EventClass) -> ClassDetection {
        self.classes[class.index()]
    }

    pub fn validate(&self) -> Result<()> {
        for class in EventClass::ALL {
            let c = self.class(class);
            if !(c.tau > 0.0 && c.tau < 1.0) {
                return Err(Error::config(format!("detection.{class}.tau"), "must lie in (0, 1)"));
            }
            if c.nms_window < 3 || c.nms_window % 2 == 0 {
                return Err(Error::config(format!("detection.{class}.nms_window"), "must be odd and >= 3"));
            }
        }
        if self.w_eval % 2 == 0 {
            return Err(Error::config("detection.w_eval", "must be odd"));
        }
        if !(self.fps > 0.0) {
            return Err(Error::config("detection.fps", "must be positive"));
        }
        Ok(())
    }
}

/// Greedy NMS for one class. Candidates are frames with `p >= tau`, taken in
/// descending probability (earlier frame first on ties); a candidate is
/// dropped if an accepted detection lies within `|Δ| < nms_window`.
/// Output is sorted by frame.
pub fn detect_class(timeline: &ProbabilityTimeline, class: EventClass, tau: f64, nms_window: usize) -> Vec<Detection> {
    let candidates = sorted_candidates(timeline, class, tau);
    suppress(&candidates, timeline.start, timeline.rows.len(), class, nms_window)
}

/// Frames with `p >= tau` in NMS processing order.
pub(crate) fn sorted_candidates(timeline: &ProbabilityTimeline, class: EventClass, tau: f64) -> Vec<(usize, f64)> {
    let mut candidates: Vec<(usize, f64)> = timeline.class_probs(class).filter(|(_, p)| *p >= tau).collect();
    candidates.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    candidates
}

/// Greedy suppression over candidates already in processing order.
pub(crate) fn suppress(candidates: &[(usize, f64)], start: usize, len: usize, class: EventClass, nms_window: usize) -> Vec<Detection> {
    // blocked[i]: frame start + i lies within nms_window of an accepted detection
    let mut blocked = vec![false; len];
    let reach = nms_window.saturating_sub(1);
    let mut out = Vec::new();
    for &(frame, p) in candidates {
        let i = frame - start;
        if blocked[i] {
            continue;
        }
        out.push(Detection {
            class,
            frame,
            confidence: p,
        });
        let lo = i.saturating_sub(reach);
        let hi = (i + reach).min(len - 1);
        blocked[lo..=hi].iter_mut().for_each(|b| *b = true);
    }
    out.sort_by_key(|d| d.frame);
    out
}

/// Applies [`detect_class`] to every class; output sorted by frame, then class.
pub fn detect(timeline: &ProbabilityTimeline, config: &DetectionConfig) -> Vec<Detection> {
    let mut out: Vec<Detection> = EventClass::ALL
        .iter()
        .flat_map(|&c| {
            let cd = config.class(c);
            detect_class(timeline, c, cd.tau, cd.nms_window)
        })
        .collect();
    out.sort_by_key(|d| (d.frame, d.class));
    out
}

pub fn write_detections_csv(detections: &[Detection], path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    let io = |e| Error::io(path, e);
    writeln!(out, "class,frame,confidence").map_err(io)?;
    for d in detections {
        writeln!(out, "{},{},{}", d.class, d.frame, d.confidence).map_err(io)?;
    }
    out.flush().map_err(io)
}
