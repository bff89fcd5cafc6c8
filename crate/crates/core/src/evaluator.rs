//! Matching detections to ground truth and computing precision, recall,
//! F-score and temporal-distance percentiles.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::detector::{detect, infer_timeline, Detection, DetectionConfig, Segment};
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::models::{LabeledMatch, Model};
use crate::trajstore::{EventClass, EventLabel, WindowSpec};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TruePositive {
    pub detection: Detection,
    pub truth: EventLabel,
    /// `detection.frame - truth.frame`
    pub delta: i64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MatchingResult {
    pub class: EventClass,
    pub true_positives: Vec<TruePositive>,
    pub false_positives: Vec<Detection>,
    pub false_negatives: Vec<EventLabel>,
}

impl MatchingResult {
    pub fn empty(class: EventClass) -> Self {
        MatchingResult {
            class,
            true_positives: Vec::new(),
            false_positives: Vec::new(),
            false_negatives: Vec::new(),
        }
    }

    pub fn counts(&self) -> (usize, usize, usize) {
        (self.true_positives.len(), self.false_positives.len(), self.false_negatives.len())
    }

    /// Pools another result of the same class (micro-averaging).
    pub fn absorb(&mut self, other: MatchingResult) {
        debug_assert_eq!(self.class, other.class);
        self.true_positives.extend(other.true_positives);
        self.false_positives.extend(other.false_positives);
        self.false_negatives.extend(other.false_negatives);
    }
}

/// Greedy one-to-one matching for one class. A pair is eligible when
/// `|Δ| <= (w_eval - 1) / 2`; eligible pairs are taken in ascending `|Δ|`,
/// then earlier detection frame, then earlier ground-truth frame.
/// Entries of other classes are ignored.
pub fn match_events(detections: &[Detection], truth: &[EventLabel], w_eval: usize, class: EventClass) -> MatchingResult {
    let dets: Vec<&Detection> = detections.iter().filter(|d| d.class == class).collect();
    let gts: Vec<&EventLabel> = truth.iter().filter(|g| g.class == class).collect();
    let radius = (w_eval.saturating_sub(1) / 2) as u64;

    let mut pairs = Vec::new();
    for (di, d) in dets.iter().enumerate() {
        for (gi, g) in gts.iter().enumerate() {
            let dist = (d.frame as u64).abs_diff(g.frame as u64);
            if dist <= radius {
                pairs.push((dist, d.frame, g.frame, di, gi));
            }
        }
    }
    pairs.sort_unstable();

    let mut det_used = vec![false; dets.len()];
    let mut gt_used = vec![false; gts.len()];
    let mut result = MatchingResult::empty(class);
    for (_, _, _, di, gi) in pairs {
        if det_used[di] || gt_used[gi] {
            continue;
        }
        det_used[di] = true;
        gt_used[gi] = true;
        result.true_positives.push(TruePositive {
            detection: *dets[di],
            truth: *gts[gi],
            delta: dets[di].frame as i64 - gts[gi].frame as i64,
        });
    }
    result.true_positives.sort_by_key(|tp| (tp.truth.frame, tp.detection.frame));
    result.false_positives = dets.iter().zip(&det_used).filter(|(_, u)| !**u).map(|(d, _)| **d).collect();
    result.false_negatives = gts.iter().zip(&gt_used).filter(|(_, u)| !**u).map(|(g, _)| **g).collect();
    result
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub class: EventClass,
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub precision: f64,
    pub recall: f64,
    pub f_score: f64,
    /// Seconds; `None` when there are no true positives.
    pub td_p50: Option<f64>,
    pub td_p95: Option<f64>,
}

/// Nearest-rank percentile of an ascending sample: the value at rank
/// `ceil(p * n)` (1-based, at least 1).
pub fn nearest_rank(sorted: &[f64], p: f64) -> Option<f64> {
    if sorted.is_empty() {
        return None;
    }
    let n = sorted.len();
    // the small slack keeps p * n from rounding up past an exact integer
    let rank = ((p * n as f64) - 1e-9).ceil().clamp(1.0, n as f64) as usize;
    Some(sorted[rank - 1])
}

pub fn f_score(precision: f64, recall: f64) -> f64 {
    if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    }
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

pub fn compute_metrics(result: &MatchingResult, fps: f64) -> ClassMetrics {
    let (tp, fp, fn_) = result.counts();
    let precision = ratio(tp, tp + fp);
    let recall = ratio(tp, tp + fn_);
    let mut td: Vec<f64> = result
        .true_positives
        .iter()
        .map(|t| t.delta.unsigned_abs() as f64 / fps)
        .collect();
    td.sort_by(f64::total_cmp);
    ClassMetrics {
        class: result.class,
        tp,
        fp,
        fn_,
        precision,
        recall,
        f_score: f_score(precision, recall),
        td_p50: nearest_rank(&td, 0.5),
        td_p95: nearest_rank(&td, 0.95),
    }
}

/// Metrics for every event class, in class order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub classes: Vec<ClassMetrics>,
}

impl Metrics {
    pub fn class(&self, class: EventClass) -> &ClassMetrics {
        self.classes.iter().find(|c| c.class == class).expect("all classes present")
    }

    pub fn from_results(results: &[MatchingResult], fps: f64) -> Metrics {
        Metrics {
            classes: results.iter().map(|r| compute_metrics(r, fps)).collect(),
        }
    }

    pub fn summary(&self) -> Vec<SummaryRow> {
        self.classes
            .iter()
            .map(|c| SummaryRow {
                class: c.class,
                precision: c.precision,
                recall: c.recall,
                f_score: c.f_score,
                td_p50: c.td_p50,
                td_p95: c.td_p95,
            })
            .collect()
    }

    pub fn to_csv(&self) -> String {
        summary_csv(&self.summary())
    }

    pub fn to_table(&self) -> String {
        summary_table(&self.summary())
    }
}

/// The reported columns of one class, as stored in a metrics CSV.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SummaryRow {
    pub class: EventClass,
    pub precision: f64,
    pub recall: f64,
    pub f_score: f64,
    pub td_p50: Option<f64>,
    pub td_p95: Option<f64>,
}

pub const METRICS_HEADER: &str = "class,precision,recall,f_score,td_p50,td_p95";

pub fn summary_csv(rows: &[SummaryRow]) -> String {
    let mut s = format!("{METRICS_HEADER}\n");
    for r in rows {
        let _ = writeln!(
            s,
            "{},{:.6},{:.6},{:.6},{},{}",
            r.class,
            r.precision,
            r.recall,
            r.f_score,
            fmt_opt(r.td_p50, 6),
            fmt_opt(r.td_p95, 6)
        );
    }
    s
}

pub fn summary_table(rows: &[SummaryRow]) -> String {
    let mut s = format!(
        "{:<10} {:>9} {:>7} {:>7} {:>7} {:>7}\n",
        "Event", "Precision", "Recall", "F-Score", "TD@0.5", "TD@0.95"
    );
    for r in rows {
        let _ = writeln!(
            s,
            "{:<10} {:>9.2} {:>7.2} {:>7.2} {:>7} {:>7}",
            r.class.name(),
            r.precision,
            r.recall,
            r.f_score,
            fmt_opt(r.td_p50, 2),
            fmt_opt(r.td_p95, 2)
        );
    }
    s
}

/// Parses a metrics CSV written by [`summary_csv`]. `source` names the input
/// in error messages.
pub fn parse_summary_csv(text: &str, source: &Path) -> Result<Vec<SummaryRow>> {
    let err = |line: usize, message: String| Error::Parse {
        path: source.to_path_buf(),
        line,
        message,
    };
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    match lines.next() {
        Some((_, h)) if h.trim() == METRICS_HEADER => {}
        _ => return Err(err(1, format!("expected header {METRICS_HEADER:?}"))),
    }
    let number = |line: usize, v: &str| v.trim().parse::<f64>().map_err(|e| err(line, format!("{v:?}: {e}")));
    let optional = |line: usize, v: &str| if v.trim() == "NA" { Ok(None) } else { number(line, v).map(Some) };
    let mut rows = Vec::new();
    for (i, l) in lines {
        let line = i + 1;
        let f: Vec<&str> = l.split(',').collect();
        if f.len() != 6 {
            return Err(err(line, format!("expected 6 fields, found {}", f.len())));
        }
        let class = EventClass::parse(f[0].trim()).ok_or_else(|| err(line, format!("unknown class {:?}", f[0])))?;
        rows.push(SummaryRow {
            class,
            precision: number(line, f[1])?,
            recall: number(line, f[2])?,
            f_score: number(line, f[3])?,
            td_p50: optional(line, f[4])?,
            td_p95: optional(line, f[5])?,
        });
    }
    Ok(rows)
}

fn fmt_opt(v: Option<f64>, digits: usize) -> String {
    match v {
        Some(v) => format!("{v:.digits$}"),
        None => "NA".into(),
    }
}

/// Matches each segment separately and pools counts and temporal
/// distances across segments before computing ratios.
pub fn pooled_results(per_segment: &[(Vec<Detection>, Vec<EventLabel>)], w_eval: usize) -> Vec<MatchingResult> {
    EventClass::ALL
        .iter()
        .map(|&class| {
            let mut pooled = MatchingResult::empty(class);
            for (dets, truth) in per_segment {
                pooled.absorb(match_events(dets, truth, w_eval, class));
            }
            pooled
        })
        .collect()
}

/// Runs inference and detection over consecutive segments of
/// `segment_length` frames of every match and reports micro-averaged metrics.
pub fn evaluate_segments(
    model: &Model,
    matches: &[LabeledMatch],
    config: &DetectionConfig,
    spec: &WindowSpec,
    segment_length: usize,
    exec: Exec,
) -> Result<Metrics> {
    let mut per_segment = Vec::new();
    for m in matches {
        for seg in Segment::tile(m.trajectories.frame_count, segment_length) {
            let timeline = infer_timeline(model, &m.trajectories, seg, spec, exec)?;
            let dets = detect(&timeline, config);
            let truth: Vec<EventLabel> = m.labels.iter().filter(|l| seg.contains(l.frame)).copied().collect();
            per_segment.push((dets, truth));
        }
    }
    Ok(Metrics::from_results(&pooled_results(&per_segment, config.w_eval), config.fps))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn det(class: EventClass, frame: usize) -> Detection {
        Detection {
            class,
            frame,
            confidence: 0.9,
        }
    }

    fn gt(class: EventClass, frame: usize) -> EventLabel {
        EventLabel { frame, class }
    }

    /// Maximum-cardinality matching by exhaustive search over assignments.
    fn max_matching(dets: &[Detection], gts: &[EventLabel], w_eval: usize) -> usize {
        fn go(i: usize, dets: &[Detection], gts: &[EventLabel], used: &mut Vec<bool>, r: usize) -> usize {
            if i == dets.len() {
                return 0;
            }
            let mut best = go(i + 1, dets, gts, used, r);
            for j in 0..gts.len() {
                if !used[j] && dets[i].frame.abs_diff(gts[j].frame) <= r {
                    used[j] = true;
                    best = best.max(1 + go(i + 1, dets, gts, used, r));
                    used[j] = false;
                }
            }
            best
        }
        go(0, dets, gts, &mut vec![false; gts.len()], (w_eval - 1) / 2)
    }

    const PASS: EventClass = EventClass::Pass;

    #[test]
    fn single_match_within_window() {
        let r = match_events(&[det(PASS, 100)], &[gt(PASS, 110)], 51, PASS);
        assert_eq!(r.counts(), (1, 0, 0));
        assert_eq!(r.true_positives[0].delta, -10);
    }

    #[test]
    fn nearest_detection_wins() {
        let r = match_events(&[det(PASS, 100), det(PASS, 115)], &[gt(PASS, 110)], 51, PASS);
        assert_eq!(r.true_positives[0].detection.frame, 115);
        assert_eq!(r.false_positives, vec![det(PASS, 100)]);
        assert!(r.false_negatives.is_empty());
    }

    #[test]
    fn window_edge_is_inclusive_half_width() {
        assert_eq!(match_events(&[det(PASS, 125)], &[gt(PASS, 100)], 51, PASS).counts(), (1, 0, 0));
        assert_eq!(match_events(&[det(PASS, 126)], &[gt(PASS, 100)], 51, PASS).counts(), (0, 1, 1));
    }

    #[test]
    fn other_classes_ignored() {
        let r = match_events(&[det(EventClass::Shot, 100)], &[gt(PASS, 100)], 51, PASS);
        assert_eq!(r.counts(), (0, 0, 1));
    }

    #[test]
    fn metric_fixtures() {
        let mut r = MatchingResult::empty(PASS);
        r.true_positives.push(TruePositive {
            detection: det(PASS, 130),
            truth: gt(PASS, 120),
            delta: 10,
        });
        r.false_positives.push(det(PASS, 400));
        r.false_negatives.push(gt(PASS, 700));
        let m = compute_metrics(&r, 30.0);
        assert_eq!((m.precision, m.recall, m.f_score), (0.5, 0.5, 0.5));
        assert!((m.td_p50.unwrap() - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn nearest_rank_fixture() {
        let td = [0.1, 0.2, 0.3, 0.4];
        assert_eq!(nearest_rank(&td, 0.5), Some(0.2));
        assert_eq!(nearest_rank(&td, 0.95), Some(0.4));
        assert_eq!(nearest_rank(&[], 0.5), None);
        let twenty: Vec<f64> = (1..=20).map(f64::from).collect();
        assert_eq!(nearest_rank(&twenty, 0.95), Some(19.0));
    }

    #[test]
    fn empty_everything_is_zero_without_td() {
        let m = compute_metrics(&MatchingResult::empty(PASS), 30.0);
        assert_eq!((m.precision, m.recall, m.f_score), (0.0, 0.0, 0.0));
        assert_eq!(m.td_p50, None);
    }

    #[test]
    fn micro_average_pools_counts() {
        // segment A: TP 3, FP 1, FN 0; segment B: TP 1, FP 1, FN 2
        let a = (
            vec![det(PASS, 100), det(PASS, 200), det(PASS, 300), det(PASS, 900)],
            vec![gt(PASS, 100), gt(PASS, 200), gt(PASS, 300)],
        );
        let b = (
            vec![det(PASS, 1000), det(PASS, 1500)],
            vec![gt(PASS, 1000), gt(PASS, 2000), gt(PASS, 3000)],
        );
        let results = pooled_results(&[a.clone(), b], 51);
        let m = compute_metrics(&results[PASS.index()], 30.0);
        assert!((m.precision - 4.0 / 6.0).abs() < 1e-12);
        assert!((m.recall - 4.0 / 6.0).abs() < 1e-12);
        let single = pooled_results(&[a.clone()], 51);
        assert_eq!(compute_metrics(&single[0], 30.0), compute_metrics(&match_events(&a.0, &a.1, 51, PASS), 30.0));
    }

    fn arb_events() -> impl Strategy<Value = (Vec<Detection>, Vec<EventLabel>)> {
        (
            proptest::collection::vec(0usize..600, 0..50),
            proptest::collection::vec(0usize..600, 0..50),
        )
            .prop_map(|(d, g)| {
                let dets = d.into_iter().map(|f| det(PASS, f)).collect();
                let mut gts: Vec<EventLabel> = g.into_iter().map(|f| gt(PASS, f)).collect();
                gts.sort();
                gts.dedup();
                (dets, gts)
            })
    }

    #[test]
    fn csv_round_trip_and_na() {
        let mut r = MatchingResult::empty(PASS);
        r.true_positives.push(TruePositive {
            detection: det(PASS, 130),
            truth: gt(PASS, 120),
            delta: 10,
        });
        let metrics = Metrics::from_results(&[r, MatchingResult::empty(EventClass::Reception)], 30.0);
        let csv = metrics.to_csv();
        assert!(csv.starts_with("class,precision,recall,f_score,td_p50,td_p95\n"));
        assert!(csv.contains("reception,0.000000,0.000000,0.000000,NA,NA"));
        let rows = parse_summary_csv(&csv, Path::new("m.csv")).unwrap();
        assert_eq!(summary_csv(&rows), csv);
        assert!(parse_summary_csv("nope\n", Path::new("m.csv")).is_err());
    }

    proptest! {
        #[test]
        fn partition_invariants((dets, gts) in arb_events(), w in 1usize..80) {
            let w = w | 1;
            let r = match_events(&dets, &gts, w, PASS);
            let (tp, fp, fn_) = r.counts();
            prop_assert_eq!(tp + fp, dets.len());
            prop_assert_eq!(tp + fn_, gts.len());
            for t in &r.true_positives {
                prop_assert!(t.delta.unsigned_abs() as usize <= (w - 1) / 2);
            }
            let m = compute_metrics(&r, 30.0);
            if let Some(p95) = m.td_p95 {
                prop_assert!(p95 <= (w - 1) as f64 / (2.0 * 30.0) + 1e-12);
            }
        }

        #[test]
        fn permutation_does_not_change_counts((dets, gts) in arb_events(), seed in any::<u64>()) {
            use rand::{seq::SliceRandom, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let mut d2 = dets.clone();
            d2.shuffle(&mut rng);
            let mut g2 = gts.clone();
            g2.shuffle(&mut rng);
            prop_assert_eq!(match_events(&dets, &gts, 51, PASS).counts(), match_events(&d2, &g2, 51, PASS).counts());
        }

        #[test]
        fn extra_far_detection_keeps_recall((dets, gts) in arb_events()) {
            let base = compute_metrics(&match_events(&dets, &gts, 51, PASS), 30.0);
            let mut more = dets.clone();
            more.push(det(PASS, 5000));
            let after = compute_metrics(&match_events(&more, &gts, 51, PASS), 30.0);
            prop_assert_eq!(base.recall, after.recall);
            prop_assert_eq!(after.fp, base.fp + 1);
        }

        #[test]
        fn removing_detection_never_adds_true_positives((dets, gts) in arb_events(), idx in any::<prop::sample::Index>()) {
            prop_assume!(!dets.is_empty());
            let mut fewer = dets.clone();
            fewer.remove(idx.index(dets.len()));
            let before = match_events(&dets, &gts, 51, PASS).counts().0;
            let after = match_events(&fewer, &gts, 51, PASS).counts().0;
            prop_assert!(after <= before);
        }

        #[test]
        fn greedy_is_maximum_when_truth_is_spread(
            d in proptest::collection::vec(0usize..400, 0..=10),
            g in proptest::collection::btree_set(0usize..40, 0..=10),
            w in 1usize..40,
        ) {
            let w = w | 1;
            let dets: Vec<Detection> = d.into_iter().map(|f| det(PASS, f)).collect();
            let gts: Vec<EventLabel> = g.into_iter().map(|k| gt(PASS, k * w)).collect();
            let greedy = match_events(&dets, &gts, w, PASS).counts().0;
            prop_assert_eq!(greedy, max_matching(&dets, &gts, w));
        }
    }
}
