use rand::Rng;

use super::{EventSampling, TrainConfig, BACKGROUND};
use crate::error::{Error, Result};
use crate::trajstore::{build_window, EventClass, EventLabel, MatchTrajectories, WindowSpec, WindowTensor};

/// A normalized match with its ground-truth labels.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledMatch {
    pub trajectories: MatchTrajectories,
    pub labels: Vec<EventLabel>,
}

impl LabeledMatch {
    pub fn new(trajectories: MatchTrajectories, mut labels: Vec<EventLabel>) -> Self {
        labels.sort();
        LabeledMatch {
            trajectories: trajectories.normalize(),
            labels,
        }
    }
}

/// Training matches plus the precomputed pools that batches draw from.
#[derive(Debug, Clone)]
pub struct Dataset {
    matches: Vec<LabeledMatch>,
    events: Vec<(usize, EventLabel)>,
    /// Indices into `events`, one non-empty pool per class present.
    by_class: Vec<Vec<usize>>,
    background: Vec<(usize, usize)>,
    window: WindowSpec,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingSample {
    pub window: WindowTensor,
    pub target: usize,
    pub match_index: usize,
    pub center: usize,
}

impl Dataset {
    /// Background centers are frames with no label of any class within
    /// `(T - 1) / 2` frames.
    pub fn new(matches: Vec<LabeledMatch>, window: WindowSpec) -> Dataset {
        let half = window.half();
        let mut events = Vec::new();
        let mut background = Vec::new();
        for (mi, m) in matches.iter().enumerate() {
            let n = m.trajectories.frame_count;
            let mut blocked = vec![false; n];
            for l in &m.labels {
                events.push((mi, *l));
                let lo = l.frame.saturating_sub(half);
                let hi = (l.frame + half).min(n.saturating_sub(1));
                blocked[lo..=hi].iter_mut().for_each(|b| *b = true);
            }
            background.extend((0..n).filter(|&f| !blocked[f]).map(|f| (mi, f)));
        }
        let by_class = EventClass::ALL
            .iter()
            .map(|&c| (0..events.len()).filter(|&i| events[i].1.class == c).collect::<Vec<_>>())
            .filter(|pool| !pool.is_empty())
            .collect();
        Dataset {
            matches,
            events,
            by_class,
            background,
            window,
        }
    }

    pub fn matches(&self) -> &[LabeledMatch] {
        &self.matches
    }

    pub fn window(&self) -> &WindowSpec {
        &self.window
    }

    pub fn event_count(&self) -> usize {
        self.events.len()
    }

    pub fn background_count(&self) -> usize {
        self.background.len()
    }
}

const MAX_REDRAWS: usize = 64;

/// Draws `config.batch_size` windows: each is background with probability
/// `background_ratio`, otherwise centered on a label chosen per
/// `event_sampling`, with uniform jitter in `±jitter` frames (clamped to the
/// match).
pub fn sample_batch<R: Rng>(dataset: &Dataset, config: &TrainConfig, rng: &mut R) -> Result<Vec<TrainingSample>> {
    let (batch_size, background_ratio, jitter) = (config.batch_size, config.background_ratio, config.jitter);
    if dataset.events.is_empty() {
        return Err(Error::Sampling("dataset has no labeled events".into()));
    }
    if dataset.background.is_empty() && background_ratio > 0.0 {
        return Err(Error::Sampling("dataset has no background frames".into()));
    }
    let mut out = Vec::with_capacity(batch_size);
    while out.len() < batch_size {
        let is_background = rng.random::<f64>() < background_ratio;
        let mut attempt = 0;
        loop {
            let (mi, center, target) = if is_background {
                let (mi, f) = dataset.background[rng.random_range(0..dataset.background.len())];
                (mi, f, BACKGROUND)
            } else {
                let pick = match config.event_sampling {
                    EventSampling::Uniform => rng.random_range(0..dataset.events.len()),
                    EventSampling::ClassBalanced => {
                        let pool = &dataset.by_class[rng.random_range(0..dataset.by_class.len())];
                        pool[rng.random_range(0..pool.len())]
                    }
                };
                let (mi, label) = dataset.events[pick];
                let n = dataset.matches[mi].trajectories.frame_count as i64;
                let offset = rng.random_range(-(jitter as i64)..=jitter as i64);
                let center = (label.frame as i64 + offset).clamp(0, n - 1) as usize;
                (mi, center, label.class.prob_index())
            };
            match build_window(&dataset.matches[mi].trajectories, &dataset.window, center) {
                Ok(window) => {
                    out.push(TrainingSample {
                        window,
                        target,
                        match_index: mi,
                        center,
                    });
                    break;
                }
                Err(Error::NoBall { .. }) if attempt < MAX_REDRAWS => attempt += 1,
                Err(e) => return Err(e),
            }
        }
    }
    Ok(out)
}
