use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::sampling::{sample_batch, Dataset, LabeledMatch};
use super::{Model, TrainConfig};
use crate::autodiff::{Params, Tensor};
use crate::detector::{infer_timeline, ProbabilityTimeline, Segment};
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::trajstore::{EventLabel, WindowSpec};
use crate::tuner::{tune, GridSpec};

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const EPS: f64 = 1e-8;

/// Adam with bias correction.
#[derive(Debug, Clone)]
pub struct Adam {
    lr: f64,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(params: &Params, lr: f64) -> Adam {
        let zeros = || params.iter().map(|(_, _, t)| vec![0.0; t.len()]).collect();
        Adam {
            lr,
            step: 0,
            m: zeros(),
            v: zeros(),
        }
    }

    pub fn update(&mut self, params: &mut Params, grads: &[Tensor]) {
        self.step += 1;
        let c1 = 1.0 - BETA1.powi(self.step as i32);
        let c2 = 1.0 - BETA2.powi(self.step as i32);
        for (((p, g), m), v) in params.values_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            for (((w, gv), mv), vv) in p.data_mut().iter_mut().zip(g.data()).zip(m.iter_mut()).zip(v.iter_mut()) {
                *mv = BETA1 * *mv + (1.0 - BETA1) * gv;
                *vv = BETA2 * *vv + (1.0 - BETA2) * gv * gv;
                let mhat = *mv / c1;
                let vhat = *vv / c2;
                *w -= self.lr * mhat / (vhat.sqrt() + EPS);
            }
        }
    }
}

/// Model plus optimizer state; one call to [`Trainer::step`] is one
/// optimizer update on the mean loss of a batch.
#[derive(Debug, Clone)]
pub struct Trainer {
    pub model: Model,
    optimizer: Adam,
    clip_norm: Option<f64>,
    exec: Exec,
}

impl Trainer {
    pub fn new(model: Model, config: &TrainConfig, exec: Exec) -> Trainer {
        let optimizer = Adam::new(model.params(), config.learning_rate);
        Trainer {
            model,
            optimizer,
            clip_norm: config.clip_norm,
            exec,
        }
    }

    /// Returns the batch mean loss before the update. Per-sample gradients
    /// may be computed in parallel; they are summed in batch order.
    pub fn step(&mut self, batch: &[(Tensor, usize)]) -> Result<f64> {
        if batch.is_empty() {
            return Ok(0.0);
        }
        let model = &self.model;
        let results = self.exec.map(batch, |(x, target)| model.loss_and_grads(x, *target));
        let mut total = 0.0;
        let mut sum: Option<Vec<Tensor>> = None;
        for r in results {
            let (loss, grads) = r?;
            total += loss;
            match &mut sum {
                None => sum = Some(grads),
                Some(acc) => acc.iter_mut().zip(&grads).for_each(|(a, g)| a.add_assign(g)),
            }
        }
        let mean_loss = total / batch.len() as f64;
        if !mean_loss.is_finite() {
            return Err(Error::Divergence {
                epoch: 0,
                step: 0,
                loss: mean_loss,
            });
        }
        let mut grads = sum.expect("non-empty batch");
        let scale = 1.0 / batch.len() as f64;
        let mut norm_sq = 0.0;
        for g in &mut grads {
            for v in g.data_mut() {
                *v *= scale;
                norm_sq += *v * *v;
            }
        }
        if !norm_sq.is_finite() {
            return Err(Error::Divergence {
                epoch: 0,
                step: 0,
                loss: norm_sq,
            });
        }
        if let Some(limit) = self.clip_norm {
            let norm = norm_sq.sqrt();
            if norm > limit {
                let f = limit / norm;
                grads.iter_mut().for_each(|g| g.data_mut().iter_mut().for_each(|v| *v *= f));
            }
        }
        self.optimizer.update(self.model.params_mut(), &grads);
        Ok(mean_loss)
    }

    pub fn into_model(self) -> Model {
        self.model
    }
}

/// Fixed validation segments drawn once from held-out matches.
#[derive(Debug, Clone)]
pub struct ValidationSet {
    pub matches: Vec<LabeledMatch>,
    /// (match index, segment)
    pub segments: Vec<(usize, Segment)>,
}

impl ValidationSet {
    /// Splits each match into non-overlapping segments of `segment_len`
    /// frames and keeps `per_match` of them chosen at random.
    pub fn sample(matches: Vec<LabeledMatch>, segment_len: usize, per_match: usize, seed: u64) -> ValidationSet {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut segments = Vec::new();
        for (mi, m) in matches.iter().enumerate() {
            let n = m.trajectories.frame_count;
            let mut tiles: Vec<Segment> = (0..n / segment_len.max(1))
                .map(|i| Segment {
                    start: i * segment_len,
                    end: (i + 1) * segment_len,
                })
                .collect();
            if tiles.is_empty() && n > 0 {
                tiles.push(Segment { start: 0, end: n });
            }
            tiles.shuffle(&mut rng);
            tiles.truncate(per_match);
            tiles.sort_by_key(|s| s.start);
            segments.extend(tiles.into_iter().map(|s| (mi, s)));
        }
        ValidationSet { matches, segments }
    }

    pub fn timelines(&self, model: &Model, spec: &WindowSpec, exec: Exec) -> Result<Vec<ProbabilityTimeline>> {
        self.segments
            .iter()
            .map(|(mi, seg)| infer_timeline(model, &self.matches[*mi].trajectories, *seg, spec, exec))
            .collect()
    }

    pub fn ground_truth(&self) -> Vec<Vec<EventLabel>> {
        self.segments
            .iter()
            .map(|(mi, seg)| {
                self.matches[*mi]
                    .labels
                    .iter()
                    .filter(|l| seg.contains(l.frame))
                    .copied()
                    .collect()
            })
            .collect()
    }

    pub fn frames(&self) -> usize {
        self.segments.iter().map(|(_, s)| s.len()).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    /// Best validation F-score per class (pass, reception, shot) after
    /// tuning thresholds on the validation segments.
    pub val_f: [f64; 3],
    pub val_mean_f: f64,
}

#[derive(Debug, Clone)]
pub struct TrainReport {
    pub model: Model,
    pub log: Vec<EpochLog>,
    pub best_epoch: usize,
}

/// Trains for `max_epochs`, validating after each epoch and returning the
/// parameters of the epoch with the best mean validation F-score.
pub fn train(
    model: Model,
    dataset: &Dataset,
    validation: &ValidationSet,
    config: &TrainConfig,
    grid: &GridSpec,
    w_eval: usize,
    exec: Exec,
) -> Result<TrainReport> {
    config.validate()?;
    let spec = *dataset.window();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let batches = config.batches_per_epoch.unwrap_or_else(|| {
        let per_epoch = (dataset.event_count() as f64 / (1.0 - config.background_ratio).max(0.05)).ceil() as usize;
        per_epoch.div_ceil(config.batch_size).max(1)
    });
    let truth = validation.ground_truth();
    let fps = validation.matches.first().map_or(crate::trajstore::DEFAULT_FPS, |m| m.trajectories.fps);

    let mut trainer = Trainer::new(model, config, exec);
    let mut best: Option<(f64, usize, Params)> = None;
    let mut log = Vec::with_capacity(config.max_epochs);
    for epoch in 1..=config.max_epochs {
        let mut epoch_loss = 0.0;
        for step in 0..batches {
            let samples = sample_batch(dataset, config, &mut rng)?;
            let batch: Vec<(Tensor, usize)> = samples.into_iter().map(|s| (trainer.model.encode(&s.window), s.target)).collect();
            let loss = trainer.step(&batch).map_err(|e| match e {
                Error::Divergence { loss, .. } => Error::Divergence { epoch, step, loss },
                other => other,
            })?;
            epoch_loss += loss;
        }
        let train_loss = epoch_loss / batches as f64;

        let timelines = validation.timelines(&trainer.model, &spec, exec)?;
        let tuned = tune(&timelines, &truth, grid, w_eval, fps, exec);
        let val_f = tuned.f_scores();
        let tunable: Vec<f64> = tuned.tunable_f_scores();
        let val_mean_f = if tunable.is_empty() {
            0.0
        } else {
            tunable.iter().sum::<f64>() / tunable.len() as f64
        };
        log::info!(
            "epoch {epoch}: train_loss {train_loss:.5} val_f {:.4}/{:.4}/{:.4} mean {val_mean_f:.4}",
            val_f[0],
            val_f[1],
            val_f[2]
        );
        log.push(EpochLog {
            epoch,
            train_loss,
            val_f,
            val_mean_f,
        });
        if best.as_ref().is_none_or(|(f, _, _)| val_mean_f > *f) {
            best = Some((val_mean_f, epoch, trainer.model.params().clone()));
        }
    }
    let mut model = trainer.into_model();
    let best_epoch = match best {
        Some((_, epoch, params)) => {
            *model.params_mut() = params;
            epoch
        }
        None => 0,
    };
    Ok(TrainReport { model, log, best_epoch })
}
