//! Sequential vs rayon execution of the data-parallel hot paths.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use trajdet::autodiff::Tensor;
use trajdet::detector::{infer_timeline, ProbabilityTimeline, Segment};
use trajdet::models::{Model, ModelConfig, TrainConfig, Trainer, Variant, NUM_CLASSES};
use trajdet::simgen::{generate, SimConfig};
use trajdet::trajstore::{EventClass, EventLabel, WindowSpec};
use trajdet::tuner::{tune, GridSpec};
use trajdet::Exec;

const MODES: [(&str, Exec); 2] = [("sequential", Exec::Sequential), ("parallel", Exec::Parallel)];

fn small_model(spec: &WindowSpec) -> Model {
    let config = ModelConfig {
        width: 16,
        heads: 2,
        ..ModelConfig::for_window(Variant::TcnTransformer, spec, 22)
    };
    Model::new(config, 0).unwrap()
}

fn bench_inference(c: &mut Criterion) {
    let sim = SimConfig {
        duration_minutes: 0.5,
        ..SimConfig::default()
    };
    let m = generate(&sim, 0).unwrap().trajectories.normalize();
    let spec = WindowSpec::default();
    let model = small_model(&spec);
    let segment = Segment { start: 0, end: 300 };
    let mut group = c.benchmark_group("infer_timeline_300_frames");
    group.sample_size(10);
    for (name, exec) in MODES {
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| infer_timeline(&model, &m, segment, &spec, exec).unwrap())
        });
    }
    group.finish();
}

fn bench_tuner(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut timelines = Vec::new();
    let mut truth = Vec::new();
    for s in 0..8 {
        let rows: Vec<[f64; NUM_CLASSES]> = (0..500)
            .map(|_| {
                let p: [f64; 3] = [rng.random_range(0.0..0.33), rng.random_range(0.0..0.33), rng.random_range(0.0..0.33)];
                [1.0 - p.iter().sum::<f64>(), p[0], p[1], p[2]]
            })
            .collect();
        timelines.push(ProbabilityTimeline {
            match_id: format!("s{s}"),
            start: s * 500,
            rows,
        });
        let labels: Vec<EventLabel> = (0..12)
            .map(|i| EventLabel {
                frame: s * 500 + i * 40,
                class: EventClass::ALL[i % 3],
            })
            .collect();
        truth.push(labels);
    }
    let grid = GridSpec::default();
    let mut group = c.benchmark_group("tune_8_segments");
    group.sample_size(10);
    for (name, exec) in MODES {
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| tune(&timelines, &truth, &grid, 51, 30.0, exec))
        });
    }
    group.finish();
}

fn bench_train_step(c: &mut Criterion) {
    let spec = WindowSpec::default();
    let model = small_model(&spec);
    let cfg = model.config().clone();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let batch: Vec<(Tensor, usize)> = (0..32)
        .map(|i| {
            let x = Tensor::from_fn(&[cfg.window, cfg.input_channels], |_| rng.random_range(-1.0..1.0));
            (x, i % NUM_CLASSES)
        })
        .collect();
    let mut group = c.benchmark_group("train_step_batch_32");
    group.sample_size(10);
    for (name, exec) in MODES {
        let mut trainer = Trainer::new(model.clone(), &TrainConfig::default(), exec);
        group.bench_function(BenchmarkId::from_parameter(name), |b| b.iter(|| trainer.step(&batch).unwrap()));
    }
    group.finish();
}

criterion_group!(benches, bench_inference, bench_tuner, bench_train_step);
criterion_main!(benches);
