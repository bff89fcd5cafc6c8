use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::exec::Exec;
use crate::simgen::{generate, SimConfig};
use crate::trajstore::{EventClass, PlayerSelection};

fn small(variant: Variant) -> ModelConfig {
    ModelConfig {
        variant,
        input: InputEncoding::default(),
        window: 9,
        input_channels: 4,
        width: 8,
        tcn_blocks: 3,
        kernel: 3,
        dilations: vec![1, 2, 4],
        heads: 2,
        encoder_layers: 1,
        classes: NUM_CLASSES,
    }
}

fn random_input(rows: usize, cols: usize, seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(&[rows, cols], |_| rng.random_range(-1.0..1.0))
}

/// Replaces every parameter (including the zero head) with random values.
fn randomize(model: &mut Model, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for t in model.params_mut().values_mut() {
        t.data_mut().iter_mut().for_each(|v| *v = rng.random_range(-0.5..0.5));
    }
}

#[test]
fn default_config_accepts_default_window() {
    let model = Model::new(ModelConfig::default(), 0).unwrap();
    let p = model.predict_input(&random_input(51, 12, 1)).unwrap();
    assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
}

#[test]
fn zero_head_gives_uniform_output() {
    for variant in [Variant::Tcn, Variant::Transformer, Variant::TcnTransformer] {
        let model = Model::new(small(variant), 3).unwrap();
        for seed in 0..3 {
            assert_eq!(model.predict_input(&random_input(9, 4, seed)).unwrap(), [0.25; 4]);
        }
    }
}

#[test]
fn probabilities_normalized_for_random_weights() {
    for variant in [Variant::Tcn, Variant::Transformer, Variant::TcnTransformer] {
        let mut model = Model::new(small(variant), 1).unwrap();
        randomize(&mut model, 9);
        for seed in 0..5 {
            let p = model.predict_input(&random_input(9, 4, seed)).unwrap();
            assert!(p.iter().all(|v| *v >= 0.0));
            assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9, "{variant:?}: {p:?}");
        }
    }
}

#[test]
fn attention_rows_sum_to_one() {
    let mut model = Model::new(small(Variant::TcnTransformer), 2).unwrap();
    randomize(&mut model, 4);
    let mut tape = Tape::new();
    let x = tape.constant(random_input(9, 4, 0));
    let out = model.forward(&mut tape, x).unwrap();
    assert_eq!(out.attention.len(), 2);
    for a in out.attention {
        let a = tape.value(a);
        assert_eq!(a.shape(), &[9, 9]);
        for r in 0..9 {
            let s: f64 = a.row(r).iter().sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
    }
}

#[test]
fn shape_mismatch_is_contract_error() {
    let model = Model::new(small(Variant::Tcn), 0).unwrap();
    let err = model.predict_input(&random_input(9, 6, 0)).unwrap_err();
    assert!(matches!(err, Error::Shape { .. }));
}

#[test]
fn tcn_transformer_without_encoder_equals_tcn() {
    let mut a = Model::new(ModelConfig { encoder_layers: 0, ..small(Variant::TcnTransformer) }, 5).unwrap();
    let mut b = Model::new(small(Variant::Tcn), 5).unwrap();
    randomize(&mut a, 8);
    randomize(&mut b, 8);
    for seed in 0..3 {
        let x = random_input(9, 4, seed);
        assert_eq!(a.predict_input(&x).unwrap(), b.predict_input(&x).unwrap());
    }
}

#[test]
fn single_gradient_step_decreases_loss() {
    for variant in [Variant::Tcn, Variant::Transformer, Variant::TcnTransformer] {
        let mut model = Model::new(small(variant), 11).unwrap();
        randomize(&mut model, 12);
        let x = random_input(9, 4, 3);
        let (before, grads) = model.loss_and_grads(&x, 2).unwrap();
        let decreased = [1e-2, 1e-3, 1e-4].iter().any(|&lr| {
            let mut stepped = model.clone();
            for (t, g) in stepped.params_mut().values_mut().zip(&grads) {
                t.data_mut().iter_mut().zip(g.data()).for_each(|(v, d)| *v -= lr * d);
            }
            stepped.loss(&x, 2).unwrap() < before
        });
        assert!(decreased, "{variant:?}");
    }
}

#[test]
fn config_validation() {
    let c = ModelConfig { width: 10, heads: 4, ..ModelConfig::default() };
    assert!(c.validate().unwrap_err().to_string().contains("heads"));
    let c = ModelConfig { dilations: vec![1, 2, 4, 8, 12], ..ModelConfig::default() };
    assert!(c.validate().is_err());
    let c = ModelConfig { dilations: vec![1, 2, 4, 8], tcn_blocks: 4, ..ModelConfig::default() };
    assert!(c.validate().unwrap_err().to_string().contains("receptive field"));
    assert_eq!(ModelConfig::default().receptive_field(), 63);
    let t = TrainConfig { background_ratio: 1.5, ..TrainConfig::default() };
    assert!(t.validate().is_err());
}

#[test]
fn manifest_round_trip() {
    let mut model = Model::new(small(Variant::TcnTransformer), 0).unwrap();
    randomize(&mut model, 1);
    let dir = tempfile::tempdir().unwrap();
    let spec = WindowSpec::new(9, PlayerSelection::Nearest(1)).unwrap();
    save_model(dir.path(), &model, &spec, &TrainConfig::default()).unwrap();
    let (loaded, manifest) = load_model(dir.path()).unwrap();
    assert_eq!(loaded, model);
    assert_eq!(manifest.window, spec);
    let missing = tempfile::tempdir().unwrap();
    assert!(matches!(load_model(missing.path()), Err(Error::Checkpoint(_))));
}

/// Windows whose only difference is the ball speed.
fn speed_windows(n: usize, seed: u64) -> Vec<(Tensor, usize)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let target = if i % 2 == 0 { BACKGROUND } else { 1 };
            let speed = if target == BACKGROUND { 0.002 } else { 0.03 };
            let heading: f64 = rng.random_range(0.0..std::f64::consts::TAU);
            let x = Tensor::from_fn(&[9, 2], |idx| {
                let (t, c) = (idx / 2, idx % 2);
                let dir = if c == 0 { heading.cos() } else { heading.sin() };
                (t as f64 - 4.0) * speed * dir + rng.random_range(-0.001..0.001)
            });
            (x, target)
        })
        .collect()
}

#[test]
fn training_smoke_loss_decreases() {
    let config = ModelConfig { input_channels: 2, ..small(Variant::Tcn) };
    let model = Model::new(config, 0).unwrap();
    let data = speed_windows(200, 1);
    let train = TrainConfig { learning_rate: 1e-2, ..TrainConfig::default() };
    let mut trainer = Trainer::new(model, &train, Exec::Sequential);
    let mut losses = Vec::new();
    for _ in 0..5 {
        let mut total = 0.0;
        for batch in data.chunks(20) {
            total += trainer.step(batch).unwrap();
        }
        losses.push(total / 10.0);
    }
    assert!(losses.windows(2).all(|w| w[1] <= w[0] + 1e-3), "{losses:?}");
    assert!(losses[4] < losses[0] * 0.8, "{losses:?}");
}

#[test]
fn zero_learning_rate_leaves_params_unchanged() {
    let model = Model::new(ModelConfig { input_channels: 2, ..small(Variant::TcnTransformer) }, 0).unwrap();
    let before = model.params().clone();
    let train = TrainConfig { learning_rate: 0.0, ..TrainConfig::default() };
    let mut trainer = Trainer::new(model, &train, Exec::Sequential);
    for batch in speed_windows(40, 2).chunks(20) {
        trainer.step(batch).unwrap();
    }
    assert_eq!(trainer.model.params(), &before);
}

#[test]
fn training_is_deterministic_across_exec_modes() {
    let run = |exec| {
        let model = Model::new(ModelConfig { input_channels: 2, ..small(Variant::TcnTransformer) }, 3).unwrap();
        let mut trainer = Trainer::new(model, &TrainConfig::default(), exec);
        let losses: Vec<f64> = speed_windows(60, 4).chunks(20).map(|b| trainer.step(b).unwrap()).collect();
        (losses, trainer.into_model())
    };
    let a = run(Exec::Sequential);
    assert_eq!(a, run(Exec::Sequential));
    assert_eq!(a, run(Exec::Parallel));
}

#[test]
fn divergence_is_reported() {
    let mut model = Model::new(ModelConfig { input_channels: 2, ..small(Variant::Tcn) }, 0).unwrap();
    let id = model.params().id("head.b").unwrap();
    model.params_mut().get_mut(id).data_mut()[0] = f64::NAN;
    let mut trainer = Trainer::new(model, &TrainConfig::default(), Exec::Sequential);
    let err = trainer.step(&speed_windows(4, 0)).unwrap_err();
    assert!(matches!(err, Error::Divergence { .. }));
}

fn batch_config(batch_size: usize, background_ratio: f64, jitter: usize) -> TrainConfig {
    TrainConfig {
        batch_size,
        background_ratio,
        jitter,
        ..TrainConfig::default()
    }
}

fn sim_dataset(jitter_spec: WindowSpec) -> Dataset {
    let cfg = SimConfig { duration_minutes: 1.0, ..SimConfig::default() };
    let m = generate(&cfg, 0).unwrap();
    Dataset::new(vec![LabeledMatch::new(m.trajectories, m.labels)], jitter_spec)
}

#[test]
fn batch_background_ratio_and_jitter() {
    let spec = WindowSpec::default();
    let dataset = sim_dataset(spec);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut background = 0;
    let draws = 50;
    for _ in 0..draws {
        let batch = sample_batch(&dataset, &batch_config(32, 0.5, 2), &mut rng).unwrap();
        assert_eq!(batch.len(), 32);
        for s in &batch {
            let labels = &dataset.matches()[s.match_index].labels;
            if s.target == BACKGROUND {
                background += 1;
                assert!(labels.iter().all(|l| l.frame.abs_diff(s.center) > spec.half()));
            } else {
                let class = EventClass::ALL[s.target - 1];
                assert!(labels.iter().any(|l| l.class == class && l.frame.abs_diff(s.center) <= 2));
            }
        }
    }
    // 1600 Bernoulli(0.5) draws: mean 800, sd 20
    assert!((700..=900).contains(&background), "{background}");
}

#[test]
fn zero_jitter_centers_on_label() {
    let dataset = sim_dataset(WindowSpec::default());
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let batch = sample_batch(&dataset, &batch_config(64, 0.0, 0), &mut rng).unwrap();
    for s in batch {
        let labels = &dataset.matches()[s.match_index].labels;
        assert!(labels.iter().any(|l| l.frame == s.center && l.class.prob_index() == s.target));
    }
}

#[test]
fn batches_are_deterministic_under_seed() {
    let dataset = sim_dataset(WindowSpec::default());
    let draw = |seed| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        sample_batch(&dataset, &batch_config(16, 0.5, 2), &mut rng).unwrap()
    };
    assert_eq!(draw(5), draw(5));
}

#[test]
fn no_background_frames_is_sampling_error() {
    let cfg = SimConfig { duration_minutes: 0.05, ..SimConfig::default() };
    let m = generate(&cfg, 0).unwrap();
    let n = m.trajectories.frame_count;
    // a label every 20 frames leaves no frame farther than 25 from a label
    let labels = (0..n).step_by(20).map(|frame| crate::trajstore::EventLabel { frame, class: EventClass::Pass }).collect();
    let dataset = Dataset::new(vec![LabeledMatch::new(m.trajectories, labels)], WindowSpec::default());
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    assert!(matches!(sample_batch(&dataset, &batch_config(8, 0.5, 2), &mut rng), Err(Error::Sampling(_))));
}

fn window_with(values: &[(f64, f64)], observed: &[bool]) -> WindowTensor {
    // 3 frames, 1 ball + 1 player; entries listed frame-major, ball first
    let (frames, objects) = (3, 2);
    let mut w = WindowTensor {
        frames,
        objects,
        values: vec![0.0; 2 * frames * objects],
        mask: observed.to_vec(),
    };
    for (i, &(x, y)) in values.iter().enumerate() {
        if observed[i] {
            w.values[i] = x;
            w.values[frames * objects + i] = y;
        }
    }
    w
}

#[test]
fn ball_relative_encoding() {
    let pts = [(0.5, 0.5), (0.6, 0.5), (0.52, 0.5), (0.7, 0.4), (0.54, 0.5), (0.8, 0.3)];
    let w = window_with(&pts, &[true, true, true, false, true, true]);
    let x = InputEncoding::BallRelative {
        scale: 10.0,
        anchored: false,
    }.encode(&w);
    // row t = [x_ball, x_player, y_ball, y_player]
    let expect = [
        [-0.2, 0.8, 0.0, 0.0],
        [0.0, 0.0, 0.0, 0.0],
        [0.2, 2.8, 0.0, -2.0],
    ];
    for t in 0..3 {
        for c in 0..4 {
            assert!((x.row(t)[c] - expect[t][c]).abs() < 1e-12, "t {t} c {c}: {:?}", x.row(t));
        }
    }
    assert_eq!(InputEncoding::Absolute.encode(&w), w.to_input());

    let anchored = InputEncoding::BallRelative {
        scale: 10.0,
        anchored: true,
    }
    .encode(&w);
    // the center ball (0.52, 0.5) is added back to observed entries only
    for t in 0..3 {
        for c in 0..4 {
            let offset = match (t, c) {
                (1, 1) | (1, 3) => 0.0,
                (_, 0) | (_, 1) => 0.52,
                _ => 0.5,
            };
            assert!((anchored.row(t)[c] - expect[t][c] - offset).abs() < 1e-12, "t {t} c {c}");
        }
    }
}

#[test]
fn ball_relative_reference_falls_back_to_nearest_ball() {
    let pts = [(0.5, 0.5), (0.6, 0.5), (0.0, 0.0), (0.7, 0.4), (0.54, 0.5), (0.8, 0.3)];
    let w = window_with(&pts, &[true, true, false, true, true, true]);
    let x = InputEncoding::BallRelative {
        scale: 1.0,
        anchored: false,
    }.encode(&w);
    // frames 0 and 2 tie on distance; the earlier one is the reference
    assert!((x.row(2)[0] - 0.04).abs() < 1e-12);
    assert_eq!(x.row(1)[0], 0.0);
}

#[test]
fn class_balanced_sampling_equalizes_classes() {
    let dataset = sim_dataset(WindowSpec::default());
    let config = TrainConfig {
        event_sampling: EventSampling::ClassBalanced,
        ..batch_config(64, 0.0, 0)
    };
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut counts = [0usize; NUM_CLASSES];
    for _ in 0..30 {
        for s in sample_batch(&dataset, &config, &mut rng).unwrap() {
            counts[s.target] += 1;
        }
    }
    let present = EventClass::ALL
        .iter()
        .filter(|c| dataset.matches()[0].labels.iter().any(|l| l.class == **c))
        .count();
    // 1920 draws split evenly over the present classes
    let expected = 1920.0 / present as f64;
    for c in 1..NUM_CLASSES {
        if counts[c] > 0 {
            assert!((counts[c] as f64 - expected).abs() < 0.15 * expected, "{counts:?}");
        }
    }
}
