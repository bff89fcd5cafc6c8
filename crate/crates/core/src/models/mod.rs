//! Trajectory sequence classifiers.
//!
//! Three variants share the same input (`[T, 2N]` frame-major windows) and the
//! same head (temporal mean-pool, linear layer, softmax over background +
//! three event classes):
//!
//! * `Tcn`: stacked causal dilated convolutions with gated activations and
//!   residual/skip connections.
//! * `Transformer`: per-frame linear projection, sinusoidal positions, and
//!   self-attention encoder layers over time.
//! * `TcnTransformer`: the TCN feature sequence feeds the encoder.

mod layers;
mod sampling;
mod train;

use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{ParamId, Params, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::trajstore::{WindowSpec, WindowTensor};

pub use layers::{EncoderLayer, TcnStack};
pub use sampling::{sample_batch, Dataset, LabeledMatch, TrainingSample};
pub use train::{train, Adam, EpochLog, TrainReport, Trainer, ValidationSet};

pub const NUM_CLASSES: usize = 4;
pub const BACKGROUND: usize = 0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Tcn,
    Transformer,
    TcnTransformer,
}

impl Variant {
    pub fn name(self) -> &'static str {
        match self {
            Variant::Tcn => "tcn",
            Variant::Transformer => "transformer",
            Variant::TcnTransformer => "tcn_transformer",
        }
    }

    fn uses_tcn(self) -> bool {
        matches!(self, Variant::Tcn | Variant::TcnTransformer)
    }

    fn uses_encoder(self) -> bool {
        matches!(self, Variant::Transformer | Variant::TcnTransformer)
    }
}

/// Fixed transform from a window to the model input matrix.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InputEncoding {
    /// Normalized pitch coordinates as stored in the window.
    Absolute,
    /// Coordinates relative to the ball at the center frame, multiplied by
    /// `scale`. Unobserved entries stay zero. With `anchored`, the reference
    /// position is added back so the input also says where on the pitch the
    /// window lies.
    BallRelative {
        scale: f64,
        anchored: bool,
    },
}

impl Default for InputEncoding {
    fn default() -> Self {
        InputEncoding::BallRelative {
            scale: 20.0,
            anchored: true,
        }
    }
}

impl InputEncoding {
    pub fn encode(self, window: &WindowTensor) -> Tensor {
        let mut x = window.to_input();
        let InputEncoding::BallRelative { scale, anchored } = self else {
            return x;
        };
        let (t_len, n) = (window.frames, window.objects);
        let center = t_len / 2;
        // reference: the observed ball sample closest to the center frame
        let reference = (0..t_len)
            .filter(|&t| window.observed(t, 0))
            .min_by_key(|&t| (t.abs_diff(center), t))
            .map(|t| (window.value(0, t, 0), window.value(1, t, 0)));
        let Some((bx, by)) = reference else {
            return x;
        };
        let (ox, oy) = if anchored { (bx, by) } else { (0.0, 0.0) };
        let data = x.data_mut();
        for t in 0..t_len {
            for o in 0..n {
                if window.observed(t, o) {
                    let row = t * 2 * n;
                    data[row + o] = (data[row + o] - bx) * scale + ox;
                    data[row + n + o] = (data[row + n + o] - by) * scale + oy;
                }
            }
        }
        x
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub variant: Variant,
    pub input: InputEncoding,
    /// Window length in frames.
    pub window: usize,
    /// `2 * (1 + K)`.
    pub input_channels: usize,
    /// Feature width D.
    pub width: usize,
    pub tcn_blocks: usize,
    pub kernel: usize,
    pub dilations: Vec<usize>,
    pub heads: usize,
    pub encoder_layers: usize,
    pub classes: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            variant: Variant::TcnTransformer,
            input: InputEncoding::default(),
            window: 51,
            input_channels: 12,
            width: 64,
            tcn_blocks: 5,
            kernel: 3,
            dilations: vec![1, 2, 4, 8, 16],
            heads: 4,
            encoder_layers: 2,
            classes: NUM_CLASSES,
        }
    }
}

impl ModelConfig {
    /// Default architecture sized for `spec`; `players` is the number of
    /// player tracks, needed only for [`PlayerSelection::All`].
    pub fn for_window(variant: Variant, spec: &WindowSpec, players: usize) -> Self {
        ModelConfig {
            variant,
            window: spec.length,
            input_channels: 2 * (1 + spec.players.slots(players)),
            ..ModelConfig::default()
        }
    }

    pub fn receptive_field(&self) -> usize {
        1 + (self.kernel.saturating_sub(1)) * self.dilations.iter().sum::<usize>()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, msg: String| Err(Error::config(format!("model.{field}"), msg));
        if let InputEncoding::BallRelative { scale, .. } = self.input {
            if !(scale > 0.0 && scale.is_finite()) {
                return bad("input.scale", format!("must be positive, got {scale}"));
            }
        }
        if self.classes != NUM_CLASSES {
            return bad("classes", format!("must be {NUM_CLASSES}"));
        }
        if self.width == 0 {
            return bad("width", "must be positive".into());
        }
        if self.input_channels == 0 || self.input_channels % 2 != 0 {
            return bad("input_channels", format!("must be 2 * (1 + K), got {}", self.input_channels));
        }
        if self.window % 2 == 0 {
            return bad("window", format!("must be odd, got {}", self.window));
        }
        if self.variant.uses_encoder() && (self.heads == 0 || self.width % self.heads != 0) {
            return bad("heads", format!("width {} is not divisible by {} heads", self.width, self.heads));
        }
        if self.variant.uses_tcn() {
            if self.kernel < 2 {
                return bad("kernel", "must be at least 2".into());
            }
            if self.tcn_blocks != self.dilations.len() {
                return bad(
                    "tcn_blocks",
                    format!("{} blocks but {} dilations", self.tcn_blocks, self.dilations.len()),
                );
            }
            let powers = self.dilations.iter().all(|d| d.is_power_of_two());
            let increasing = self.dilations.windows(2).all(|w| w[0] < w[1]);
            if !powers || !increasing {
                return bad("dilations", "must be strictly increasing powers of two".into());
            }
            if self.receptive_field() < self.window {
                return bad(
                    "dilations",
                    format!("receptive field {} is shorter than the window {}", self.receptive_field(), self.window),
                );
            }
        }
        Ok(())
    }
}

/// How event windows pick their label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventSampling {
    /// Every label equally likely, so classes keep their natural frequency.
    #[default]
    Uniform,
    /// A class uniformly among those present, then a label of that class.
    ClassBalanced,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub learning_rate: f64,
    pub max_epochs: usize,
    pub background_ratio: f64,
    pub jitter: usize,
    pub event_sampling: EventSampling,
    pub seed: u64,
    /// Optimizer steps per epoch; `None` sizes an epoch to visit every
    /// labeled event about once.
    pub batches_per_epoch: Option<usize>,
    /// Global gradient-norm clip; `None` disables clipping.
    pub clip_norm: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 32,
            learning_rate: 1e-3,
            max_epochs: 20,
            background_ratio: 0.5,
            jitter: 2,
            event_sampling: EventSampling::Uniform,
            seed: 0,
            batches_per_epoch: None,
            clip_norm: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::config("train.batch_size", "must be positive"));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::config("train.learning_rate", "must be a finite value >= 0"));
        }
        if !(0.0..=1.0).contains(&self.background_ratio) {
            return Err(Error::config("train.background_ratio", "must lie in [0, 1]"));
        }
        if let Some(c) = self.clip_norm {
            if !(c > 0.0) {
                return Err(Error::config("train.clip_norm", "must be positive"));
            }
        }
        Ok(())
    }
}

/// Output of one forward pass on a tape.
pub struct Forward {
    pub probs: Var,
    /// Attention matrices `[T, T]`, ordered by layer then head.
    pub attention: Vec<Var>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    config: ModelConfig,
    params: Params,
    tcn: Option<TcnStack>,
    input_proj: Option<(ParamId, ParamId)>,
    encoder: Vec<EncoderLayer>,
    head: (ParamId, ParamId),
}

impl Model {
    /// Fresh model: weights uniform in `±sqrt(1/fan_in)`, biases zero, and a
    /// zero head so the untrained output is uniform.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Model> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = Params::new();
        let d = config.width;
        let tcn = config
            .variant
            .uses_tcn()
            .then(|| TcnStack::new(&mut params, &mut rng, config.input_channels, d, config.kernel, &config.dilations));
        let input_proj = (config.variant == Variant::Transformer).then(|| {
            (
                params.add_uniform("input.w", &[config.input_channels, d], config.input_channels, &mut rng),
                params.add_zeros("input.b", &[d]),
            )
        });
        let encoder = if config.variant.uses_encoder() {
            (0..config.encoder_layers)
                .map(|i| EncoderLayer::new(&mut params, &mut rng, &format!("enc.{i}"), d, config.heads))
                .collect()
        } else {
            Vec::new()
        };
        let head = (params.add_zeros("head.w", &[d, NUM_CLASSES]), params.add_zeros("head.b", &[NUM_CLASSES]));
        Ok(Model {
            config,
            params,
            tcn,
            input_proj,
            encoder,
            head,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &Params {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut Params {
        &mut self.params
    }

    pub fn check_input(&self, x: &Tensor) -> Result<()> {
        let expected = [self.config.window, self.config.input_channels];
        if x.shape() != expected {
            return Err(Error::Shape {
                op: "model input",
                left: x.shape().to_vec(),
                right: expected.to_vec(),
            });
        }
        Ok(())
    }

    /// Records the forward pass for input `x` (`[T, 2N]`) on `tape`.
    pub fn forward<'a>(&'a self, tape: &mut Tape<'a>, x: Var) -> Result<Forward> {
        self.check_input(tape.value(x))?;
        let p = &self.params;
        let mut attention = Vec::new();
        let mut h = match (&self.tcn, self.input_proj) {
            (Some(tcn), _) => tcn.forward(tape, p, x)?,
            (None, Some((w, b))) => {
                let (w, b) = (tape.param(p, w), tape.param(p, b));
                tape.linear(x, w, b)?
            }
            (None, None) => unreachable!("every variant has an input stage"),
        };
        if !self.encoder.is_empty() || self.config.variant == Variant::Transformer {
            let pe = tape.constant(positional_encoding(self.config.window, self.config.width));
            h = tape.add(h, pe)?;
            for layer in &self.encoder {
                h = layer.forward(tape, p, h, &mut attention)?;
            }
        }
        let pooled = tape.mean(h, 0)?;
        let (w, b) = (tape.param(p, self.head.0), tape.param(p, self.head.1));
        let logits = tape.linear(pooled, w, b)?;
        let probs = tape.softmax(logits, 1)?;
        Ok(Forward { probs, attention })
    }

    /// Model input for a window under the configured encoding.
    pub fn encode(&self, window: &WindowTensor) -> Tensor {
        self.config.input.encode(window)
    }

    pub fn predict_input(&self, x: &Tensor) -> Result<[f64; NUM_CLASSES]> {
        let mut tape = Tape::new();
        let xv = tape.constant(x.clone());
        let out = self.forward(&mut tape, xv)?;
        let p = tape.value(out.probs).data();
        Ok([p[0], p[1], p[2], p[3]])
    }

    pub fn predict(&self, window: &WindowTensor) -> Result<[f64; NUM_CLASSES]> {
        self.predict_input(&self.encode(window))
    }

    /// Cross-entropy loss for one sample and its per-parameter gradients.
    pub fn loss_and_grads(&self, x: &Tensor, target: usize) -> Result<(f64, Vec<Tensor>)> {
        let mut tape = Tape::new();
        let xv = tape.constant(x.clone());
        let out = self.forward(&mut tape, xv)?;
        let loss = tape.cross_entropy(out.probs, target)?;
        let value = tape.value(loss).item();
        let grads = tape.backward(loss)?;
        Ok((value, grads.for_params(&tape, &self.params)))
    }

    pub fn loss(&self, x: &Tensor, target: usize) -> Result<f64> {
        let mut tape = Tape::new();
        let xv = tape.constant(x.clone());
        let out = self.forward(&mut tape, xv)?;
        let loss = tape.cross_entropy(out.probs, target)?;
        Ok(tape.value(loss).item())
    }
}

/// Sinusoidal positions over the frame axis: `sin` on even columns, `cos`
/// on odd ones, wavelengths growing geometrically up to 10000.
pub fn positional_encoding(frames: usize, width: usize) -> Tensor {
    Tensor::from_fn(&[frames, width], |idx| {
        let (t, c) = (idx / width, idx % width);
        let rate = 1.0 / 10000f64.powf((2 * (c / 2)) as f64 / width as f64);
        let angle = t as f64 * rate;
        if c % 2 == 0 {
            angle.sin()
        } else {
            angle.cos()
        }
    })
}

/// JSON sidecar stored next to a parameter checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelManifest {
    pub format: String,
    pub window: WindowSpec,
    pub model: ModelConfig,
    pub train: TrainConfig,
}

pub const MANIFEST_FORMAT: &str = "trajdet-model/v1";
pub const PARAMS_FILE: &str = "params.json";
pub const MANIFEST_FILE: &str = "model.json";

pub fn save_model(dir: &Path, model: &Model, window: &WindowSpec, train: &TrainConfig) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    model.params().save(&dir.join(PARAMS_FILE))?;
    let manifest = ModelManifest {
        format: MANIFEST_FORMAT.into(),
        window: *window,
        model: model.config().clone(),
        train: train.clone(),
    };
    let path = dir.join(MANIFEST_FILE);
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    fs::write(&path, text).map_err(|e| Error::io(path, e))
}

pub fn load_model(dir: &Path) -> Result<(Model, ModelManifest)> {
    let path = dir.join(MANIFEST_FILE);
    if !path.exists() {
        return Err(Error::Checkpoint(format!("no model manifest at {}", path.display())));
    }
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let manifest: ModelManifest = serde_json::from_str(&text).map_err(|e| Error::Checkpoint(e.to_string()))?;
    if manifest.format != MANIFEST_FORMAT {
        return Err(Error::Checkpoint(format!("unsupported manifest format {:?}", manifest.format)));
    }
    let params_path = dir.join(PARAMS_FILE);
    if !params_path.exists() {
        return Err(Error::Checkpoint(format!("missing checkpoint {}", params_path.display())));
    }
    let stored = Params::load(&params_path)?;
    let mut model = Model::new(manifest.model.clone(), 0)?;
    model.params_mut().load_from(&stored)?;
    Ok((model, manifest))
}

#[cfg(test)]
mod tests;
