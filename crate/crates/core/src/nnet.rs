//! Small fully-connected regression networks.
//!
//! Networks operate in normalized space: callers feed min-max normalized
//! inputs and read normalized targets. The [`Normalizer`] stored in a
//! [`ModelBundle`] travels with the weights so that a saved model can be
//! applied to raw data later.
//!
//! Training is plain Adam on a caller-supplied loss. [`ModelBundle::train_mse`]
//! covers the common case; [`ModelBundle::train_with`] accepts any loss that
//! returns its gradient with respect to the network outputs, which is how the
//! interval cost functions are optimized.

use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::data::{Dataset, Normalizer};
use crate::error::{Error, Result};

pub const MODEL_HEADER: &str = "UQSS-MODEL v1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    Relu,
    Identity,
}

impl Activation {
    fn apply(self, z: &mut Array2<f64>) {
        match self {
            Activation::Tanh => z.mapv_inplace(f64::tanh),
            Activation::Relu => z.mapv_inplace(|v| v.max(0.0)),
            Activation::Identity => {}
        }
    }

    /// Multiplies `delta` by the derivative, written in terms of the
    /// activation output `a`.
    fn backprop(self, delta: &mut Array2<f64>, a: &Array2<f64>) {
        match self {
            Activation::Tanh => delta.zip_mut_with(a, |d, &a| *d *= 1.0 - a * a),
            Activation::Relu => delta.zip_mut_with(a, |d, &a| {
                if a <= 0.0 {
                    *d = 0.0
                }
            }),
            Activation::Identity => {}
        }
    }

    fn name(self) -> &'static str {
        match self {
            Activation::Tanh => "tanh",
            Activation::Relu => "relu",
            Activation::Identity => "identity",
        }
    }
}

impl FromStr for Activation {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tanh" => Ok(Activation::Tanh),
            "relu" => Ok(Activation::Relu),
            "identity" => Ok(Activation::Identity),
            _ => Err(Error::arg(format!("unknown activation `{s}`"))),
        }
    }
}

/// Architecture of a network. Hidden layers share one activation; the output
/// layer is always linear.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetSpec {
    pub input_dim: usize,
    pub hidden_layers: Vec<usize>,
    pub output_dim: usize,
    pub activation: Activation,
    pub seed: u64,
}

impl NetSpec {
    pub fn new(input_dim: usize, hidden_layers: Vec<usize>, output_dim: usize, seed: u64) -> Self {
        Self {
            input_dim,
            hidden_layers,
            output_dim,
            activation: Activation::Tanh,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.output_dim == 0 {
            return Err(Error::arg("network dimensions must be positive"));
        }
        if self.hidden_layers.is_empty() || self.hidden_layers.contains(&0) {
            return Err(Error::arg("need at least one hidden layer, all widths positive"));
        }
        Ok(())
    }

    fn layer_dims(&self) -> Vec<(usize, usize)> {
        let mut dims = Vec::with_capacity(self.hidden_layers.len() + 1);
        let mut fan_in = self.input_dim;
        for &w in self.hidden_layers.iter().chain(std::iter::once(&self.output_dim)) {
            dims.push((w, fan_in));
            fan_in = w;
        }
        dims
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BatchSize {
    Full,
    Size(usize),
}

impl Serialize for BatchSize {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            BatchSize::Full => s.serialize_str("full"),
            BatchSize::Size(n) => s.serialize_u64(*n as u64),
        }
    }
}

impl<'de> Deserialize<'de> for BatchSize {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(u64),
            Str(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(0) => Err(serde::de::Error::custom("batch size must be positive")),
            Raw::Num(n) => Ok(BatchSize::Size(n as usize)),
            Raw::Str(s) if s == "full" => Ok(BatchSize::Full),
            Raw::Str(s) => Err(serde::de::Error::custom(format!(
                "batch size must be a positive integer or \"full\", got `{s}`"
            ))),
        }
    }
}

/// A fit whose loss stays above this fraction of the constant predictor's
/// loss counts as stalled.
pub const STALL_RATIO: f64 = 0.5;

pub const RESTART_SEED_STRIDE: u64 = 0x9E37_79B9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: BatchSize,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_epsilon: f64,
    pub seed: u64,
    /// Full-batch only: return the parameters with the lowest training loss
    /// seen, rather than whatever the last step produced. Adam at a fixed
    /// rate keeps oscillating, and the last iterate can sit on a spike.
    #[serde(default = "default_keep_best")]
    pub keep_best: bool,
    /// Extra attempts [`ModelBundle::fit_mse`] may make when a fit stalls.
    #[serde(default = "default_restarts")]
    pub restarts: usize,
}

fn default_restarts() -> usize {
    2
}

fn default_keep_best() -> bool {
    true
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 600,
            learning_rate: 0.05,
            batch_size: BatchSize::Full,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_epsilon: 1e-8,
            seed: 0,
            keep_best: true,
            restarts: 2,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let betas_ok = |b: f64| b > 0.0 && b < 1.0;
        if !(self.learning_rate > 0.0) {
            return Err(Error::arg("learning rate must be positive"));
        }
        if !betas_ok(self.adam_beta1) || !betas_ok(self.adam_beta2) {
            return Err(Error::arg("Adam betas must lie in (0, 1)"));
        }
        if !(self.adam_epsilon > 0.0) {
            return Err(Error::arg("Adam epsilon must be positive"));
        }
        if self.batch_size == BatchSize::Size(0) {
            return Err(Error::arg("batch size must be positive"));
        }
        Ok(())
    }
}

/// What a trained network is used for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Point,
    AbsError,
    Density,
    BoundCorrection,
    Ub,
    Interval,
}

impl Role {
    pub fn as_str(self) -> &'static str {
        match self {
            Role::Point => "point",
            Role::AbsError => "abs_error",
            Role::Density => "density",
            Role::BoundCorrection => "bound_correction",
            Role::Ub => "ub",
            Role::Interval => "interval",
        }
    }

    /// Roles whose target is nonnegative by construction.
    fn clamps_output(self) -> bool {
        matches!(self, Role::AbsError | Role::Density)
    }

    /// Whether a near-constant fit signals a failed run. Absolute errors and
    /// density scores can legitimately carry no signal (homoscedastic noise,
    /// uniform inputs), so those roles never restart.
    fn restarts_on_stall(self) -> bool {
        !matches!(self, Role::AbsError | Role::Density)
    }
}

impl FromStr for Role {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        [
            Role::Point,
            Role::AbsError,
            Role::Density,
            Role::BoundCorrection,
            Role::Ub,
            Role::Interval,
        ]
        .into_iter()
        .find(|r| r.as_str() == s)
        .ok_or_else(|| Error::ModelFormat(format!("unknown role `{s}`")))
    }
}

/// Dense layer mapping `in -> out`; `weights` is `out x in`.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainingMeta {
    pub epochs: usize,
    pub learning_rate: f64,
    pub seed: u64,
    pub initial_loss: f64,
    pub final_loss: f64,
    /// Mean batch loss per epoch.
    pub loss_trace: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelBundle {
    pub role: Role,
    /// Cumulative probability for bound networks.
    pub quantile: Option<f64>,
    pub spec: NetSpec,
    pub layers: Vec<Layer>,
    pub normalizer: Normalizer,
    pub meta: Option<TrainingMeta>,
}

/// Layer activations kept for the backward pass; `acts[0]` is the input.
struct Tape {
    acts: Vec<Array2<f64>>,
}

impl ModelBundle {
    /// Weights uniform in `±1/sqrt(fan_in)`, biases zero.
    pub fn init(spec: NetSpec, role: Role, normalizer: Normalizer) -> Result<Self> {
        spec.validate()?;
        if normalizer.num_inputs() != spec.input_dim {
            return Err(Error::DimensionMismatch {
                expected: spec.input_dim,
                actual: normalizer.num_inputs(),
            });
        }
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        let layers = spec
            .layer_dims()
            .into_iter()
            .map(|(out, fan_in)| {
                let bound = 1.0 / (fan_in as f64).sqrt();
                Layer {
                    weights: Array2::from_shape_simple_fn((out, fan_in), || {
                        rng.gen_range(-bound..bound)
                    }),
                    bias: Array1::zeros(out),
                }
            })
            .collect();
        Ok(Self {
            role,
            quantile: None,
            spec,
            layers,
            normalizer,
            meta: None,
        })
    }

    pub fn with_quantile(mut self, q: f64) -> Self {
        self.quantile = Some(q);
        self
    }

    pub fn input_dim(&self) -> usize {
        self.spec.input_dim
    }

    pub fn output_dim(&self) -> usize {
        self.spec.output_dim
    }

    pub fn num_params(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.len() + l.bias.len())
            .sum()
    }

    fn check_input(&self, x: &ArrayView2<'_, f64>) -> Result<()> {
        if x.ncols() != self.input_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.input_dim(),
                actual: x.ncols(),
            });
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite);
        }
        Ok(())
    }

    fn forward_tape(&self, x: ArrayView2<'_, f64>) -> Tape {
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        acts.push(x.to_owned());
        let last = self.layers.len() - 1;
        for (l, layer) in self.layers.iter().enumerate() {
            let mut z = acts[l].dot(&layer.weights.t());
            z += &layer.bias;
            if l < last {
                self.spec.activation.apply(&mut z);
            }
            acts.push(z);
        }
        Tape { acts }
    }

    /// Backpropagates `grad_out` (d loss / d outputs, one row per sample).
    /// Returns per-layer `(dW, db)` and d loss / d inputs.
    fn backward(&self, tape: &Tape, grad_out: Array2<f64>) -> (Vec<(Array2<f64>, Array1<f64>)>, Array2<f64>) {
        let mut grads = Vec::with_capacity(self.layers.len());
        let mut delta = grad_out;
        for l in (0..self.layers.len()).rev() {
            let a_prev = &tape.acts[l];
            let dw = delta.t().dot(a_prev);
            let db = delta.sum_axis(Axis(0));
            grads.push((dw, db));
            let mut next = delta.dot(&self.layers[l].weights);
            if l > 0 {
                self.spec.activation.backprop(&mut next, a_prev);
            }
            delta = next;
        }
        grads.reverse();
        (grads, delta)
    }

    /// Raw network output for one normalized input row.
    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        let view = ArrayView2::from_shape((1, x.len()), x).expect("contiguous slice");
        Ok(self.forward_batch(view)?.into_raw_vec_and_offset().0)
    }

    /// Raw network output, one row per input row.
    pub fn forward_batch(&self, x: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        self.check_input(&x)?;
        Ok(self.forward_tape(x).acts.pop().expect("non-empty tape"))
    }

    /// First output for every row, with the nonnegativity clamp applied for
    /// absolute-error and density networks.
    pub fn predict_batch(&self, x: ArrayView2<'_, f64>) -> Result<Array1<f64>> {
        let out = self.forward_batch(x)?;
        let mut col = out.column(0).to_owned();
        if self.role.clamps_output() {
            col.mapv_inplace(|v| v.max(0.0));
        }
        Ok(col)
    }

    pub fn predict(&self, x: &[f64]) -> Result<f64> {
        let view = ArrayView2::from_shape((1, x.len()), x).expect("contiguous slice");
        Ok(self.predict_batch(view)?[0])
    }

    fn require_scalar(&self) -> Result<()> {
        if self.output_dim() != 1 {
            return Err(Error::arg(format!(
                "input gradient needs a scalar-output model, this one has {} outputs",
                self.output_dim()
            )));
        }
        Ok(())
    }

    /// d output / d x_k at `x`, by reverse-mode accumulation.
    pub fn input_gradient(&self, x: &[f64]) -> Result<Vec<f64>> {
        let view = ArrayView2::from_shape((1, x.len()), x).expect("contiguous slice");
        Ok(self.input_gradients(view)?.into_raw_vec_and_offset().0)
    }

    /// Row `i` of the result is the input gradient at row `i` of `x`.
    pub fn input_gradients(&self, x: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        self.require_scalar()?;
        self.check_input(&x)?;
        let tape = self.forward_tape(x);
        let (_, dx) = self.backward(&tape, Array2::ones((x.nrows(), 1)));
        Ok(dx)
    }

    /// Initializes from `spec` and fits by mean squared error, restarting
    /// from a fresh seed when the fit stalls (point, bound and correction
    /// roles only).
    ///
    /// A fit has stalled when its final loss exceeds [`STALL_RATIO`] times
    /// the loss of predicting the target mean everywhere: saturated tanh
    /// units at a high learning rate can pin the output near a constant for
    /// the whole run. Attempt `a` uses seed `spec.seed + a * RESTART_SEED_STRIDE`
    /// for both initialization and shuffling; the lowest-loss attempt wins.
    pub fn fit_mse(spec: NetSpec, role: Role, normalizer: Normalizer, data: &Dataset, cfg: &TrainConfig) -> Result<Self> {
        let t = data.targets();
        let mean = t.mean().unwrap_or(0.0);
        let constant_loss = t.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / t.len().max(1) as f64;
        let restarts = if role.restarts_on_stall() { cfg.restarts } else { 0 };
        let mut best: Option<ModelBundle> = None;
        for attempt in 0..=restarts as u64 {
            let offset = attempt.wrapping_mul(RESTART_SEED_STRIDE);
            let spec = NetSpec {
                seed: spec.seed.wrapping_add(offset),
                ..spec.clone()
            };
            let cfg = TrainConfig {
                seed: cfg.seed.wrapping_add(offset),
                ..cfg.clone()
            };
            let fit = ModelBundle::init(spec, role, normalizer.clone())?.train_mse(data, &cfg)?;
            let loss = fit.meta.as_ref().map_or(f64::INFINITY, |m| m.final_loss);
            if best.as_ref().is_none_or(|b| loss < b.meta.as_ref().map_or(f64::INFINITY, |m| m.final_loss)) {
                best = Some(fit);
            }
            if !(loss > STALL_RATIO * constant_loss) {
                break;
            }
        }
        Ok(best.expect("at least one attempt"))
    }

    /// Fits the first output to `data.targets()` by mean squared error.
    pub fn train_mse(&self, data: &Dataset, cfg: &TrainConfig) -> Result<ModelBundle> {
        if self.output_dim() != 1 {
            return Err(Error::arg("train_mse on a dataset needs a scalar-output model"));
        }
        let targets = data.targets().view().insert_axis(Axis(1)).to_owned();
        self.train_mse_multi(data.features().view(), targets.view(), cfg)
    }

    /// Mean squared error over every output channel.
    pub fn train_mse_multi(
        &self,
        x: ArrayView2<'_, f64>,
        targets: ArrayView2<'_, f64>,
        cfg: &TrainConfig,
    ) -> Result<ModelBundle> {
        if targets.dim() != (x.nrows(), self.output_dim()) {
            return Err(Error::DimensionMismatch {
                expected: x.nrows() * self.output_dim(),
                actual: targets.len(),
            });
        }
        self.train_with(x, cfg, |out, rows| mse_loss(out, &targets.select(Axis(0), rows)))
    }

    /// Adam on an arbitrary batch loss. `loss(outputs, rows)` receives the
    /// network outputs for the rows of `x` listed in `rows` and returns the
    /// loss value with its gradient with respect to those outputs.
    pub fn train_with<F>(&self, x: ArrayView2<'_, f64>, cfg: &TrainConfig, mut loss: F) -> Result<ModelBundle>
    where
        F: FnMut(&Array2<f64>, &[usize]) -> (f64, Array2<f64>),
    {
        cfg.validate()?;
        self.check_input(&x)?;
        let n = x.nrows();
        if n == 0 {
            return Err(Error::arg("cannot train on an empty set"));
        }
        let mut model = self.clone();
        let all: Vec<usize> = (0..n).collect();
        let initial_loss = loss(&model.forward_tape(x).acts.pop().expect("tape"), &all).0;
        let mut adam = Adam::new(&model, cfg);
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut order = all.clone();
        let batch = match cfg.batch_size {
            BatchSize::Full => n,
            BatchSize::Size(b) => b.min(n),
        };
        let mut trace = Vec::with_capacity(cfg.epochs);
        let track_best = cfg.keep_best && batch == n;
        let mut best: Option<(f64, ModelBundle)> = None;
        for epoch in 0..cfg.epochs {
            if batch < n {
                order.shuffle(&mut rng);
            }
            let mut sum = 0.0;
            let mut count = 0;
            for rows in order.chunks(batch) {
                let tape = if batch == n {
                    model.forward_tape(x)
                } else {
                    model.forward_tape(x.select(Axis(0), rows).view())
                };
                let out = tape.acts.last().expect("tape");
                let (value, grad) = loss(out, rows);
                if !value.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                    return Err(Error::Diverged {
                        epoch,
                        learning_rate: cfg.learning_rate,
                        loss: value,
                    });
                }
                if track_best && best.as_ref().is_none_or(|b| value < b.0) {
                    best = Some((value, model.clone()));
                }
                let (grads, _) = model.backward(&tape, grad);
                adam.step(&mut model, &grads);
                sum += value;
                count += 1;
            }
            trace.push(sum / count as f64);
        }
        let mut final_loss = loss(&model.forward_tape(x).acts.pop().expect("tape"), &all).0;
        if let Some((value, m)) = best {
            if !(final_loss <= value) {
                model = m;
                final_loss = value;
            }
        }
        if !final_loss.is_finite() || model.layers.iter().any(|l| l.weights.iter().any(|w| !w.is_finite())) {
            return Err(Error::Diverged {
                epoch: cfg.epochs,
                learning_rate: cfg.learning_rate,
                loss: final_loss,
            });
        }
        model.meta = Some(TrainingMeta {
            epochs: cfg.epochs,
            learning_rate: cfg.learning_rate,
            seed: cfg.seed,
            initial_loss,
            final_loss,
            loss_trace: trace,
        });
        Ok(model)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text)
    }

    /// Serializes to the versioned text format. Floats use Rust's shortest
    /// round-trip decimal representation, so loading reproduces every
    /// parameter bit for bit.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let join = |v: &mut dyn Iterator<Item = f64>| {
            v.map(|x| format!("{x:?}")).collect::<Vec<_>>().join(" ")
        };
        let _ = writeln!(s, "{MODEL_HEADER}");
        let _ = writeln!(s, "role = {}", self.role.as_str());
        let _ = writeln!(
            s,
            "quantile = {}",
            self.quantile.map_or("none".to_string(), |q| format!("{q:?}"))
        );
        let _ = writeln!(s, "input_dim = {}", self.spec.input_dim);
        let hidden: Vec<String> = self.spec.hidden_layers.iter().map(usize::to_string).collect();
        let _ = writeln!(s, "hidden_layers = {}", hidden.join(" "));
        let _ = writeln!(s, "output_dim = {}", self.spec.output_dim);
        let _ = writeln!(s, "activation = {}", self.spec.activation.name());
        let _ = writeln!(s, "seed = {}", self.spec.seed);
        let nz = &self.normalizer;
        let _ = writeln!(s, "normalizer.input_min = {}", join(&mut nz.input_min.iter().copied()));
        let _ = writeln!(s, "normalizer.input_max = {}", join(&mut nz.input_max.iter().copied()));
        let _ = writeln!(s, "normalizer.target_min = {:?}", nz.target_min);
        let _ = writeln!(s, "normalizer.target_max = {:?}", nz.target_max);
        match &self.meta {
            None => {
                let _ = writeln!(s, "train = none");
            }
            Some(m) => {
                let _ = writeln!(s, "train.epochs = {}", m.epochs);
                let _ = writeln!(s, "train.learning_rate = {:?}", m.learning_rate);
                let _ = writeln!(s, "train.seed = {}", m.seed);
                let _ = writeln!(s, "train.initial_loss = {:?}", m.initial_loss);
                let _ = writeln!(s, "train.final_loss = {:?}", m.final_loss);
                let _ = writeln!(s, "train.loss_trace = {}", join(&mut m.loss_trace.iter().copied()));
            }
        }
        for (l, layer) in self.layers.iter().enumerate() {
            let (rows, cols) = layer.weights.dim();
            let _ = writeln!(s, "layer {l} weights {rows} {cols}");
            for row in layer.weights.rows() {
                let _ = writeln!(s, "{}", join(&mut row.iter().copied()));
            }
            let _ = writeln!(s, "layer {l} bias {}", layer.bias.len());
            let _ = writeln!(s, "{}", join(&mut layer.bias.iter().copied()));
        }
        let _ = writeln!(s, "end");
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        ModelParser::new(text).parse()
    }
}

fn mse_loss(out: &Array2<f64>, targets: &Array2<f64>) -> (f64, Array2<f64>) {
    let diff = out - targets;
    let n = diff.len() as f64;
    let value = diff.iter().map(|d| d * d).sum::<f64>() / n;
    (value, diff * (2.0 / n))
}

/// Mean squared error of the first output against `data.targets()`.
pub fn mse(model: &ModelBundle, data: &Dataset) -> Result<f64> {
    let pred = model.forward_batch(data.features().view())?;
    let n = data.len() as f64;
    Ok(pred
        .column(0)
        .iter()
        .zip(data.targets())
        .map(|(p, t)| (p - t).powi(2))
        .sum::<f64>()
        / n)
}

struct Adam {
    beta1: f64,
    beta2: f64,
    eps: f64,
    lr: f64,
    step: i32,
    m: Vec<(Array2<f64>, Array1<f64>)>,
    v: Vec<(Array2<f64>, Array1<f64>)>,
}

impl Adam {
    fn new(model: &ModelBundle, cfg: &TrainConfig) -> Self {
        let zeros: Vec<_> = model
            .layers
            .iter()
            .map(|l| (Array2::zeros(l.weights.dim()), Array1::zeros(l.bias.len())))
            .collect();
        Self {
            beta1: cfg.adam_beta1,
            beta2: cfg.adam_beta2,
            eps: cfg.adam_epsilon,
            lr: cfg.learning_rate,
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    fn step(&mut self, model: &mut ModelBundle, grads: &[(Array2<f64>, Array1<f64>)]) {
        self.step += 1;
        let (b1, b2, eps) = (self.beta1, self.beta2, self.eps);
        let c1 = 1.0 - b1.powi(self.step);
        let c2 = 1.0 - b2.powi(self.step);
        let lr = self.lr;
        let update = |p: &mut f64, g: f64, m: &mut f64, v: &mut f64| {
            *m = b1 * *m + (1.0 - b1) * g;
            *v = b2 * *v + (1.0 - b2) * g * g;
            *p -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
        };
        for (((layer, (gw, gb)), (mw, mb)), (vw, vb)) in model
            .layers
            .iter_mut()
            .zip(grads)
            .zip(self.m.iter_mut())
            .zip(self.v.iter_mut())
        {
            ndarray::Zip::from(&mut layer.weights)
                .and(gw)
                .and(mw)
                .and(vw)
                .for_each(|p, &g, m, v| update(p, g, m, v));
            ndarray::Zip::from(&mut layer.bias)
                .and(gb)
                .and(mb)
                .and(vb)
                .for_each(|p, &g, m, v| update(p, g, m, v));
        }
    }
}

struct ModelParser<'a> {
    lines: std::iter::Peekable<std::str::Lines<'a>>,
}

fn corrupt(msg: impl Into<String>) -> Error {
    Error::ModelFormat(msg.into())
}

impl<'a> ModelParser<'a> {
    fn new(text: &'a str) -> Self {
        Self {
            lines: text.lines().peekable(),
        }
    }

    fn next_line(&mut self) -> Result<&'a str> {
        self.lines
            .next()
            .map(str::trim_end)
            .ok_or_else(|| corrupt("unexpected end of file"))
    }

    fn key(&mut self, key: &str) -> Result<&'a str> {
        let line = self.next_line()?;
        line.strip_prefix(key)
            .and_then(|rest| rest.trim_start().strip_prefix('='))
            .map(str::trim)
            .ok_or_else(|| corrupt(format!("expected `{key} = ...`, found `{line}`")))
    }

    fn parse_num<T: FromStr>(s: &str) -> Result<T> {
        s.parse().map_err(|_| corrupt(format!("bad number `{s}`")))
    }

    fn floats(s: &str) -> Result<Vec<f64>> {
        s.split_whitespace().map(Self::parse_num).collect()
    }

    fn parse(mut self) -> Result<ModelBundle> {
        let header = self.next_line().map_err(|_| corrupt("empty file"))?;
        if header != MODEL_HEADER {
            if header.starts_with("UQSS-MODEL") {
                return Err(corrupt(format!("unsupported version `{header}`")));
            }
            return Err(corrupt("missing UQSS-MODEL header"));
        }
        let role: Role = self.key("role")?.parse()?;
        let quantile = match self.key("quantile")? {
            "none" => None,
            q => Some(Self::parse_num(q)?),
        };
        let input_dim = Self::parse_num(self.key("input_dim")?)?;
        let hidden_layers = self
            .key("hidden_layers")?
            .split_whitespace()
            .map(Self::parse_num)
            .collect::<Result<Vec<usize>>>()?;
        let output_dim = Self::parse_num(self.key("output_dim")?)?;
        let activation = self.key("activation")?.parse()?;
        let seed = Self::parse_num(self.key("seed")?)?;
        let spec = NetSpec {
            input_dim,
            hidden_layers,
            output_dim,
            activation,
            seed,
        };
        spec.validate().map_err(|e| corrupt(e.to_string()))?;
        let normalizer = Normalizer {
            input_min: Self::floats(self.key("normalizer.input_min")?)?,
            input_max: Self::floats(self.key("normalizer.input_max")?)?,
            target_min: Self::parse_num(self.key("normalizer.target_min")?)?,
            target_max: Self::parse_num(self.key("normalizer.target_max")?)?,
        };
        if normalizer.input_min.len() != input_dim || normalizer.input_max.len() != input_dim {
            return Err(corrupt("normalizer width does not match input_dim"));
        }
        let meta = if self.lines.peek().map(|l| l.trim_end()) == Some("train = none") {
            self.next_line()?;
            None
        } else {
            Some(TrainingMeta {
                epochs: Self::parse_num(self.key("train.epochs")?)?,
                learning_rate: Self::parse_num(self.key("train.learning_rate")?)?,
                seed: Self::parse_num(self.key("train.seed")?)?,
                initial_loss: Self::parse_num(self.key("train.initial_loss")?)?,
                final_loss: Self::parse_num(self.key("train.final_loss")?)?,
                loss_trace: Self::floats(self.key("train.loss_trace")?)?,
            })
        };
        let mut layers = Vec::new();
        for (l, (rows, cols)) in spec.layer_dims().into_iter().enumerate() {
            let expect = format!("layer {l} weights {rows} {cols}");
            if self.next_line()? != expect {
                return Err(corrupt(format!("expected `{expect}`")));
            }
            let mut w = Vec::with_capacity(rows * cols);
            for _ in 0..rows {
                let row = Self::floats(self.next_line()?)?;
                if row.len() != cols {
                    return Err(corrupt(format!("layer {l}: weight row has {} values", row.len())));
                }
                w.extend(row);
            }
            let expect = format!("layer {l} bias {rows}");
            if self.next_line()? != expect {
                return Err(corrupt(format!("expected `{expect}`")));
            }
            let bias = Self::floats(self.next_line()?)?;
            if bias.len() != rows {
                return Err(corrupt(format!("layer {l}: bias has {} values", bias.len())));
            }
            layers.push(Layer {
                weights: Array2::from_shape_vec((rows, cols), w).expect("sized above"),
                bias: Array1::from(bias),
            });
        }
        if self.next_line()? != "end" {
            return Err(corrupt("missing end marker"));
        }
        if layers
            .iter()
            .any(|l| l.weights.iter().chain(l.bias.iter()).any(|v| !v.is_finite()))
        {
            return Err(corrupt("non-finite parameter"));
        }
        Ok(ModelBundle {
            role,
            quantile,
            spec,
            layers,
            normalizer,
            meta,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;

    fn net(input: usize, hidden: Vec<usize>, seed: u64) -> ModelBundle {
        ModelBundle::init(
            NetSpec::new(input, hidden, 1, seed),
            Role::Point,
            Normalizer::identity(input),
        )
        .unwrap()
    }

    /// Replaces every parameter with zero except the given output bias.
    fn zeroed(mut m: ModelBundle, out_bias: f64) -> ModelBundle {
        for l in &mut m.layers {
            l.weights.fill(0.0);
            l.bias.fill(0.0);
        }
        m.layers.last_mut().unwrap().bias.fill(out_bias);
        m
    }

    #[test]
    fn init_is_seeded_with_zero_biases() {
        let a = net(3, vec![8, 8], 4);
        assert_eq!(a, net(3, vec![8, 8], 4));
        assert_ne!(a, net(3, vec![8, 8], 5));
        for (l, layer) in a.layers.iter().enumerate() {
            assert!(layer.bias.iter().all(|&b| b == 0.0));
            let fan_in = if l == 0 { 3.0 } else { 8.0 };
            let bound = (6.0f64 / fan_in).sqrt();
            assert!(layer.weights.iter().all(|w| w.abs() <= bound));
        }
    }

    #[test]
    fn invalid_spec() {
        let spec = NetSpec::new(2, vec![], 1, 0);
        assert!(ModelBundle::init(spec, Role::Point, Normalizer::identity(2)).is_err());
        let spec = NetSpec::new(0, vec![4], 1, 0);
        assert!(spec.validate().is_err());
    }

    #[test]
    fn zero_weights_output_bias() {
        let m = zeroed(net(2, vec![4], 0), 0.7);
        assert_eq!(m.forward(&[0.3, -2.0]).unwrap(), vec![0.7]);
        assert_eq!(m.input_gradient(&[0.3, -2.0]).unwrap(), vec![0.0, 0.0]);
    }

    /// Identity activation collapses the net to `W2 (W1 x + b1) + b2`.
    fn linear_net() -> ModelBundle {
        let mut spec = NetSpec::new(2, vec![2], 1, 0);
        spec.activation = Activation::Identity;
        let mut m = ModelBundle::init(spec, Role::Point, Normalizer::identity(2)).unwrap();
        m.layers[0].weights = array![[1.0, 0.0], [0.0, 1.0]];
        m.layers[0].bias = array![0.5, -0.5];
        m.layers[1].weights = array![[2.0, -3.0]];
        m.layers[1].bias = array![0.25];
        m
    }

    #[test]
    fn linear_forward_and_gradient() {
        let m = linear_net();
        // 2 * (0.1 + 0.5) - 3 * (0.2 - 0.5) + 0.25
        assert_abs_diff_eq!(m.forward(&[0.1, 0.2]).unwrap()[0], 2.35, epsilon = 1e-12);
        assert_eq!(m.input_gradient(&[0.1, 0.2]).unwrap(), vec![2.0, -3.0]);
    }

    #[test]
    fn batch_forward_matches_rows() {
        let m = net(3, vec![5, 4], 9);
        let x = array![[0.1, 0.2, 0.3], [0.9, -0.4, 0.0], [1.0, 1.0, 1.0]];
        let batch = m.forward_batch(x.view()).unwrap();
        for (i, row) in x.rows().into_iter().enumerate() {
            assert_eq!(batch[[i, 0]], m.forward(row.as_slice().unwrap()).unwrap()[0]);
        }
    }

    #[test]
    fn forward_rejects_bad_input() {
        let m = net(2, vec![3], 0);
        assert!(matches!(m.forward(&[1.0]), Err(Error::DimensionMismatch { .. })));
        assert!(matches!(m.forward(&[1.0, f64::NAN]), Err(Error::NonFinite)));
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let m = net(3, vec![16, 16], 21);
        let x = [0.3, -0.7, 0.5];
        let g = m.input_gradient(&x).unwrap();
        let h = 1e-5;
        for k in 0..3 {
            let mut hi = x;
            let mut lo = x;
            hi[k] += h;
            lo[k] -= h;
            let fd = (m.forward(&hi).unwrap()[0] - m.forward(&lo).unwrap()[0]) / (2.0 * h);
            assert!((g[k] - fd).abs() / fd.abs().max(1e-8) <= 1e-4, "k={k} {} vs {fd}", g[k]);
        }
    }

    #[test]
    fn multi_output_gradient_rejected() {
        let spec = NetSpec::new(2, vec![3], 2, 0);
        let m = ModelBundle::init(spec, Role::Interval, Normalizer::identity(2)).unwrap();
        assert!(m.input_gradient(&[0.0, 0.0]).is_err());
    }

    fn identity_data(n: usize) -> Dataset {
        let x = Array2::from_shape_fn((n, 1), |(i, _)| i as f64 / (n - 1) as f64);
        let t = x.column(0).to_owned();
        Dataset::from_arrays(x, t).unwrap()
    }

    #[test]
    fn zero_epochs_leaves_parameters() {
        let m = net(1, vec![4], 1);
        let cfg = TrainConfig {
            epochs: 0,
            ..TrainConfig::default()
        };
        let trained = m.train_mse(&identity_data(10), &cfg).unwrap();
        assert_eq!(trained.layers, m.layers);
        assert!(trained.meta.unwrap().loss_trace.is_empty());
    }

    #[test]
    fn fits_identity() {
        let m = net(1, vec![32, 32], 3);
        let data = identity_data(100);
        let trained = m.train_mse(&data, &TrainConfig::default()).unwrap();
        let err = mse(&trained, &data).unwrap();
        assert!(err < 1e-3, "mse {err}");
        let meta = trained.meta.unwrap();
        assert!(meta.final_loss <= meta.initial_loss);
        assert_eq!(meta.loss_trace.len(), 600);
    }

    #[test]
    fn kept_iterate_is_the_lowest_loss_seen() {
        let m = net(1, vec![16, 16], 5);
        let data = identity_data(50);
        let last = m.train_mse(&data, &TrainConfig { keep_best: false, ..TrainConfig::default() }).unwrap();
        let best = m.train_mse(&data, &TrainConfig::default()).unwrap();
        let (last, best) = (last.meta.unwrap(), best.meta.unwrap());
        assert_eq!(last.loss_trace, best.loss_trace);
        let lowest = best.loss_trace.iter().cloned().fold(f64::INFINITY, f64::min);
        assert!(best.final_loss <= lowest.min(last.final_loss));
    }

    #[test]
    fn stalled_fits_restart_from_derived_seeds() {
        // zero epochs: every attempt is just its initialization, and none
        // comes near the identity, so all three attempts run
        let data = identity_data(20);
        let cfg = TrainConfig { epochs: 0, ..TrainConfig::default() };
        let spec = NetSpec::new(1, vec![4], 1, 11);
        let fit = ModelBundle::fit_mse(spec.clone(), Role::Point, Normalizer::identity(1), &data, &cfg).unwrap();
        let losses: Vec<f64> = (0..3u64)
            .map(|a| {
                let s = NetSpec { seed: 11 + a * RESTART_SEED_STRIDE, ..spec.clone() };
                mse(&ModelBundle::init(s, Role::Point, Normalizer::identity(1)).unwrap(), &data).unwrap()
            })
            .collect();
        let want = (0..3).min_by(|&a, &b| losses[a].total_cmp(&losses[b])).unwrap() as u64;
        assert_eq!(fit.spec.seed, 11 + want * RESTART_SEED_STRIDE);

        let density = ModelBundle::fit_mse(spec, Role::Density, Normalizer::identity(1), &data, &cfg).unwrap();
        assert_eq!(density.spec.seed, 11);
    }

    #[test]
    fn divergence_reported() {
        let m = net(1, vec![4], 1);
        let cfg = TrainConfig {
            epochs: 3,
            ..TrainConfig::default()
        };
        let err = m
            .train_with(identity_data(5).features().view(), &cfg, |out, _| {
                (f64::NAN, Array2::zeros(out.dim()))
            })
            .unwrap_err();
        assert!(matches!(err, Error::Diverged { epoch: 0, .. }));
        assert!(err.to_string().contains("learning rate 0.05"));
    }

    #[test]
    fn minibatch_training_is_deterministic() {
        let cfg = TrainConfig {
            epochs: 20,
            batch_size: BatchSize::Size(16),
            seed: 5,
            ..TrainConfig::default()
        };
        let data = identity_data(50);
        let a = net(1, vec![8], 2).train_mse(&data, &cfg).unwrap();
        let b = net(1, vec![8], 2).train_mse(&data, &cfg).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn text_round_trip_is_exact() {
        let cfg = TrainConfig {
            epochs: 5,
            ..TrainConfig::default()
        };
        let m = net(1, vec![6, 3], 8)
            .train_mse(&identity_data(20), &cfg)
            .unwrap()
            .with_quantile(0.05);
        let back = ModelBundle::from_text(&m.to_text()).unwrap();
        assert_eq!(back, m);
        let untrained = net(2, vec![3], 1);
        assert_eq!(ModelBundle::from_text(&untrained.to_text()).unwrap(), untrained);
    }

    #[test]
    fn truncated_or_foreign_text_rejected() {
        let text = net(2, vec![3], 1).to_text();
        for cut in [0, 10, text.len() / 2, text.len() - 4] {
            assert!(ModelBundle::from_text(&text[..cut]).is_err(), "cut {cut}");
        }
        let v2 = text.replacen("v1", "v2", 1);
        let err = ModelBundle::from_text(&v2).unwrap_err();
        assert!(err.to_string().contains("unsupported version"));
        assert!(ModelBundle::from_text("hello").is_err());
    }

    #[test]
    fn role_tags_round_trip() {
        for role in ["point", "abs_error", "density", "bound_correction", "ub", "interval"] {
            assert_eq!(role.parse::<Role>().unwrap().as_str(), role);
        }
    }

    #[test]
    fn clamped_roles() {
        let mut m = zeroed(net(1, vec![2], 0), -0.3);
        assert_eq!(m.predict(&[0.5]).unwrap(), -0.3);
        m.role = Role::AbsError;
        assert_eq!(m.predict(&[0.5]).unwrap(), 0.0);
    }
}
