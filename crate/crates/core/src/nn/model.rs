use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::init::glorot_uniform_init;
use super::layers::{
    conv2d_param_count, dense_param_count, Activation, Conv2DLayer, DenseLayer, DropoutLayer,
    Layer, MaxPool2DLayer,
};
use super::loss::{bce_logit_gradient, binary_cross_entropy, check_labels};
use crate::error::{Error, Result};
use crate::rng::derive_seed;
use crate::tensor::{Scalar, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    #[value(name = "two_block")]
    TwoBlock,
    #[value(name = "three_block")]
    ThreeBlock,
}

impl Variant {
    pub fn as_str(self) -> &'static str {
        match self {
            Variant::TwoBlock => "two_block",
            Variant::ThreeBlock => "three_block",
        }
    }

    pub fn blocks(self) -> usize {
        match self {
            Variant::TwoBlock => 2,
            Variant::ThreeBlock => 3,
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "two_block" => Ok(Variant::TwoBlock),
            "three_block" => Ok(Variant::ThreeBlock),
            other => Err(Error::config(
                "variant",
                format!("unknown variant {other:?} (expected two_block or three_block)"),
            )),
        }
    }
}

/// Architecture hyperparameters. Each conv block is
/// `Conv2D(k x k, same, relu) -> MaxPool -> Dropout`, followed by
/// `Flatten -> Dense(relu) -> Dropout -> Dense(1, sigmoid)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub input_height: usize,
    pub input_width: usize,
    pub input_channels: usize,
    pub conv_channels: Vec<usize>,
    pub kernel_size: usize,
    pub pool_size: usize,
    pub pool_stride: usize,
    pub dense_units: usize,
    pub conv_dropout: f64,
    pub dense_dropout: f64,
}

impl ModelConfig {
    pub const DEFAULT_INPUT: usize = 200;
    pub const DEFAULT_BASE_CHANNELS: usize = 64;

    pub fn for_variant(variant: Variant) -> Self {
        let conv_channels = (0..variant.blocks())
            .map(|i| Self::DEFAULT_BASE_CHANNELS << i)
            .collect();
        Self {
            input_height: Self::DEFAULT_INPUT,
            input_width: Self::DEFAULT_INPUT,
            input_channels: 3,
            conv_channels,
            kernel_size: 6,
            pool_size: 2,
            pool_stride: 2,
            dense_units: 512,
            conv_dropout: 0.25,
            dense_dropout: 0.5,
        }
    }

    pub fn with_input_size(mut self, size: usize) -> Self {
        self.input_height = size;
        self.input_width = size;
        self
    }

    /// Channel widths `base, 2*base, 4*base, ...` for the same block count.
    pub fn with_base_channels(mut self, base: usize) -> Self {
        let blocks = self.conv_channels.len();
        self.conv_channels = (0..blocks).map(|i| base << i).collect();
        self
    }

    pub fn with_dense_units(mut self, units: usize) -> Self {
        self.dense_units = units;
        self
    }

    pub fn with_dropout(mut self, conv: f64, dense: f64) -> Self {
        self.conv_dropout = conv;
        self.dense_dropout = dense;
        self
    }

    pub fn input_shape(&self) -> [usize; 3] {
        [self.input_height, self.input_width, self.input_channels]
    }

    fn plan(&self) -> Result<Vec<PlannedLayer>> {
        if self.conv_channels.is_empty() {
            return Err(Error::config(
                "conv_channels",
                "at least one conv block is required",
            ));
        }
        let positive = [
            ("input_height", self.input_height),
            ("input_width", self.input_width),
            ("input_channels", self.input_channels),
            ("kernel_size", self.kernel_size),
            ("pool_size", self.pool_size),
            ("pool_stride", self.pool_stride),
            ("dense_units", self.dense_units),
        ];
        for (field, value) in positive {
            if value == 0 {
                return Err(Error::config(field, "must be positive"));
            }
        }
        let mut names = Namer::default();
        let mut plan = Vec::new();
        let mut shape = self.input_shape().to_vec();
        let mut in_ch = self.input_channels;
        for &out_ch in &self.conv_channels {
            if out_ch == 0 {
                return Err(Error::config(
                    "conv_channels",
                    "channel widths must be positive",
                ));
            }
            shape = vec![shape[0], shape[1], out_ch];
            plan.push(PlannedLayer {
                name: names.next("conv2d"),
                kind: PlanKind::Conv { in_ch, out_ch },
                output_shape: shape.clone(),
            });
            shape = MaxPool2DLayer::new(self.pool_size, self.pool_stride).output_shape(&shape)?;
            plan.push(PlannedLayer {
                name: names.next("max_pooling2d"),
                kind: PlanKind::Pool,
                output_shape: shape.clone(),
            });
            plan.push(PlannedLayer {
                name: names.next("dropout"),
                kind: PlanKind::Dropout(self.conv_dropout),
                output_shape: shape.clone(),
            });
            in_ch = out_ch;
        }
        let flat = shape.iter().product();
        plan.push(PlannedLayer {
            name: names.next("flatten"),
            kind: PlanKind::Flatten,
            output_shape: vec![flat],
        });
        plan.push(PlannedLayer {
            name: names.next("dense"),
            kind: PlanKind::Dense {
                fan_in: flat,
                fan_out: self.dense_units,
                activation: Activation::Relu,
            },
            output_shape: vec![self.dense_units],
        });
        plan.push(PlannedLayer {
            name: names.next("dropout"),
            kind: PlanKind::Dropout(self.dense_dropout),
            output_shape: vec![self.dense_units],
        });
        plan.push(PlannedLayer {
            name: names.next("dense"),
            kind: PlanKind::Dense {
                fan_in: self.dense_units,
                fan_out: 1,
                activation: Activation::Sigmoid,
            },
            output_shape: vec![1],
        });
        Ok(plan)
    }

    /// Layer table computed from the configuration alone (no weights are
    /// allocated).
    pub fn summary(&self) -> Result<Vec<LayerSummary>> {
        Ok(self
            .plan()?
            .into_iter()
            .map(|p| LayerSummary {
                params: p.kind.param_count(self.kernel_size),
                kind: p.kind.label(),
                name: p.name,
                output_shape: p.output_shape,
            })
            .collect())
    }

    pub fn parameter_count(&self) -> Result<usize> {
        Ok(self.summary()?.iter().map(|l| l.params).sum())
    }

    pub fn flatten_size(&self) -> Result<usize> {
        self.summary()?
            .iter()
            .find(|l| l.kind == "Flatten")
            .map(|l| l.output_shape[0])
            .ok_or_else(|| Error::domain("model has no flatten layer"))
    }
}

#[derive(Default)]
struct Namer {
    counts: std::collections::HashMap<&'static str, usize>,
}

impl Namer {
    fn next(&mut self, base: &'static str) -> String {
        let n = self.counts.entry(base).or_insert(0);
        let name = if *n == 0 {
            base.to_string()
        } else {
            format!("{base}_{n}")
        };
        *n += 1;
        name
    }
}

struct PlannedLayer {
    name: String,
    kind: PlanKind,
    output_shape: Vec<usize>,
}

enum PlanKind {
    Conv {
        in_ch: usize,
        out_ch: usize,
    },
    Pool,
    Dropout(f64),
    Flatten,
    Dense {
        fan_in: usize,
        fan_out: usize,
        activation: Activation,
    },
}

impl PlanKind {
    fn label(&self) -> &'static str {
        match self {
            PlanKind::Conv { .. } => "Conv2D",
            PlanKind::Pool => "MaxPooling2D",
            PlanKind::Dropout(_) => "Dropout",
            PlanKind::Flatten => "Flatten",
            PlanKind::Dense { .. } => "Dense",
        }
    }

    fn param_count(&self, kernel: usize) -> usize {
        match *self {
            PlanKind::Conv { in_ch, out_ch } => conv2d_param_count(out_ch, in_ch, kernel, kernel),
            PlanKind::Dense {
                fan_in, fan_out, ..
            } => dense_param_count(fan_in, fan_out),
            _ => 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerSummary {
    pub name: String,
    pub kind: &'static str,
    /// Per-sample output shape (batch axis omitted).
    pub output_shape: Vec<usize>,
    pub params: usize,
}

impl LayerSummary {
    /// `(None, 200, 200, 64)`
    pub fn shape_label(&self) -> String {
        let dims: Vec<String> = self.output_shape.iter().map(|d| d.to_string()).collect();
        format!("(None, {})", dims.join(", "))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NamedLayer<T: Scalar = f32> {
    pub name: String,
    pub layer: Layer<T>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Inference,
    /// Dropout active; `step` selects the dropout mask stream.
    Training {
        step: u64,
    },
}

enum Aux<T: Scalar> {
    None,
    Argmax(Vec<usize>),
    Mask(Option<Vec<T>>),
}

/// Forward activations kept for backpropagation. `activations[0]` is the
/// input batch, `activations[i + 1]` the output of layer `i`.
pub struct Trace<T: Scalar> {
    pub activations: Vec<Tensor<T>>,
    aux: Vec<Aux<T>>,
}

pub struct Backward<T: Scalar> {
    pub loss: f64,
    pub probabilities: Vec<T>,
    /// One tensor per parameter, in [`Model::parameters`] order.
    pub gradients: Vec<Tensor<T>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model<T: Scalar = f32> {
    config: ModelConfig,
    layers: Vec<NamedLayer<T>>,
}

impl<T: Scalar> Model<T> {
    /// Glorot-uniform weights from `init_seed`, zero biases, dropout masks
    /// seeded from `dropout_seed`.
    pub fn build(config: &ModelConfig, init_seed: u64, dropout_seed: u64) -> Result<Self> {
        Self::assemble(config, Some(init_seed), dropout_seed)
    }

    /// All parameters zero.
    pub fn zeros(config: &ModelConfig) -> Result<Self> {
        Self::assemble(config, None, 0)
    }

    fn assemble(config: &ModelConfig, init_seed: Option<u64>, dropout_seed: u64) -> Result<Self> {
        let k = config.kernel_size;
        let mut layers = Vec::new();
        for p in config.plan()? {
            let seed = init_seed.map(|s| derive_seed(s, &p.name));
            let layer = match p.kind {
                PlanKind::Conv { in_ch, out_ch } => {
                    let mut conv = Conv2DLayer::new(in_ch, out_ch, k, k, Activation::Relu)?;
                    if let Some(seed) = seed {
                        conv.weights = glorot_uniform_init(
                            &[k, k, in_ch, out_ch],
                            k * k * in_ch,
                            k * k * out_ch,
                            seed,
                        )?;
                    }
                    Layer::Conv2D(conv)
                }
                PlanKind::Pool => {
                    Layer::MaxPool2D(MaxPool2DLayer::new(config.pool_size, config.pool_stride))
                }
                PlanKind::Dropout(rate) => {
                    Layer::Dropout(DropoutLayer::new(rate, derive_seed(dropout_seed, &p.name))?)
                }
                PlanKind::Flatten => Layer::Flatten,
                PlanKind::Dense {
                    fan_in,
                    fan_out,
                    activation,
                } => {
                    let mut dense = DenseLayer::new(fan_in, fan_out, activation)?;
                    if let Some(seed) = seed {
                        dense.weights =
                            glorot_uniform_init(&[fan_in, fan_out], fan_in, fan_out, seed)?;
                    }
                    Layer::Dense(dense)
                }
            };
            layers.push(NamedLayer {
                name: p.name,
                layer,
            });
        }
        Ok(Self {
            config: config.clone(),
            layers,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn layers(&self) -> &[NamedLayer<T>] {
        &self.layers
    }

    pub fn parameter_count(&self) -> usize {
        self.layers.iter().map(|l| l.layer.param_count()).sum()
    }

    /// `(name, tensor)` pairs, kernels before biases, in layer order.
    pub fn parameters(&self) -> Vec<(String, &Tensor<T>)> {
        let mut out = Vec::new();
        for l in &self.layers {
            let (w, b) = match &l.layer {
                Layer::Conv2D(c) => (&c.weights, &c.bias),
                Layer::Dense(d) => (&d.weights, &d.bias),
                _ => continue,
            };
            out.push((format!("{}/kernel", l.name), w));
            out.push((format!("{}/bias", l.name), b));
        }
        out
    }

    pub fn parameters_mut(&mut self) -> Vec<&mut Tensor<T>> {
        let mut out = Vec::new();
        for l in &mut self.layers {
            let (w, b) = match &mut l.layer {
                Layer::Conv2D(c) => (&mut c.weights, &mut c.bias),
                Layer::Dense(d) => (&mut d.weights, &mut d.bias),
                _ => continue,
            };
            out.push(w);
            out.push(b);
        }
        out
    }

    pub fn cast<U: Scalar>(&self) -> Model<U> {
        Model {
            config: self.config.clone(),
            layers: self
                .layers
                .iter()
                .map(|l| NamedLayer {
                    name: l.name.clone(),
                    layer: l.layer.cast(),
                })
                .collect(),
        }
    }

    fn check_batch(&self, batch: &Tensor<T>) -> Result<()> {
        let expected = self.config.input_shape();
        if batch.rank() != 4 || batch.shape()[1..] != expected {
            return Err(Error::shape(format!(
                "model expects [B, {}, {}, {}], got {:?}",
                expected[0],
                expected[1],
                expected[2],
                batch.shape()
            )));
        }
        Ok(())
    }

    pub fn forward_trace(&self, batch: &Tensor<T>, mode: Mode) -> Result<Trace<T>> {
        self.check_batch(batch)?;
        let (training, step) = match mode {
            Mode::Inference => (false, 0),
            Mode::Training { step } => (true, step),
        };
        let mut activations = vec![batch.clone()];
        let mut aux = Vec::with_capacity(self.layers.len());
        for l in &self.layers {
            let x = activations.last().expect("input is always present");
            let (y, a) = match &l.layer {
                Layer::Conv2D(c) => (c.forward(x)?, Aux::None),
                Layer::MaxPool2D(p) => {
                    let (y, idx) = p.forward(x)?;
                    (y, Aux::Argmax(idx))
                }
                Layer::Dropout(d) => {
                    let (y, mask) = d.forward(x, training, step);
                    (y, Aux::Mask(mask))
                }
                Layer::Flatten => {
                    let b = x.shape()[0];
                    let rest = x.len() / b;
                    (x.clone().reshape(&[b, rest])?, Aux::None)
                }
                Layer::Dense(d) => (d.forward(x)?, Aux::None),
            };
            activations.push(y);
            aux.push(a);
        }
        Ok(Trace { activations, aux })
    }

    /// Sigmoid outputs, shape `[B, 1]`.
    pub fn forward(&self, batch: &Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        let mut trace = self.forward_trace(batch, mode)?;
        Ok(trace.activations.pop().expect("trace has an output"))
    }

    /// Mean log loss of a labelled batch, without gradients.
    pub fn loss(&self, batch: &Tensor<T>, labels: &[u8], mode: Mode) -> Result<f64> {
        let out = self.forward(batch, mode)?;
        binary_cross_entropy(out.data(), labels)
    }

    /// Loss and parameter gradients for a labelled batch.
    pub fn backward(&self, batch: &Tensor<T>, labels: &[u8], mode: Mode) -> Result<Backward<T>> {
        if labels.len() != batch.shape().first().copied().unwrap_or(0) {
            return Err(Error::shape(format!(
                "{} labels for batch {:?}",
                labels.len(),
                batch.shape()
            )));
        }
        check_labels(labels)?;
        let trace = self.forward_trace(batch, mode)?;
        let output = trace.activations.last().expect("trace has an output");
        let probabilities = output.data().to_vec();
        let loss = binary_cross_entropy(&probabilities, labels)?;

        // The output layer is Dense(1, sigmoid); start from d(loss)/d(logit).
        let mut grad =
            Tensor::from_vec(output.shape(), bce_logit_gradient(&probabilities, labels))?;
        let mut grad_is_pre = true;
        let mut per_layer: Vec<Option<(Tensor<T>, Tensor<T>)>> = vec![None; self.layers.len()];
        for (i, l) in self.layers.iter().enumerate().rev() {
            let input = &trace.activations[i];
            let out = &trace.activations[i + 1];
            let need_input = i > 0;
            grad = match (&l.layer, &trace.aux[i]) {
                (Layer::Conv2D(c), _) => {
                    let (gx, gw, gb) = c.backward(input, out, &grad, grad_is_pre, need_input)?;
                    per_layer[i] = Some((gw, gb));
                    match gx {
                        Some(gx) => gx,
                        None => break,
                    }
                }
                (Layer::Dense(d), _) => {
                    let (gx, gw, gb) = d.backward(input, out, &grad, grad_is_pre, need_input)?;
                    per_layer[i] = Some((gw, gb));
                    match gx {
                        Some(gx) => gx,
                        None => break,
                    }
                }
                (Layer::MaxPool2D(p), Aux::Argmax(idx)) => p.backward(input.shape(), idx, &grad)?,
                (Layer::Dropout(_), Aux::Mask(mask)) => match mask {
                    None => grad,
                    Some(mask) => {
                        let mut g = grad;
                        for (v, &m) in g.data_mut().iter_mut().zip(mask) {
                            *v *= m;
                        }
                        g
                    }
                },
                (Layer::Flatten, _) => grad.reshape(input.shape())?,
                _ => unreachable!("trace aux matches layer kind"),
            };
            grad_is_pre = false;
        }
        let gradients = per_layer
            .into_iter()
            .flatten()
            .flat_map(|(w, b)| [w, b])
            .collect();
        Ok(Backward {
            loss,
            probabilities,
            gradients,
        })
    }

    /// Probability of class 1 for each `[H, W, C]` image.
    pub fn predict(&self, images: &[Tensor<T>]) -> Result<Vec<T>> {
        const CHUNK: usize = 32;
        let mut out = Vec::with_capacity(images.len());
        for chunk in images.chunks(CHUNK) {
            let refs: Vec<&Tensor<T>> = chunk.iter().collect();
            let batch = Tensor::stack(&refs)?;
            out.extend_from_slice(self.forward(&batch, Mode::Inference)?.data());
        }
        Ok(out)
    }
}

/// Hard labels at the 0.5 threshold.
pub fn hard_labels<T: Scalar>(probabilities: &[T]) -> Vec<u8> {
    let half = T::from_f64_lossy(0.5);
    probabilities.iter().map(|&p| u8::from(p >= half)).collect()
}
