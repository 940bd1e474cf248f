//! Layer math. Feature maps are NHWC; every layer accepts a batched input
//! (`[B, H, W, C]` or `[B, F]`) and the single-sample forms (`[H, W, C]`,
//! `[F]`) through the public `*_forward` helpers.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::seeded_stream;
use crate::tensor::{Scalar, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Linear,
    Relu,
    Sigmoid,
}

fn sigmoid_scalar<T: Scalar>(x: T) -> T {
    // Split on sign so exp never overflows.
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

impl Activation {
    fn apply<T: Scalar>(self, values: &mut [T]) {
        match self {
            Activation::Linear => {}
            Activation::Relu => values.iter_mut().for_each(|x| *x = x.max(T::zero())),
            Activation::Sigmoid => values.iter_mut().for_each(|x| *x = sigmoid_scalar(*x)),
        }
    }

    /// Turns a gradient w.r.t. the activated output into one w.r.t. the
    /// pre-activation, using only the activated output.
    fn backprop<T: Scalar>(self, output: &[T], grad: &mut [T]) {
        match self {
            Activation::Linear => {}
            Activation::Relu => {
                for (g, &y) in grad.iter_mut().zip(output) {
                    if y <= T::zero() {
                        *g = T::zero();
                    }
                }
            }
            Activation::Sigmoid => {
                for (g, &y) in grad.iter_mut().zip(output) {
                    *g *= y * (T::one() - y);
                }
            }
        }
    }
}

pub fn relu<T: Scalar>(input: &Tensor<T>) -> Tensor<T> {
    input.map(|x| x.max(T::zero()))
}

pub fn sigmoid<T: Scalar>(input: &Tensor<T>) -> Tensor<T> {
    input.map(sigmoid_scalar)
}

/// Parameter count of a convolution: one `kh x kw x in_ch` filter plus a
/// bias per output channel.
pub fn conv2d_param_count(out_ch: usize, in_ch: usize, kh: usize, kw: usize) -> usize {
    out_ch * (in_ch * kh * kw + 1)
}

pub fn dense_param_count(in_features: usize, out_features: usize) -> usize {
    in_features * out_features + out_features
}

/// Splits an input into `(batch, rest)` given the rank of a single sample.
fn batch_view(shape: &[usize], sample_rank: usize, what: &str) -> Result<(usize, bool)> {
    if shape.len() == sample_rank {
        Ok((1, false))
    } else if shape.len() == sample_rank + 1 {
        Ok((shape[0], true))
    } else {
        Err(Error::shape(format!(
            "{what} expects rank {sample_rank} or {} input, got {shape:?}",
            sample_rank + 1
        )))
    }
}

/// `(input gradient if requested, kernel gradient, bias gradient)`.
pub type ParamGrads<T> = (Option<Tensor<T>>, Tensor<T>, Tensor<T>);

/// Padding offsets `(before, out_len)` for "same" padding along one axis.
/// The odd pixel of an even kernel goes after.
fn same_padding(input: usize, kernel: usize, stride: usize) -> (usize, usize) {
    let out = input.div_ceil(stride);
    let total = ((out - 1) * stride + kernel).saturating_sub(input);
    (total / 2, out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Padding {
    Same,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Conv2DLayer<T: Scalar = f32> {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel_h: usize,
    pub kernel_w: usize,
    pub stride: usize,
    pub padding: Padding,
    pub activation: Activation,
    /// `[kernel_h, kernel_w, in_channels, out_channels]`
    pub weights: Tensor<T>,
    /// `[out_channels]`
    pub bias: Tensor<T>,
}

struct ConvGeometry {
    batch: usize,
    h: usize,
    w: usize,
    oh: usize,
    ow: usize,
    pad_top: usize,
    pad_left: usize,
}

impl<T: Scalar> Conv2DLayer<T> {
    /// Zero-initialized, stride 1, "same" padding.
    pub fn new(
        in_channels: usize,
        out_channels: usize,
        kernel_h: usize,
        kernel_w: usize,
        activation: Activation,
    ) -> Result<Self> {
        Ok(Self {
            in_channels,
            out_channels,
            kernel_h,
            kernel_w,
            stride: 1,
            padding: Padding::Same,
            activation,
            weights: Tensor::zeros(&[kernel_h, kernel_w, in_channels, out_channels])?,
            bias: Tensor::zeros(&[out_channels])?,
        })
    }

    pub fn param_count(&self) -> usize {
        conv2d_param_count(
            self.out_channels,
            self.in_channels,
            self.kernel_h,
            self.kernel_w,
        )
    }

    /// Output `[H', W', C']` for a single-sample input shape `[H, W, C]`.
    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        if input.len() != 3 || input[2] != self.in_channels {
            return Err(Error::shape(format!(
                "conv2d expects [H, W, {}], got {input:?}",
                self.in_channels
            )));
        }
        let (_, oh) = same_padding(input[0], self.kernel_h, self.stride);
        let (_, ow) = same_padding(input[1], self.kernel_w, self.stride);
        Ok(vec![oh, ow, self.out_channels])
    }

    fn geometry(&self, shape: &[usize]) -> Result<(ConvGeometry, bool)> {
        let (batch, batched) = batch_view(shape, 3, "conv2d")?;
        let sample = &shape[shape.len() - 3..];
        self.output_shape(sample)?;
        let (pad_top, oh) = same_padding(sample[0], self.kernel_h, self.stride);
        let (pad_left, ow) = same_padding(sample[1], self.kernel_w, self.stride);
        Ok((
            ConvGeometry {
                batch,
                h: sample[0],
                w: sample[1],
                oh,
                ow,
                pad_top,
                pad_left,
            },
            batched,
        ))
    }

    /// Input row/col for output position `o` and kernel tap `k`, if inside.
    fn tap(o: usize, k: usize, stride: usize, pad: usize, len: usize) -> Option<usize> {
        let i = (o * stride + k).checked_sub(pad)?;
        (i < len).then_some(i)
    }

    pub fn forward(&self, input: &Tensor<T>) -> Result<Tensor<T>> {
        let (g, batched) = self.geometry(input.shape())?;
        let (ci, co) = (self.in_channels, self.out_channels);
        let x = input.data();
        let w = self.weights.data();
        let mut out = vec![T::zero(); g.batch * g.oh * g.ow * co];
        for b in 0..g.batch {
            for oy in 0..g.oh {
                for ox in 0..g.ow {
                    let o = &mut out[((b * g.oh + oy) * g.ow + ox) * co..][..co];
                    o.copy_from_slice(self.bias.data());
                    for ky in 0..self.kernel_h {
                        let Some(iy) = Self::tap(oy, ky, self.stride, g.pad_top, g.h) else {
                            continue;
                        };
                        for kx in 0..self.kernel_w {
                            let Some(ix) = Self::tap(ox, kx, self.stride, g.pad_left, g.w) else {
                                continue;
                            };
                            let xin = &x[((b * g.h + iy) * g.w + ix) * ci..][..ci];
                            let wbase = (ky * self.kernel_w + kx) * ci * co;
                            for (c, &xv) in xin.iter().enumerate() {
                                if xv == T::zero() {
                                    continue;
                                }
                                let wrow = &w[wbase + c * co..][..co];
                                for (acc, &wv) in o.iter_mut().zip(wrow) {
                                    *acc += xv * wv;
                                }
                            }
                        }
                    }
                }
            }
        }
        self.activation.apply(&mut out);
        let shape = if batched {
            vec![g.batch, g.oh, g.ow, co]
        } else {
            vec![g.oh, g.ow, co]
        };
        Tensor::from_vec(&shape, out)
    }

    /// Gradients given the forward input, the activated output, and the
    /// gradient w.r.t. that output (or w.r.t. the pre-activation when
    /// `grad_is_preactivation`). Returns `(d_input, d_weights, d_bias)`;
    /// `d_input` is skipped unless requested.
    pub fn backward(
        &self,
        input: &Tensor<T>,
        output: &Tensor<T>,
        grad_output: &Tensor<T>,
        grad_is_preactivation: bool,
        need_input_grad: bool,
    ) -> Result<ParamGrads<T>> {
        let (g, _) = self.geometry(input.shape())?;
        if grad_output.shape() != output.shape() {
            return Err(Error::shape(format!(
                "conv2d gradient {:?} does not match output {:?}",
                grad_output.shape(),
                output.shape()
            )));
        }
        let (ci, co) = (self.in_channels, self.out_channels);
        let mut grad = grad_output.data().to_vec();
        if !grad_is_preactivation {
            self.activation.backprop(output.data(), &mut grad);
        }
        let x = input.data();
        let w = self.weights.data();
        let mut gw = vec![T::zero(); w.len()];
        let mut gb = vec![T::zero(); co];
        let mut gx = if need_input_grad {
            vec![T::zero(); x.len()]
        } else {
            Vec::new()
        };
        for b in 0..g.batch {
            for oy in 0..g.oh {
                for ox in 0..g.ow {
                    let gout = &grad[((b * g.oh + oy) * g.ow + ox) * co..][..co];
                    if gout.iter().all(|&v| v == T::zero()) {
                        continue;
                    }
                    for (acc, &gv) in gb.iter_mut().zip(gout) {
                        *acc += gv;
                    }
                    for ky in 0..self.kernel_h {
                        let Some(iy) = Self::tap(oy, ky, self.stride, g.pad_top, g.h) else {
                            continue;
                        };
                        for kx in 0..self.kernel_w {
                            let Some(ix) = Self::tap(ox, kx, self.stride, g.pad_left, g.w) else {
                                continue;
                            };
                            let xoff = ((b * g.h + iy) * g.w + ix) * ci;
                            let wbase = (ky * self.kernel_w + kx) * ci * co;
                            for c in 0..ci {
                                let xv = x[xoff + c];
                                if xv != T::zero() {
                                    let gwrow = &mut gw[wbase + c * co..][..co];
                                    for (acc, &gv) in gwrow.iter_mut().zip(gout) {
                                        *acc += xv * gv;
                                    }
                                }
                                if need_input_grad {
                                    let wrow = &w[wbase + c * co..][..co];
                                    let mut dot = T::zero();
                                    for (&wv, &gv) in wrow.iter().zip(gout) {
                                        dot += wv * gv;
                                    }
                                    gx[xoff + c] += dot;
                                }
                            }
                        }
                    }
                }
            }
        }
        let d_input = if need_input_grad {
            Some(Tensor::from_vec(input.shape(), gx)?)
        } else {
            None
        };
        Ok((
            d_input,
            Tensor::from_vec(self.weights.shape(), gw)?,
            Tensor::from_vec(&[co], gb)?,
        ))
    }
}

pub fn conv2d_forward<T: Scalar>(layer: &Conv2DLayer<T>, input: &Tensor<T>) -> Result<Tensor<T>> {
    layer.forward(input)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MaxPool2DLayer {
    pub pool_h: usize,
    pub pool_w: usize,
    pub stride: usize,
}

impl MaxPool2DLayer {
    pub fn new(pool: usize, stride: usize) -> Self {
        Self {
            pool_h: pool,
            pool_w: pool,
            stride,
        }
    }

    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        if input.len() != 3 {
            return Err(Error::shape(format!(
                "max pooling expects [H, W, C], got {input:?}"
            )));
        }
        if self.pool_h > input[0] || self.pool_w > input[1] {
            return Err(Error::shape(format!(
                "pool {}x{} larger than input {input:?}",
                self.pool_h, self.pool_w
            )));
        }
        Ok(vec![
            (input[0] - self.pool_h) / self.stride + 1,
            (input[1] - self.pool_w) / self.stride + 1,
            input[2],
        ])
    }

    /// Returns the pooled tensor and, per output cell, the flat input index
    /// of the window maximum (first maximum on ties).
    pub fn forward<T: Scalar>(&self, input: &Tensor<T>) -> Result<(Tensor<T>, Vec<usize>)> {
        let shape = input.shape();
        let (batch, batched) = batch_view(shape, 3, "max pooling")?;
        let sample = &shape[shape.len() - 3..];
        let out_sample = self.output_shape(sample)?;
        let (h, w, c) = (sample[0], sample[1], sample[2]);
        let (oh, ow) = (out_sample[0], out_sample[1]);
        let x = input.data();
        let n_out = batch * oh * ow * c;
        let mut out = Vec::with_capacity(n_out);
        let mut argmax = Vec::with_capacity(n_out);
        for b in 0..batch {
            for oy in 0..oh {
                for ox in 0..ow {
                    for ch in 0..c {
                        let mut best_idx =
                            ((b * h + oy * self.stride) * w + ox * self.stride) * c + ch;
                        let mut best = x[best_idx];
                        for py in 0..self.pool_h {
                            for px in 0..self.pool_w {
                                let idx =
                                    ((b * h + oy * self.stride + py) * w + ox * self.stride + px)
                                        * c
                                        + ch;
                                if x[idx] > best {
                                    best = x[idx];
                                    best_idx = idx;
                                }
                            }
                        }
                        out.push(best);
                        argmax.push(best_idx);
                    }
                }
            }
        }
        let out_shape = if batched {
            vec![batch, oh, ow, c]
        } else {
            out_sample
        };
        Ok((Tensor::from_vec(&out_shape, out)?, argmax))
    }

    pub fn backward<T: Scalar>(
        &self,
        input_shape: &[usize],
        argmax: &[usize],
        grad_output: &Tensor<T>,
    ) -> Result<Tensor<T>> {
        if argmax.len() != grad_output.len() {
            return Err(Error::shape(
                "max pooling gradient does not match forward output",
            ));
        }
        let mut gx = Tensor::zeros(input_shape)?;
        let data = gx.data_mut();
        for (&idx, &g) in argmax.iter().zip(grad_output.data()) {
            data[idx] += g;
        }
        Ok(gx)
    }
}

pub fn maxpool2d_forward<T: Scalar>(
    layer: &MaxPool2DLayer,
    input: &Tensor<T>,
) -> Result<Tensor<T>> {
    Ok(layer.forward(input)?.0)
}

/// Inverted dropout. Masks come from `(seed, stream)`, so a given stream
/// always reproduces the same mask.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DropoutLayer {
    pub rate: f64,
    pub rng_seed: u64,
}

impl DropoutLayer {
    pub fn new(rate: f64, rng_seed: u64) -> Result<Self> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::config(
                "dropout.rate",
                format!("rate must lie in [0, 1), got {rate}"),
            ));
        }
        Ok(Self { rate, rng_seed })
    }

    /// Per-element multipliers (`0` or `1 / (1 - rate)`), or `None` when the
    /// layer is the identity.
    pub fn mask<T: Scalar>(&self, len: usize, training: bool, stream: u64) -> Option<Vec<T>> {
        if !training || self.rate == 0.0 {
            return None;
        }
        let keep_scale = T::from_f64_lossy(1.0 / (1.0 - self.rate));
        let mut rng = seeded_stream(self.rng_seed, stream);
        Some(
            (0..len)
                .map(|_| {
                    if rng.random::<f64>() < self.rate {
                        T::zero()
                    } else {
                        keep_scale
                    }
                })
                .collect(),
        )
    }

    pub fn forward<T: Scalar>(
        &self,
        input: &Tensor<T>,
        training: bool,
        stream: u64,
    ) -> (Tensor<T>, Option<Vec<T>>) {
        match self.mask::<T>(input.len(), training, stream) {
            None => (input.clone(), None),
            Some(mask) => {
                let mut out = input.clone();
                for (x, &m) in out.data_mut().iter_mut().zip(&mask) {
                    *x *= m;
                }
                (out, Some(mask))
            }
        }
    }
}

pub fn dropout_forward<T: Scalar>(
    layer: &DropoutLayer,
    input: &Tensor<T>,
    training: bool,
    stream: u64,
) -> Tensor<T> {
    layer.forward(input, training, stream).0
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer<T: Scalar = f32> {
    pub in_features: usize,
    pub out_features: usize,
    pub activation: Activation,
    /// `[in_features, out_features]`
    pub weights: Tensor<T>,
    /// `[out_features]`
    pub bias: Tensor<T>,
}

impl<T: Scalar> DenseLayer<T> {
    pub fn new(in_features: usize, out_features: usize, activation: Activation) -> Result<Self> {
        Ok(Self {
            in_features,
            out_features,
            activation,
            weights: Tensor::zeros(&[in_features, out_features])?,
            bias: Tensor::zeros(&[out_features])?,
        })
    }

    pub fn param_count(&self) -> usize {
        dense_param_count(self.in_features, self.out_features)
    }

    fn batch(&self, shape: &[usize]) -> Result<(usize, bool)> {
        let (batch, batched) = batch_view(shape, 1, "dense")?;
        if shape[shape.len() - 1] != self.in_features {
            return Err(Error::shape(format!(
                "dense expects {} input features, got {shape:?}",
                self.in_features
            )));
        }
        Ok((batch, batched))
    }

    pub fn forward(&self, input: &Tensor<T>) -> Result<Tensor<T>> {
        let (batch, batched) = self.batch(input.shape())?;
        let (fi, fo) = (self.in_features, self.out_features);
        let w = self.weights.data();
        let mut out = vec![T::zero(); batch * fo];
        for (xrow, orow) in input.data().chunks_exact(fi).zip(out.chunks_exact_mut(fo)) {
            orow.copy_from_slice(self.bias.data());
            for (i, &xv) in xrow.iter().enumerate() {
                if xv == T::zero() {
                    continue;
                }
                for (acc, &wv) in orow.iter_mut().zip(&w[i * fo..(i + 1) * fo]) {
                    *acc += xv * wv;
                }
            }
        }
        self.activation.apply(&mut out);
        let shape = if batched { vec![batch, fo] } else { vec![fo] };
        Tensor::from_vec(&shape, out)
    }

    /// Same contract as [`Conv2DLayer::backward`].
    pub fn backward(
        &self,
        input: &Tensor<T>,
        output: &Tensor<T>,
        grad_output: &Tensor<T>,
        grad_is_preactivation: bool,
        need_input_grad: bool,
    ) -> Result<ParamGrads<T>> {
        self.batch(input.shape())?;
        if grad_output.shape() != output.shape() {
            return Err(Error::shape(format!(
                "dense gradient {:?} does not match output {:?}",
                grad_output.shape(),
                output.shape()
            )));
        }
        let (fi, fo) = (self.in_features, self.out_features);
        let mut grad = grad_output.data().to_vec();
        if !grad_is_preactivation {
            self.activation.backprop(output.data(), &mut grad);
        }
        let w = self.weights.data();
        let mut gw = vec![T::zero(); w.len()];
        let mut gb = vec![T::zero(); fo];
        let mut gx = if need_input_grad {
            vec![T::zero(); input.len()]
        } else {
            Vec::new()
        };
        for (b, (xrow, grow)) in input
            .data()
            .chunks_exact(fi)
            .zip(grad.chunks_exact(fo))
            .enumerate()
        {
            for (acc, &gv) in gb.iter_mut().zip(grow) {
                *acc += gv;
            }
            for (i, &xv) in xrow.iter().enumerate() {
                let wrow = &w[i * fo..(i + 1) * fo];
                if xv != T::zero() {
                    for (acc, &gv) in gw[i * fo..(i + 1) * fo].iter_mut().zip(grow) {
                        *acc += xv * gv;
                    }
                }
                if need_input_grad {
                    let mut dot = T::zero();
                    for (&wv, &gv) in wrow.iter().zip(grow) {
                        dot += wv * gv;
                    }
                    gx[b * fi + i] = dot;
                }
            }
        }
        let d_input = if need_input_grad {
            Some(Tensor::from_vec(input.shape(), gx)?)
        } else {
            None
        };
        Ok((
            d_input,
            Tensor::from_vec(self.weights.shape(), gw)?,
            Tensor::from_vec(&[fo], gb)?,
        ))
    }
}

pub fn dense_forward<T: Scalar>(layer: &DenseLayer<T>, input: &Tensor<T>) -> Result<Tensor<T>> {
    layer.forward(input)
}

#[derive(Debug, Clone, PartialEq)]
pub enum Layer<T: Scalar = f32> {
    Conv2D(Conv2DLayer<T>),
    MaxPool2D(MaxPool2DLayer),
    Dropout(DropoutLayer),
    Flatten,
    Dense(DenseLayer<T>),
}

impl<T: Scalar> Layer<T> {
    /// Keras-style class name used in model summaries.
    pub fn kind(&self) -> &'static str {
        match self {
            Layer::Conv2D(_) => "Conv2D",
            Layer::MaxPool2D(_) => "MaxPooling2D",
            Layer::Dropout(_) => "Dropout",
            Layer::Flatten => "Flatten",
            Layer::Dense(_) => "Dense",
        }
    }

    pub fn param_count(&self) -> usize {
        match self {
            Layer::Conv2D(l) => l.param_count(),
            Layer::Dense(l) => l.param_count(),
            _ => 0,
        }
    }

    /// Single-sample output shape.
    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        match self {
            Layer::Conv2D(l) => l.output_shape(input),
            Layer::MaxPool2D(l) => l.output_shape(input),
            Layer::Dropout(_) => Ok(input.to_vec()),
            Layer::Flatten => Ok(vec![input.iter().product()]),
            Layer::Dense(l) => {
                if input != [l.in_features] {
                    return Err(Error::shape(format!(
                        "dense expects [{}], got {input:?}",
                        l.in_features
                    )));
                }
                Ok(vec![l.out_features])
            }
        }
    }

    pub fn cast<U: Scalar>(&self) -> Layer<U> {
        match self {
            Layer::Conv2D(l) => Layer::Conv2D(Conv2DLayer {
                in_channels: l.in_channels,
                out_channels: l.out_channels,
                kernel_h: l.kernel_h,
                kernel_w: l.kernel_w,
                stride: l.stride,
                padding: l.padding,
                activation: l.activation,
                weights: l.weights.cast(),
                bias: l.bias.cast(),
            }),
            Layer::MaxPool2D(l) => Layer::MaxPool2D(*l),
            Layer::Dropout(l) => Layer::Dropout(*l),
            Layer::Flatten => Layer::Flatten,
            Layer::Dense(l) => Layer::Dense(DenseLayer {
                in_features: l.in_features,
                out_features: l.out_features,
                activation: l.activation,
                weights: l.weights.cast(),
                bias: l.bias.cast(),
            }),
        }
    }
}
