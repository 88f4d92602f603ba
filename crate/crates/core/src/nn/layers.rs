//! Layer specifications, their runtime state, and the sequential network.

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::ops::{self, BatchNormCache, BatchNormMode, BatchNormState};
use super::Tensor;
use crate::seed;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    None,
    Relu,
    Sigmoid,
}

fn one() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum LayerSpec {
    Conv {
        out_channels: usize,
        kernel: usize,
        #[serde(default = "one")]
        stride: usize,
        #[serde(default)]
        padding: usize,
    },
    BatchNorm,
    Relu,
    MaxPool {
        size: usize,
        stride: usize,
    },
    /// Global average pooling over all spatial positions.
    AvgPool,
    Residual {
        layers: Vec<LayerSpec>,
        #[serde(default)]
        projection: bool,
    },
    Flatten,
    Dense {
        units: usize,
        #[serde(default)]
        activation: Activation,
    },
}

impl LayerSpec {
    pub fn conv(out_channels: usize, kernel: usize, stride: usize, padding: usize) -> Self {
        LayerSpec::Conv {
            out_channels,
            kernel,
            stride,
            padding,
        }
    }

    /// Two 3×3 conv + batch-norm stages with a ReLU between them.
    pub fn basic_block(channels: usize, stride: usize, projection: bool) -> Self {
        LayerSpec::Residual {
            layers: vec![
                LayerSpec::conv(channels, 3, stride, 1),
                LayerSpec::BatchNorm,
                LayerSpec::Relu,
                LayerSpec::conv(channels, 3, 1, 1),
                LayerSpec::BatchNorm,
            ],
            projection,
        }
    }

    /// 1×1 → 3×3 → 1×1 bottleneck with a 4× channel expansion.
    pub fn bottleneck_block(width: usize, stride: usize, projection: bool) -> Self {
        LayerSpec::Residual {
            layers: vec![
                LayerSpec::conv(width, 1, 1, 0),
                LayerSpec::BatchNorm,
                LayerSpec::Relu,
                LayerSpec::conv(width, 3, stride, 1),
                LayerSpec::BatchNorm,
                LayerSpec::Relu,
                LayerSpec::conv(4 * width, 1, 1, 0),
                LayerSpec::BatchNorm,
            ],
            projection,
        }
    }

    /// Spatial downsampling factor of the layer.
    fn stride(&self) -> usize {
        match self {
            LayerSpec::Conv { stride, .. } | LayerSpec::MaxPool { stride, .. } => *stride,
            LayerSpec::Residual { layers, .. } => layers.iter().map(LayerSpec::stride).product(),
            _ => 1,
        }
    }

    /// Output shape (without the batch axis) for a given input shape.
    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        let spatial = |what: &str| -> Result<(usize, usize, usize)> {
            match *input {
                [h, w, c] => Ok((h, w, c)),
                _ => Err(Error::shape(format!(
                    "{what} needs an [h, w, c] input, got {input:?}"
                ))),
            }
        };
        match self {
            LayerSpec::Conv {
                out_channels,
                kernel,
                stride,
                padding,
            } => {
                if *out_channels == 0 || *kernel == 0 || *stride == 0 {
                    return Err(Error::invalid(
                        "conv channels, kernel and stride must be positive",
                    ));
                }
                let (h, w, c) = spatial("conv")?;
                let out = ops::conv2d_output_shape(
                    &[1, h, w, c],
                    &[*kernel, *kernel, c, *out_channels],
                    *stride,
                    *padding,
                )?;
                Ok(out[1..].to_vec())
            }
            LayerSpec::BatchNorm | LayerSpec::Relu => {
                if input.is_empty() {
                    return Err(Error::shape("layer input has no axes"));
                }
                Ok(input.to_vec())
            }
            LayerSpec::MaxPool { size, stride } => {
                let (h, w, c) = spatial("max_pool")?;
                if *size == 0 || *stride == 0 {
                    return Err(Error::invalid("pool size and stride must be positive"));
                }
                if *size > h || *size > w {
                    return Err(Error::shape(format!("pool window {size} exceeds {h}x{w}")));
                }
                Ok(vec![(h - size) / stride + 1, (w - size) / stride + 1, c])
            }
            LayerSpec::AvgPool => {
                let (_, _, c) = spatial("avg_pool")?;
                Ok(vec![c])
            }
            LayerSpec::Flatten => Ok(vec![input.iter().product()]),
            LayerSpec::Dense { units, .. } => {
                if *units == 0 {
                    return Err(Error::invalid("dense units must be positive"));
                }
                if input.len() != 1 {
                    return Err(Error::shape(format!(
                        "dense needs a flat input, got {input:?}; add a flatten layer"
                    )));
                }
                Ok(vec![*units])
            }
            LayerSpec::Residual { layers, projection } => {
                let inner = layers
                    .iter()
                    .try_fold(input.to_vec(), |s, l| l.output_shape(&s))?;
                if inner == input {
                    return Ok(inner);
                }
                if !projection {
                    return Err(Error::shape(format!(
                        "residual path maps {input:?} to {inner:?}; enable projection"
                    )));
                }
                let (h, w, _) = spatial("residual projection")?;
                let s = self.stride();
                let projected = [(h - 1) / s + 1, (w - 1) / s + 1];
                if inner.len() != 3 || inner[..2] != projected {
                    return Err(Error::shape(format!(
                        "projection shortcut gives {projected:?}, residual path gives {inner:?}"
                    )));
                }
                Ok(inner)
            }
        }
    }

    /// Trainable parameter count, computed from shapes alone.
    pub fn param_count(&self, input: &[usize]) -> Result<usize> {
        Ok(match self {
            LayerSpec::Conv {
                out_channels,
                kernel,
                ..
            } => {
                let c = input.last().copied().unwrap_or(0);
                kernel * kernel * c * out_channels + out_channels
            }
            LayerSpec::BatchNorm => 2 * input.last().copied().unwrap_or(0),
            LayerSpec::Dense { units, .. } => input[0] * units + units,
            LayerSpec::Residual { layers, .. } => {
                let mut shape = input.to_vec();
                let mut total = 0;
                for l in layers {
                    total += l.param_count(&shape)?;
                    shape = l.output_shape(&shape)?;
                }
                if self.needs_projection(input)? {
                    let cin = input[2];
                    let cout = shape[2];
                    total += cin * cout + cout;
                }
                total
            }
            _ => 0,
        })
    }

    fn needs_projection(&self, input: &[usize]) -> Result<bool> {
        match self {
            LayerSpec::Residual { projection, .. } => {
                Ok(*projection || self.output_shape(input)? != input)
            }
            _ => Ok(false),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct InputShape {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
}

impl InputShape {
    pub fn dims(&self) -> Vec<usize> {
        vec![self.height, self.width, self.channels]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkConfig {
    pub input: InputShape,
    pub layers: Vec<LayerSpec>,
    #[serde(default)]
    pub seed: u64,
}

impl NetworkConfig {
    /// Conv(16)+BN+ReLU, max-pool, two basic residual blocks (the second
    /// projecting to 32 channels at stride 2), global average pool,
    /// flatten, Dense(128, relu), Dense(1, sigmoid).
    pub fn resnet_mini(height: usize, width: usize, seed: u64) -> Self {
        Self {
            input: InputShape {
                height,
                width,
                channels: 1,
            },
            layers: vec![
                LayerSpec::conv(16, 3, 1, 1),
                LayerSpec::BatchNorm,
                LayerSpec::Relu,
                LayerSpec::MaxPool { size: 2, stride: 2 },
                LayerSpec::basic_block(16, 1, false),
                LayerSpec::basic_block(32, 2, true),
                LayerSpec::AvgPool,
                LayerSpec::Flatten,
                LayerSpec::Dense {
                    units: 128,
                    activation: Activation::Relu,
                },
                LayerSpec::Dense {
                    units: 1,
                    activation: Activation::Sigmoid,
                },
            ],
            seed,
        }
    }

    /// Full-depth ResNet50 layout: 7×7 stem, max-pool, 3/4/6/3 bottleneck
    /// stages (48 convolutions), global average pool, Dense(128) and a
    /// sigmoid head.
    pub fn resnet50(height: usize, width: usize, channels: usize, seed: u64) -> Self {
        let mut layers = vec![
            LayerSpec::conv(64, 7, 2, 3),
            LayerSpec::BatchNorm,
            LayerSpec::Relu,
            LayerSpec::MaxPool { size: 3, stride: 2 },
        ];
        for (stage, (&blocks, &width)) in [3usize, 4, 6, 3]
            .iter()
            .zip(&[64usize, 128, 256, 512])
            .enumerate()
        {
            for b in 0..blocks {
                let stride = if stage > 0 && b == 0 { 2 } else { 1 };
                layers.push(LayerSpec::bottleneck_block(width, stride, b == 0));
            }
        }
        layers.extend([
            LayerSpec::AvgPool,
            LayerSpec::Flatten,
            LayerSpec::Dense {
                units: 128,
                activation: Activation::Relu,
            },
            LayerSpec::Dense {
                units: 1,
                activation: Activation::Sigmoid,
            },
        ]);
        Self {
            input: InputShape {
                height,
                width,
                channels,
            },
            layers,
            seed,
        }
    }

    /// Per-layer output shapes; fails on any inconsistency.
    pub fn shapes(&self) -> Result<Vec<Vec<usize>>> {
        if self.input.height == 0 || self.input.width == 0 || self.input.channels == 0 {
            return Err(Error::invalid("input dimensions must be positive"));
        }
        let mut shape = self.input.dims();
        let mut out = Vec::with_capacity(self.layers.len());
        for l in &self.layers {
            shape = l.output_shape(&shape)?;
            out.push(shape.clone());
        }
        Ok(out)
    }

    pub fn validate(&self) -> Result<()> {
        let shapes = self.shapes()?;
        match self.layers.last() {
            Some(LayerSpec::Dense {
                units: 1,
                activation: Activation::Sigmoid,
            }) => {}
            _ => {
                return Err(Error::invalid(
                    "network must end with a Dense(1, sigmoid) classification head",
                ))
            }
        }
        debug_assert_eq!(shapes.last().map(Vec::as_slice), Some(&[1usize][..]));
        Ok(())
    }

    pub fn param_count(&self) -> Result<usize> {
        let mut shape = self.input.dims();
        let mut total = 0;
        for l in &self.layers {
            total += l.param_count(&shape)?;
            shape = l.output_shape(&shape)?;
        }
        Ok(total)
    }
}

/// A trainable tensor with its accumulated gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub value: Tensor,
    pub grad: Vec<f64>,
}

impl Param {
    fn new(value: Tensor) -> Self {
        let grad = vec![0.0; value.len()];
        Self { value, grad }
    }

    fn he_normal(shape: Vec<usize>, fan_in: usize, rng: &mut seed::Rng) -> Self {
        let std = (2.0 / fan_in as f64).sqrt();
        let normal = Normal::new(0.0, std).expect("finite std");
        let n = shape.iter().product();
        let data = (0..n).map(|_| normal.sample(rng)).collect();
        Self::new(Tensor::from_parts(shape, data))
    }

    fn zeros(shape: Vec<usize>) -> Self {
        Self::new(Tensor::zeros(shape))
    }

    fn filled(shape: Vec<usize>, v: f64) -> Self {
        let n = shape.iter().product();
        Self::new(Tensor::from_parts(shape, vec![v; n]))
    }

    fn accumulate(&mut self, g: &[f64]) {
        for (a, &b) in self.grad.iter_mut().zip(g) {
            *a += b;
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Infer,
}

#[derive(Debug, Clone)]
pub struct ConvLayer {
    pub stride: usize,
    pub padding: usize,
    pub weight: Param,
    pub bias: Param,
    input: Option<Tensor>,
}

impl ConvLayer {
    fn forward(&mut self, x: Tensor, mode: Mode) -> Result<Tensor> {
        let y = ops::conv2d(
            &x,
            &self.weight.value,
            self.bias.value.data(),
            self.stride,
            self.padding,
        )?;
        self.input = (mode == Mode::Train).then_some(x);
        Ok(y)
    }

    fn backward(&mut self, g: Tensor) -> Result<Tensor> {
        let x = self.input.as_ref().ok_or(Error::NoForwardCache)?;
        let (dx, dw, db) =
            ops::conv2d_backward(x, &self.weight.value, &g, self.stride, self.padding)?;
        self.weight.accumulate(dw.data());
        self.bias.accumulate(&db);
        Ok(dx)
    }
}

#[derive(Debug, Clone)]
pub struct BatchNormLayer {
    pub gamma: Param,
    pub beta: Param,
    pub state: BatchNormState,
    cache: Option<BatchNormCache>,
}

impl BatchNormLayer {
    fn forward(&mut self, x: Tensor, mode: Mode) -> Result<Tensor> {
        let bn_mode = match mode {
            Mode::Train => BatchNormMode::Train,
            Mode::Infer => BatchNormMode::Infer,
        };
        let (y, cache) = ops::batch_norm(
            &x,
            self.gamma.value.data(),
            self.beta.value.data(),
            bn_mode,
            &mut self.state,
        )?;
        self.cache = cache;
        Ok(y)
    }

    fn backward(&mut self, g: Tensor) -> Result<Tensor> {
        let cache = self.cache.as_ref().ok_or(Error::NoForwardCache)?;
        let (dx, dgamma, dbeta) = ops::batch_norm_backward(&g, self.gamma.value.data(), cache)?;
        self.gamma.accumulate(&dgamma);
        self.beta.accumulate(&dbeta);
        Ok(dx)
    }
}

#[derive(Debug, Clone)]
pub struct DenseLayer {
    pub activation: Activation,
    pub weight: Param,
    pub bias: Param,
    input: Option<Tensor>,
    output: Option<Tensor>,
}

impl DenseLayer {
    fn forward(&mut self, x: Tensor, mode: Mode) -> Result<Tensor> {
        let z = ops::dense(&x, &self.weight.value, self.bias.value.data())?;
        let y = match self.activation {
            Activation::None => z,
            Activation::Relu => ops::relu(&z),
            Activation::Sigmoid => ops::sigmoid(&z),
        };
        if mode == Mode::Train {
            self.input = Some(x);
            self.output = Some(y.clone());
        } else {
            self.input = None;
            self.output = None;
        }
        Ok(y)
    }

    fn backward(&mut self, g: Tensor) -> Result<Tensor> {
        let (x, y) = match (&self.input, &self.output) {
            (Some(x), Some(y)) => (x, y),
            _ => return Err(Error::NoForwardCache),
        };
        let gz = match self.activation {
            Activation::None => g,
            // relu output is positive exactly where its input was
            Activation::Relu => ops::relu_backward(y, &g),
            Activation::Sigmoid => Tensor::from_parts(
                g.shape().to_vec(),
                g.data()
                    .iter()
                    .zip(y.data())
                    .map(|(&gv, &p)| gv * p * (1.0 - p))
                    .collect(),
            ),
        };
        let (dx, dw, db) = ops::dense_backward(x, &self.weight.value, &gz)?;
        self.weight.accumulate(dw.data());
        self.bias.accumulate(&db);
        Ok(dx)
    }
}

#[derive(Debug, Clone)]
pub struct ResidualLayer {
    pub inner: Vec<Layer>,
    pub projection: Option<ConvLayer>,
    sum: Option<Tensor>,
}

impl ResidualLayer {
    fn forward(&mut self, x: Tensor, mode: Mode) -> Result<Tensor> {
        let shortcut = match &mut self.projection {
            Some(p) => p.forward(x.clone(), mode)?,
            None => x.clone(),
        };
        let branch = self
            .inner
            .iter_mut()
            .try_fold(x, |acc, l| l.forward(acc, mode))?;
        if branch.shape() != shortcut.shape() {
            return Err(Error::shape(format!(
                "residual path {:?} vs shortcut {:?}",
                branch.shape(),
                shortcut.shape()
            )));
        }
        let mut sum = branch;
        for (a, &b) in sum.data_mut().iter_mut().zip(shortcut.data()) {
            *a += b;
        }
        let y = ops::relu(&sum);
        self.sum = (mode == Mode::Train).then_some(sum);
        Ok(y)
    }

    fn backward(&mut self, g: Tensor) -> Result<Tensor> {
        let sum = self.sum.as_ref().ok_or(Error::NoForwardCache)?;
        let gs = ops::relu_backward(sum, &g);
        let mut dx = self
            .inner
            .iter_mut()
            .rev()
            .try_fold(gs.clone(), |acc, l| l.backward(acc))?;
        let d_short = match &mut self.projection {
            Some(p) => p.backward(gs)?,
            None => gs,
        };
        for (a, &b) in dx.data_mut().iter_mut().zip(d_short.data()) {
            *a += b;
        }
        Ok(dx)
    }
}

#[derive(Debug, Clone)]
pub enum Layer {
    Conv(ConvLayer),
    BatchNorm(BatchNormLayer),
    Relu {
        input: Option<Tensor>,
    },
    MaxPool {
        size: usize,
        stride: usize,
        cache: Option<(Vec<usize>, Vec<usize>)>,
    },
    AvgPool {
        input_shape: Option<Vec<usize>>,
    },
    Residual(ResidualLayer),
    Flatten {
        input_shape: Option<Vec<usize>>,
    },
    Dense(DenseLayer),
}

impl Layer {
    /// Instantiates `spec` for per-sample input shape `input`, drawing
    /// He-normal weights from `rng`.
    pub fn build(spec: &LayerSpec, input: &[usize], rng: &mut seed::Rng) -> Result<Self> {
        spec.output_shape(input)?;
        Ok(match spec {
            LayerSpec::Conv {
                out_channels,
                kernel,
                stride,
                padding,
            } => {
                let cin = input[2];
                Layer::Conv(ConvLayer {
                    stride: *stride,
                    padding: *padding,
                    weight: Param::he_normal(
                        vec![*kernel, *kernel, cin, *out_channels],
                        kernel * kernel * cin,
                        rng,
                    ),
                    bias: Param::zeros(vec![*out_channels]),
                    input: None,
                })
            }
            LayerSpec::BatchNorm => {
                let c = *input.last().expect("checked by output_shape");
                Layer::BatchNorm(BatchNormLayer {
                    gamma: Param::filled(vec![c], 1.0),
                    beta: Param::zeros(vec![c]),
                    state: BatchNormState::new(c),
                    cache: None,
                })
            }
            LayerSpec::Relu => Layer::Relu { input: None },
            LayerSpec::MaxPool { size, stride } => Layer::MaxPool {
                size: *size,
                stride: *stride,
                cache: None,
            },
            LayerSpec::AvgPool => Layer::AvgPool { input_shape: None },
            LayerSpec::Flatten => Layer::Flatten { input_shape: None },
            LayerSpec::Dense { units, activation } => Layer::Dense(DenseLayer {
                activation: *activation,
                weight: Param::he_normal(vec![input[0], *units], input[0], rng),
                bias: Param::zeros(vec![*units]),
                input: None,
                output: None,
            }),
            LayerSpec::Residual { layers, .. } => {
                let mut shape = input.to_vec();
                let mut inner = Vec::with_capacity(layers.len());
                for l in layers {
                    inner.push(Layer::build(l, &shape, rng)?);
                    shape = l.output_shape(&shape)?;
                }
                let projection = if spec.needs_projection(input)? {
                    let (cin, cout) = (input[2], shape[2]);
                    Some(ConvLayer {
                        stride: spec.stride(),
                        padding: 0,
                        weight: Param::he_normal(vec![1, 1, cin, cout], cin, rng),
                        bias: Param::zeros(vec![cout]),
                        input: None,
                    })
                } else {
                    None
                };
                Layer::Residual(ResidualLayer {
                    inner,
                    projection,
                    sum: None,
                })
            }
        })
    }

    pub fn forward(&mut self, x: Tensor, mode: Mode) -> Result<Tensor> {
        let train = mode == Mode::Train;
        match self {
            Layer::Conv(l) => l.forward(x, mode),
            Layer::BatchNorm(l) => l.forward(x, mode),
            Layer::Dense(l) => l.forward(x, mode),
            Layer::Residual(l) => l.forward(x, mode),
            Layer::Relu { input } => {
                let y = ops::relu(&x);
                *input = train.then_some(x);
                Ok(y)
            }
            Layer::MaxPool {
                size,
                stride,
                cache,
            } => {
                let (y, argmax) = ops::max_pool(&x, *size, *stride)?;
                *cache = train.then(|| (x.shape().to_vec(), argmax));
                Ok(y)
            }
            Layer::AvgPool { input_shape } => {
                let y = ops::global_avg_pool(&x)?;
                *input_shape = train.then(|| x.shape().to_vec());
                Ok(y)
            }
            Layer::Flatten { input_shape } => {
                *input_shape = train.then(|| x.shape().to_vec());
                ops::flatten(&x)
            }
        }
    }

    /// Propagates `g` (gradient w.r.t. this layer's output) back to the
    /// input, accumulating parameter gradients along the way.
    pub fn backward(&mut self, g: Tensor) -> Result<Tensor> {
        match self {
            Layer::Conv(l) => l.backward(g),
            Layer::BatchNorm(l) => l.backward(g),
            Layer::Dense(l) => l.backward(g),
            Layer::Residual(l) => l.backward(g),
            Layer::Relu { input } => {
                let x = input.as_ref().ok_or(Error::NoForwardCache)?;
                Ok(ops::relu_backward(x, &g))
            }
            Layer::MaxPool { cache, .. } => {
                let (shape, argmax) = cache.as_ref().ok_or(Error::NoForwardCache)?;
                Ok(ops::max_pool_backward(shape, argmax, &g))
            }
            Layer::AvgPool { input_shape } => {
                let shape = input_shape.as_ref().ok_or(Error::NoForwardCache)?;
                Ok(ops::global_avg_pool_backward(shape, &g))
            }
            Layer::Flatten { input_shape } => {
                let shape = input_shape.as_ref().ok_or(Error::NoForwardCache)?;
                g.reshape(shape.clone())
            }
        }
    }

    /// Trainable parameters in a fixed traversal order.
    pub fn params(&self) -> Vec<&Param> {
        match self {
            Layer::Conv(l) => vec![&l.weight, &l.bias],
            Layer::BatchNorm(l) => vec![&l.gamma, &l.beta],
            Layer::Dense(l) => vec![&l.weight, &l.bias],
            Layer::Residual(l) => {
                let mut v: Vec<&Param> = l.inner.iter().flat_map(Layer::params).collect();
                if let Some(p) = &l.projection {
                    v.extend([&p.weight, &p.bias]);
                }
                v
            }
            _ => Vec::new(),
        }
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        match self {
            Layer::Conv(l) => vec![&mut l.weight, &mut l.bias],
            Layer::BatchNorm(l) => vec![&mut l.gamma, &mut l.beta],
            Layer::Dense(l) => vec![&mut l.weight, &mut l.bias],
            Layer::Residual(l) => {
                let mut v: Vec<&mut Param> =
                    l.inner.iter_mut().flat_map(Layer::params_mut).collect();
                if let Some(p) = &mut l.projection {
                    v.extend([&mut p.weight, &mut p.bias]);
                }
                v
            }
            _ => Vec::new(),
        }
    }

    pub fn bn_states(&self) -> Vec<&BatchNormState> {
        match self {
            Layer::BatchNorm(l) => vec![&l.state],
            Layer::Residual(l) => l.inner.iter().flat_map(Layer::bn_states).collect(),
            _ => Vec::new(),
        }
    }

    pub fn bn_states_mut(&mut self) -> Vec<&mut BatchNormState> {
        match self {
            Layer::BatchNorm(l) => vec![&mut l.state],
            Layer::Residual(l) => l.inner.iter_mut().flat_map(Layer::bn_states_mut).collect(),
            _ => Vec::new(),
        }
    }
}

/// Sequential network ending in a sigmoid probability head.
#[derive(Debug, Clone)]
pub struct Network {
    config: NetworkConfig,
    layers: Vec<Layer>,
    probabilities: Option<Tensor>,
}

impl Network {
    pub fn new(config: NetworkConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = seed::rng(config.seed, "nn", "init", 0);
        let mut shape = config.input.dims();
        let mut layers = Vec::with_capacity(config.layers.len());
        for spec in &config.layers {
            layers.push(Layer::build(spec, &shape, &mut rng)?);
            shape = spec.output_shape(&shape)?;
        }
        Ok(Self {
            config,
            layers,
            probabilities: None,
        })
    }

    pub fn config(&self) -> &NetworkConfig {
        &self.config
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    /// Checks that a batch matches the configured `[n, h, w, c]` input.
    pub fn check_input(&self, x: &Tensor) -> Result<()> {
        let expected = self.config.input.dims();
        if x.rank() != 4 || x.shape()[1..] != expected[..] {
            return Err(Error::shape(format!(
                "network expects [n, {}, {}, {}] input, got {:?}",
                expected[0],
                expected[1],
                expected[2],
                x.shape()
            )));
        }
        Ok(())
    }

    /// Probabilities of shape `[n, 1]`.
    pub fn forward(&mut self, x: &Tensor, mode: Mode) -> Result<Tensor> {
        self.check_input(x)?;
        let out = self
            .layers
            .iter_mut()
            .try_fold(x.clone(), |acc, l| l.forward(acc, mode))?;
        self.probabilities = (mode == Mode::Train).then(|| out.clone());
        Ok(out)
    }

    /// Accumulates gradients of the mean BCE loss for `labels` (shape
    /// `[n, 1]`) into every parameter, using the last training forward pass.
    pub fn backward(&mut self, labels: &Tensor) -> Result<()> {
        let probs = self.probabilities.as_ref().ok_or(Error::NoForwardCache)?;
        let g = ops::bce_loss_grad(probs, labels)?;
        self.backward_from(g)?;
        Ok(())
    }

    /// Back-propagates an arbitrary output gradient; returns the input gradient.
    pub fn backward_from(&mut self, grad_out: Tensor) -> Result<Tensor> {
        if self.probabilities.is_none() {
            return Err(Error::NoForwardCache);
        }
        self.layers
            .iter_mut()
            .rev()
            .try_fold(grad_out, |acc, l| l.backward(acc))
    }

    pub fn zero_grad(&mut self) {
        for p in self.params_mut() {
            p.grad.iter_mut().for_each(|g| *g = 0.0);
        }
    }

    pub fn params(&self) -> Vec<&Param> {
        self.layers.iter().flat_map(Layer::params).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        self.layers.iter_mut().flat_map(Layer::params_mut).collect()
    }

    pub fn bn_states(&self) -> Vec<&BatchNormState> {
        self.layers.iter().flat_map(Layer::bn_states).collect()
    }

    pub fn bn_states_mut(&mut self) -> Vec<&mut BatchNormState> {
        self.layers
            .iter_mut()
            .flat_map(Layer::bn_states_mut)
            .collect()
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|p| p.value.len()).sum()
    }
}

/// Forward pass through a single residual block.
pub fn residual_block_forward(block: &mut Layer, input: Tensor, mode: Mode) -> Result<Tensor> {
    match block {
        Layer::Residual(_) => block.forward(input, mode),
        _ => Err(Error::invalid("layer is not a residual block")),
    }
}
