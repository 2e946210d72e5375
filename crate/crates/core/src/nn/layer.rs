use rand::Rng;
use serde::{Deserialize, Serialize};

use super::conv::Conv2d;
use super::dense::Dense;
use super::norm::BatchNorm2d;
use super::spatial;
use super::Tensor;
use crate::error::{Error, Result};

/// Whether batch-dependent layers use batch or running statistics.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Serializable description of one layer; stored in checkpoint headers.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerSpec {
    Conv2d { in_channels: usize, out_channels: usize, kernel: usize },
    Maxpool2d { factor: usize },
    Upsample2dNearest { factor: usize },
    Dense { inputs: usize, units: usize },
    LstmCell { inputs: usize, hidden: usize },
    Batchnorm { channels: usize },
    ResidualBlock { channels: usize, kernel: usize },
    Sigmoid,
    Relu,
    CropRows { rows: usize },
    Flatten,
    /// Per-item target shape; the batch dimension is kept.
    Reshape { shape: Vec<usize> },
}

impl LayerSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidParameter(format!("{msg}: {self:?}")));
        match self {
            LayerSpec::Conv2d { in_channels, out_channels, kernel } => {
                if *in_channels == 0 || *out_channels == 0 {
                    return bad("conv channels must be >= 1");
                }
                if *kernel == 0 || kernel % 2 == 0 {
                    return bad("conv kernel must be odd and >= 1");
                }
            }
            LayerSpec::ResidualBlock { channels, kernel } => {
                if *channels == 0 || *kernel == 0 || kernel % 2 == 0 {
                    return bad("residual block needs channels >= 1 and an odd kernel");
                }
            }
            LayerSpec::Maxpool2d { factor } | LayerSpec::Upsample2dNearest { factor } if *factor == 0 => {
                return bad("factor must be >= 1");
            }
            LayerSpec::Dense { inputs, units } if *inputs == 0 || *units == 0 => {
                return bad("dense sizes must be >= 1");
            }
            LayerSpec::LstmCell { inputs, hidden } if *inputs == 0 || *hidden == 0 => {
                return bad("lstm sizes must be >= 1");
            }
            LayerSpec::Batchnorm { channels } if *channels == 0 => {
                return bad("batchnorm channels must be >= 1");
            }
            LayerSpec::Reshape { shape } if shape.is_empty() || shape.contains(&0) => {
                return bad("reshape dims must be >= 1");
            }
            _ => {}
        }
        Ok(())
    }
}

/// Identity-skip residual block: conv, BN, ReLU, conv, BN, add input, ReLU.
#[derive(Clone, Debug)]
pub struct ResidualBlock {
    pub(crate) conv1: Conv2d,
    pub(crate) bn1: BatchNorm2d,
    pub(crate) conv2: Conv2d,
    pub(crate) bn2: BatchNorm2d,
}

struct BlockTrace {
    a1: Tensor,
    n1: Tensor,
    r1: Tensor,
    a2: Tensor,
    sum: Tensor,
}

impl ResidualBlock {
    pub fn new(channels: usize, kernel: usize, rng: &mut impl Rng) -> Result<Self> {
        Ok(ResidualBlock {
            conv1: Conv2d::new(channels, channels, kernel, rng)?,
            bn1: BatchNorm2d::new(channels)?,
            conv2: Conv2d::new(channels, channels, kernel, rng)?,
            bn2: BatchNorm2d::new(channels)?,
        })
    }

    fn trace(&self, x: &Tensor, mode: Mode) -> Result<BlockTrace> {
        let a1 = self.conv1.forward(x)?;
        let n1 = self.bn1.forward(&a1, mode)?;
        let r1 = relu(&n1);
        let a2 = self.conv2.forward(&r1)?;
        let mut sum = self.bn2.forward(&a2, mode)?;
        sum.add_assign(x)?;
        Ok(BlockTrace { a1, n1, r1, a2, sum })
    }

    pub fn forward(&self, x: &Tensor, mode: Mode) -> Result<Tensor> {
        Ok(relu(&self.trace(x, mode)?.sum))
    }

    pub fn forward_train(&mut self, x: &Tensor) -> Result<Tensor> {
        let a1 = self.conv1.forward(x)?;
        let r1 = relu(&self.bn1.forward_train(&a1)?);
        let a2 = self.conv2.forward(&r1)?;
        let mut sum = self.bn2.forward_train(&a2)?;
        sum.add_assign(x)?;
        Ok(relu(&sum))
    }

    pub fn backward(&self, x: &Tensor, grad_out: &Tensor, mode: Mode) -> Result<(Tensor, Vec<Tensor>)> {
        let t = self.trace(x, mode)?;
        let dsum = relu_backward(&t.sum, grad_out)?;
        let (da2, g_bn2) = self.bn2.backward(&t.a2, &dsum, mode)?;
        let (dr1, g_conv2) = self.conv2.backward(&t.r1, &da2)?;
        let dn1 = relu_backward(&t.n1, &dr1)?;
        let (da1, g_bn1) = self.bn1.backward(&t.a1, &dn1, mode)?;
        let (mut dx, g_conv1) = self.conv1.backward(x, &da1)?;
        dx.add_assign(&dsum)?;
        let mut grads = g_conv1;
        grads.extend(g_bn1);
        grads.extend(g_conv2);
        grads.extend(g_bn2);
        Ok((dx, grads))
    }
}

pub fn relu(x: &Tensor) -> Tensor {
    x.map(|v| v.max(0.0))
}

fn relu_backward(x: &Tensor, grad_out: &Tensor) -> Result<Tensor> {
    x.check_same_shape(grad_out)?;
    let data = x
        .data()
        .iter()
        .zip(grad_out.data())
        .map(|(&v, &g)| if v > 0.0 { g } else { 0.0 })
        .collect();
    Tensor::new(x.shape().to_vec(), data)
}

pub fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

/// A layer with its parameters.
#[derive(Clone, Debug)]
pub enum Layer {
    Conv2d(Conv2d),
    MaxPool2d { factor: usize },
    Upsample2d { factor: usize },
    Dense(Dense),
    BatchNorm(BatchNorm2d),
    Residual(ResidualBlock),
    Sigmoid,
    Relu,
    CropRows { rows: usize },
    Flatten,
    Reshape { shape: Vec<usize> },
}

impl Layer {
    pub fn from_spec(spec: &LayerSpec, rng: &mut impl Rng) -> Result<Layer> {
        spec.validate()?;
        Ok(match spec {
            LayerSpec::Conv2d { in_channels, out_channels, kernel } => {
                Layer::Conv2d(Conv2d::new(*in_channels, *out_channels, *kernel, rng)?)
            }
            LayerSpec::Maxpool2d { factor } => Layer::MaxPool2d { factor: *factor },
            LayerSpec::Upsample2dNearest { factor } => Layer::Upsample2d { factor: *factor },
            LayerSpec::Dense { inputs, units } => Layer::Dense(Dense::new(*inputs, *units, rng)?),
            LayerSpec::Batchnorm { channels } => Layer::BatchNorm(BatchNorm2d::new(*channels)?),
            LayerSpec::ResidualBlock { channels, kernel } => {
                Layer::Residual(ResidualBlock::new(*channels, *kernel, rng)?)
            }
            LayerSpec::Sigmoid => Layer::Sigmoid,
            LayerSpec::Relu => Layer::Relu,
            LayerSpec::CropRows { rows } => Layer::CropRows { rows: *rows },
            LayerSpec::Flatten => Layer::Flatten,
            LayerSpec::Reshape { shape } => Layer::Reshape { shape: shape.clone() },
            LayerSpec::LstmCell { .. } => {
                return Err(Error::InvalidParameter(
                    "lstm cells are recurrent; build them with LstmCell::new".into(),
                ))
            }
        })
    }

    pub fn spec(&self) -> LayerSpec {
        match self {
            Layer::Conv2d(c) => LayerSpec::Conv2d {
                in_channels: c.in_channels,
                out_channels: c.out_channels,
                kernel: c.kernel,
            },
            Layer::MaxPool2d { factor } => LayerSpec::Maxpool2d { factor: *factor },
            Layer::Upsample2d { factor } => LayerSpec::Upsample2dNearest { factor: *factor },
            Layer::Dense(d) => LayerSpec::Dense { inputs: d.inputs, units: d.units },
            Layer::BatchNorm(b) => LayerSpec::Batchnorm { channels: b.channels },
            Layer::Residual(r) => LayerSpec::ResidualBlock {
                channels: r.conv1.in_channels,
                kernel: r.conv1.kernel,
            },
            Layer::Sigmoid => LayerSpec::Sigmoid,
            Layer::Relu => LayerSpec::Relu,
            Layer::CropRows { rows } => LayerSpec::CropRows { rows: *rows },
            Layer::Flatten => LayerSpec::Flatten,
            Layer::Reshape { shape } => LayerSpec::Reshape { shape: shape.clone() },
        }
    }

    /// Shape algebra: output shape for a full (batched) input shape.
    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        let rank4 = || -> Result<()> {
            if input.len() == 4 {
                Ok(())
            } else {
                Err(Error::shape("[N, C, H, W]", format!("{input:?}")))
            }
        };
        match self {
            Layer::Conv2d(c) => c.output_shape(input),
            Layer::MaxPool2d { factor } => spatial::maxpool_shape(input, *factor),
            Layer::Upsample2d { factor } => spatial::upsample_shape(input, *factor),
            Layer::Dense(d) => d.output_shape(input),
            Layer::BatchNorm(b) => {
                rank4()?;
                if input[1] != b.channels {
                    return Err(Error::shape(format!("{} channels", b.channels), input[1]));
                }
                Ok(input.to_vec())
            }
            Layer::Residual(r) => r.conv1.output_shape(input),
            Layer::Sigmoid | Layer::Relu => Ok(input.to_vec()),
            Layer::CropRows { rows } => spatial::crop_shape(input, *rows),
            Layer::Flatten => {
                if input.is_empty() {
                    return Err(Error::shape("[N, ...]", "[]"));
                }
                Ok(vec![input[0], input[1..].iter().product()])
            }
            Layer::Reshape { shape } => {
                let have: usize = input.iter().skip(1).product();
                let want: usize = shape.iter().product();
                if input.is_empty() || have != want {
                    return Err(Error::shape(format!("[N, {shape:?}]"), format!("{input:?}")));
                }
                let mut out = vec![input[0]];
                out.extend_from_slice(shape);
                Ok(out)
            }
        }
    }

    pub fn forward(&self, x: &Tensor, mode: Mode) -> Result<Tensor> {
        match self {
            Layer::Conv2d(c) => c.forward(x),
            Layer::MaxPool2d { factor } => spatial::maxpool_forward(x, *factor),
            Layer::Upsample2d { factor } => spatial::upsample_forward(x, *factor),
            Layer::Dense(d) => d.forward(x),
            Layer::BatchNorm(b) => b.forward(x, mode),
            Layer::Residual(r) => r.forward(x, mode),
            Layer::Sigmoid => Ok(x.map(sigmoid)),
            Layer::Relu => Ok(relu(x)),
            Layer::CropRows { rows } => spatial::crop_forward(x, *rows),
            Layer::Flatten | Layer::Reshape { .. } => {
                let shape = self.output_shape(x.shape())?;
                x.clone().reshape(shape)
            }
        }
    }

    /// Training-mode forward; batch-norm layers update their running statistics.
    pub fn forward_train(&mut self, x: &Tensor) -> Result<Tensor> {
        match self {
            Layer::BatchNorm(b) => b.forward_train(x),
            Layer::Residual(r) => r.forward_train(x),
            other => other.forward(x, Mode::Train),
        }
    }

    /// Returns `(input_gradient, parameter_gradients)` with parameter
    /// gradients ordered like [`Layer::params`].
    pub fn backward(&self, x: &Tensor, grad_out: &Tensor, mode: Mode) -> Result<(Tensor, Vec<Tensor>)> {
        let expect = self.output_shape(x.shape())?;
        if grad_out.shape() != expect.as_slice() {
            return Err(Error::shape(format!("{expect:?}"), format!("{:?}", grad_out.shape())));
        }
        match self {
            Layer::Conv2d(c) => c.backward(x, grad_out),
            Layer::Dense(d) => d.backward(x, grad_out),
            Layer::BatchNorm(b) => b.backward(x, grad_out, mode),
            Layer::Residual(r) => r.backward(x, grad_out, mode),
            Layer::MaxPool2d { factor } => Ok((spatial::maxpool_backward(x, grad_out, *factor)?, vec![])),
            Layer::Upsample2d { factor } => Ok((spatial::upsample_backward(x, grad_out, *factor)?, vec![])),
            Layer::CropRows { rows } => Ok((spatial::crop_backward(x, grad_out, *rows)?, vec![])),
            Layer::Relu => Ok((relu_backward(x, grad_out)?, vec![])),
            Layer::Sigmoid => {
                let data = x
                    .data()
                    .iter()
                    .zip(grad_out.data())
                    .map(|(&v, &g)| {
                        let s = sigmoid(v);
                        g * s * (1.0 - s)
                    })
                    .collect();
                Ok((Tensor::new(x.shape().to_vec(), data)?, vec![]))
            }
            Layer::Flatten | Layer::Reshape { .. } => {
                Ok((grad_out.clone().reshape(x.shape().to_vec())?, vec![]))
            }
        }
    }

    /// Trainable parameters in declaration order.
    pub fn params(&self) -> Vec<&Tensor> {
        match self {
            Layer::Conv2d(c) => vec![&c.weight, &c.bias],
            Layer::Dense(d) => vec![&d.weight, &d.bias],
            Layer::BatchNorm(b) => vec![&b.gamma, &b.beta],
            Layer::Residual(r) => vec![
                &r.conv1.weight,
                &r.conv1.bias,
                &r.bn1.gamma,
                &r.bn1.beta,
                &r.conv2.weight,
                &r.conv2.bias,
                &r.bn2.gamma,
                &r.bn2.beta,
            ],
            _ => vec![],
        }
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        match self {
            Layer::Conv2d(c) => vec![&mut c.weight, &mut c.bias],
            Layer::Dense(d) => vec![&mut d.weight, &mut d.bias],
            Layer::BatchNorm(b) => vec![&mut b.gamma, &mut b.beta],
            Layer::Residual(r) => vec![
                &mut r.conv1.weight,
                &mut r.conv1.bias,
                &mut r.bn1.gamma,
                &mut r.bn1.beta,
                &mut r.conv2.weight,
                &mut r.conv2.bias,
                &mut r.bn2.gamma,
                &mut r.bn2.beta,
            ],
            _ => vec![],
        }
    }

    /// Non-trainable persistent state (batch-norm running statistics).
    pub fn buffers(&self) -> Vec<&Tensor> {
        match self {
            Layer::BatchNorm(b) => vec![&b.running_mean, &b.running_var],
            Layer::Residual(r) => vec![
                &r.bn1.running_mean,
                &r.bn1.running_var,
                &r.bn2.running_mean,
                &r.bn2.running_var,
            ],
            _ => vec![],
        }
    }

    pub fn buffers_mut(&mut self) -> Vec<&mut Tensor> {
        match self {
            Layer::BatchNorm(b) => vec![&mut b.running_mean, &mut b.running_var],
            Layer::Residual(r) => vec![
                &mut r.bn1.running_mean,
                &mut r.bn1.running_var,
                &mut r.bn2.running_mean,
                &mut r.bn2.running_var,
            ],
            _ => vec![],
        }
    }
}

/// Feed-forward stack of layers.
#[derive(Clone, Debug, Default)]
pub struct Sequential {
    layers: Vec<Layer>,
}

/// Inputs of every layer from a training forward pass, consumed by backward.
pub struct Activations(Vec<Tensor>);

impl Sequential {
    pub fn new(layers: Vec<Layer>) -> Self {
        Sequential { layers }
    }

    pub fn from_specs(specs: &[LayerSpec], rng: &mut impl Rng) -> Result<Self> {
        let layers = specs.iter().map(|s| Layer::from_spec(s, rng)).collect::<Result<_>>()?;
        Ok(Sequential { layers })
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn specs(&self) -> Vec<LayerSpec> {
        self.layers.iter().map(Layer::spec).collect()
    }

    /// Shapes after every layer, starting with `input`.
    pub fn shape_trace(&self, input: &[usize]) -> Result<Vec<Vec<usize>>> {
        let mut shapes = vec![input.to_vec()];
        for layer in &self.layers {
            let next = layer.output_shape(shapes.last().expect("non-empty"))?;
            shapes.push(next);
        }
        Ok(shapes)
    }

    pub fn forward(&self, x: &Tensor, mode: Mode) -> Result<Tensor> {
        let mut cur = x.clone();
        for layer in &self.layers {
            cur = layer.forward(&cur, mode)?;
        }
        Ok(cur)
    }

    pub fn forward_train(&mut self, x: &Tensor) -> Result<(Tensor, Activations)> {
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut cur = x.clone();
        for layer in &mut self.layers {
            let next = layer.forward_train(&cur)?;
            inputs.push(std::mem::replace(&mut cur, next));
        }
        Ok((cur, Activations(inputs)))
    }

    /// Backpropagates through the stack; parameter gradients come back in
    /// [`Sequential::params`] order.
    pub fn backward(&self, acts: Activations, grad_out: &Tensor) -> Result<(Tensor, Vec<Tensor>)> {
        let (dx, grads) = self.backward_through(acts, self.layers.len(), grad_out, true)?;
        Ok((dx.expect("input gradient requested"), grads))
    }

    /// Backward for a stack ending in a sigmoid, given the gradient with
    /// respect to the sigmoid's input (e.g. [`crate::nn::bce_logit_grad`]).
    pub fn backward_logits(&self, acts: Activations, dlogit: &Tensor) -> Result<(Tensor, Vec<Tensor>)> {
        let (dx, grads) = self.backward_through(acts, self.logit_end()?, dlogit, true)?;
        Ok((dx.expect("input gradient requested"), grads))
    }

    /// Parameter gradients only; skips the input gradient of the first layer.
    pub fn backward_params(&self, acts: Activations, grad_out: &Tensor) -> Result<Vec<Tensor>> {
        Ok(self.backward_through(acts, self.layers.len(), grad_out, false)?.1)
    }

    /// [`Sequential::backward_logits`] without the input gradient.
    pub fn backward_logits_params(&self, acts: Activations, dlogit: &Tensor) -> Result<Vec<Tensor>> {
        Ok(self.backward_through(acts, self.logit_end()?, dlogit, false)?.1)
    }

    fn logit_end(&self) -> Result<usize> {
        match self.layers.last() {
            Some(Layer::Sigmoid) => Ok(self.layers.len() - 1),
            _ => Err(Error::InvalidParameter("stack does not end in a sigmoid".into())),
        }
    }

    fn backward_through(
        &self,
        mut acts: Activations,
        end: usize,
        grad_out: &Tensor,
        need_input_grad: bool,
    ) -> Result<(Option<Tensor>, Vec<Tensor>)> {
        if acts.0.len() != self.layers.len() {
            return Err(Error::InvalidParameter("activation trace does not match the stack".into()));
        }
        acts.0.truncate(end);
        let mut grad = grad_out.clone();
        let mut per_layer = Vec::with_capacity(self.layers.len());
        for (i, (layer, input)) in self.layers[..end].iter().zip(acts.0).enumerate().rev() {
            if i == 0 && !need_input_grad {
                if let Layer::Conv2d(c) = layer {
                    let (_, g) = c.backward_opt(&input, &grad, false)?;
                    per_layer.push(g);
                    let grads = per_layer.into_iter().rev().flatten().collect();
                    return Ok((None, grads));
                }
            }
            let (dx, g) = layer.backward(&input, &grad, Mode::Train)?;
            drop(input);
            per_layer.push(g);
            grad = dx;
        }
        let grads = per_layer.into_iter().rev().flatten().collect();
        Ok((need_input_grad.then_some(grad), grads))
    }

    pub fn params(&self) -> Vec<&Tensor> {
        self.layers.iter().flat_map(Layer::params).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        self.layers.iter_mut().flat_map(Layer::params_mut).collect()
    }

    pub fn buffers(&self) -> Vec<&Tensor> {
        self.layers.iter().flat_map(Layer::buffers).collect()
    }

    pub fn buffers_mut(&mut self) -> Vec<&mut Tensor> {
        self.layers.iter_mut().flat_map(Layer::buffers_mut).collect()
    }

    /// Parameters followed by buffers: everything a checkpoint must hold.
    pub fn state(&self) -> Vec<&Tensor> {
        let mut all = self.params();
        all.extend(self.buffers());
        all
    }

    /// Inverse of [`Sequential::state`], checking count and shapes.
    pub fn load_state(&mut self, tensors: &[Tensor]) -> Result<()> {
        let n_params = self.params().len();
        let expected = n_params + self.buffers().len();
        if tensors.len() != expected {
            return Err(Error::InvalidCheckpoint(format!("expected {expected} tensors, found {}", tensors.len())));
        }
        let copy = |dst: Vec<&mut Tensor>, src: &[Tensor]| -> Result<()> {
            for (d, s) in dst.into_iter().zip(src) {
                if d.shape() != s.shape() {
                    return Err(Error::InvalidCheckpoint(format!(
                        "tensor shape {:?} does not match model {:?}",
                        s.shape(),
                        d.shape()
                    )));
                }
                d.data_mut().copy_from_slice(s.data());
            }
            Ok(())
        };
        copy(self.params_mut(), &tensors[..n_params])?;
        copy(self.buffers_mut(), &tensors[n_params..])
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|t| t.len()).sum()
    }
}
