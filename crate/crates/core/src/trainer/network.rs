use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::ops::{self, ConvGeom};
use crate::error::{Error, Result};
use crate::pruning::PruneMask;
use crate::tensor::{Shape, Tensor};

/// Activation shape `(height, width, channels)`, stored channel-last.
pub type ActShape = (usize, usize, usize);

fn numel((h, w, c): ActShape) -> usize {
    h * w * c
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerSpec {
    Conv2d {
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
    },
    FullyConnected {
        in_features: usize,
        out_features: usize,
    },
    Relu,
    MaxPool {
        size: usize,
        stride: usize,
    },
    GlobalAvgPool,
    Flatten,
    /// Adds activation `from` (0 is the network input, `i + 1` the output of
    /// layer `i`) to this layer's input.
    ResidualAdd {
        from: usize,
    },
}

impl LayerSpec {
    pub fn conv(in_channels: usize, out_channels: usize, kernel: usize, stride: usize, padding: usize) -> Self {
        Self::Conv2d {
            in_channels,
            out_channels,
            kernel,
            stride,
            padding,
        }
    }

    pub fn fc(in_features: usize, out_features: usize) -> Self {
        Self::FullyConnected {
            in_features,
            out_features,
        }
    }

    pub fn has_weights(&self) -> bool {
        matches!(self, Self::Conv2d { .. } | Self::FullyConnected { .. })
    }

    /// Weight tensor dims `(out, kh, kw, in)`; fully-connected uses a 1x1 kernel.
    pub fn weight_dims(&self) -> Option<[usize; 4]> {
        match *self {
            Self::Conv2d {
                in_channels,
                out_channels,
                kernel,
                ..
            } => Some([out_channels, kernel, kernel, in_channels]),
            Self::FullyConnected {
                in_features,
                out_features,
            } => Some([out_features, 1, 1, in_features]),
            _ => None,
        }
    }

    fn output_shape(&self, input: ActShape, earlier: &[ActShape]) -> Result<ActShape> {
        let (h, w, c) = input;
        let mismatch = |what: String| Err(Error::ShapeMismatch(what));
        match *self {
            Self::Conv2d {
                in_channels,
                out_channels,
                kernel,
                stride,
                padding,
            } => {
                if c != in_channels || kernel == 0 || stride == 0 || out_channels == 0 {
                    return mismatch(format!("conv expects {in_channels} channels, got {input:?}"));
                }
                if h + 2 * padding < kernel || w + 2 * padding < kernel {
                    return mismatch(format!("kernel {kernel} larger than padded input {input:?}"));
                }
                Ok((
                    (h + 2 * padding - kernel) / stride + 1,
                    (w + 2 * padding - kernel) / stride + 1,
                    out_channels,
                ))
            }
            Self::FullyConnected {
                in_features,
                out_features,
            } => {
                if numel(input) != in_features || out_features == 0 {
                    return mismatch(format!("fully-connected expects {in_features} inputs, got {input:?}"));
                }
                Ok((1, 1, out_features))
            }
            Self::Relu => Ok(input),
            Self::MaxPool { size, stride } => {
                if size == 0 || stride == 0 || h < size || w < size {
                    return mismatch(format!("pool {size}/{stride} does not fit {input:?}"));
                }
                Ok(((h - size) / stride + 1, (w - size) / stride + 1, c))
            }
            Self::GlobalAvgPool => Ok((1, 1, c)),
            Self::Flatten => Ok((1, 1, numel(input))),
            Self::ResidualAdd { from } => match earlier.get(from) {
                Some(&s) if s == input => Ok(input),
                other => mismatch(format!("residual source {from} has shape {other:?}, input {input:?}")),
            },
        }
    }

    fn conv_geom(&self, input: ActShape, output: ActShape) -> Option<ConvGeom> {
        match *self {
            Self::Conv2d {
                kernel,
                stride,
                padding,
                ..
            } => Some(ConvGeom {
                in_h: input.0,
                in_w: input.1,
                in_c: input.2,
                kernel,
                stride,
                padding,
                out_h: output.0,
                out_w: output.1,
            }),
            Self::FullyConnected { in_features, .. } => Some(ConvGeom {
                in_h: 1,
                in_w: 1,
                in_c: in_features,
                kernel: 1,
                stride: 1,
                padding: 0,
                out_h: 1,
                out_w: 1,
            }),
            _ => None,
        }
    }
}

/// Weights, biases and the pruning mask of one weighted layer.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams {
    weight: Tensor,
    bias: Tensor,
    mask: PruneMask,
}

impl LayerParams {
    fn zeros(dims: [usize; 4]) -> Self {
        let weight = Tensor::zeros(Shape::new(&dims).expect("validated dims"));
        let bias = Tensor::zeros(Shape::new(&[dims[0]]).expect("validated dims"));
        let mask = PruneMask::all_keep(weight.len());
        Self { weight, bias, mask }
    }

    pub fn weight(&self) -> &Tensor {
        &self.weight
    }

    pub fn bias(&self) -> &Tensor {
        &self.bias
    }

    pub fn mask(&self) -> &PruneMask {
        &self.mask
    }

    pub fn weight_mut(&mut self) -> &mut [f32] {
        self.weight.data_mut()
    }

    pub fn bias_mut(&mut self) -> &mut [f32] {
        self.bias.data_mut()
    }

    /// Install `mask` and zero the weights it prunes.
    pub fn set_mask(&mut self, mask: PruneMask) -> Result<()> {
        if mask.len() != self.weight.len() {
            return Err(Error::LengthMismatch {
                expected: self.weight.len(),
                data: mask.len(),
            });
        }
        mask.apply_in_place(self.weight.data_mut());
        self.mask = mask;
        Ok(())
    }
}

/// Per-channel input standardization applied before the first layer.
#[derive(Debug, Clone, PartialEq)]
pub struct Normalization {
    pub mean: Vec<f32>,
    pub std: Vec<f32>,
}

impl Normalization {
    pub fn identity(channels: usize) -> Self {
        Self {
            mean: vec![0.0; channels],
            std: vec![1.0; channels],
        }
    }
}

/// Cached intermediates of one forward pass, consumed by `backward_sample`.
#[derive(Debug, Clone)]
pub struct Trace {
    pub acts: Vec<Vec<f32>>,
    cols: Vec<Vec<f32>>,
    argmax: Vec<Vec<u32>>,
}

impl Trace {
    pub fn logits(&self) -> &[f32] {
        self.acts.last().expect("trace has the input activation")
    }
}

/// Gradients for every weighted layer; empty vectors elsewhere.
#[derive(Debug, Clone, PartialEq)]
pub struct Grads {
    pub weight: Vec<Vec<f32>>,
    pub bias: Vec<Vec<f32>>,
}

impl Grads {
    pub fn zeros_like(net: &Network) -> Self {
        let weight = net
            .params
            .iter()
            .map(|p| p.as_ref().map_or_else(Vec::new, |p| vec![0.0; p.weight.len()]))
            .collect();
        let bias = net
            .params
            .iter()
            .map(|p| p.as_ref().map_or_else(Vec::new, |p| vec![0.0; p.bias.len()]))
            .collect();
        Self { weight, bias }
    }

    pub fn add_assign(&mut self, other: &Grads) {
        for (a, b) in self.weight.iter_mut().zip(&other.weight) {
            a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
        }
        for (a, b) in self.bias.iter_mut().zip(&other.bias) {
            a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
        }
    }

    pub fn scale(&mut self, s: f32) {
        for v in self.weight.iter_mut().chain(self.bias.iter_mut()) {
            v.iter_mut().for_each(|x| *x *= s);
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    input: ActShape,
    layers: Vec<LayerSpec>,
    shapes: Vec<ActShape>,
    params: Vec<Option<LayerParams>>,
    normalization: Normalization,
}

impl Network {
    /// Build a network with zeroed parameters, validating that layer shapes compose.
    pub fn new(input: ActShape, layers: Vec<LayerSpec>) -> Result<Self> {
        if numel(input) == 0 {
            return Err(Error::ShapeMismatch(format!("empty input shape {input:?}")));
        }
        let mut shapes = vec![input];
        for layer in &layers {
            let next = layer.output_shape(*shapes.last().expect("non-empty"), &shapes)?;
            shapes.push(next);
        }
        let params = layers
            .iter()
            .map(|l| l.weight_dims().map(LayerParams::zeros))
            .collect();
        Ok(Self {
            input,
            layers,
            shapes,
            params,
            normalization: Normalization::identity(input.2),
        })
    }

    /// The desk-scale classifier: three 3x3 conv blocks and a linear head.
    pub fn toy(input: ActShape, classes: usize) -> Result<Self> {
        let c = input.2;
        Self::new(
            input,
            vec![
                LayerSpec::conv(c, 16, 3, 1, 1),
                LayerSpec::Relu,
                LayerSpec::MaxPool { size: 2, stride: 2 },
                LayerSpec::conv(16, 32, 3, 1, 1),
                LayerSpec::Relu,
                LayerSpec::MaxPool { size: 2, stride: 2 },
                LayerSpec::conv(32, 96, 3, 1, 1),
                LayerSpec::Relu,
                LayerSpec::GlobalAvgPool,
                LayerSpec::Flatten,
                LayerSpec::fc(96, classes),
            ],
        )
    }

    /// He-normal weights, zero biases, all-keep masks.
    pub fn init_he<R: Rng>(&mut self, rng: &mut R) {
        for p in self.params.iter_mut().flatten() {
            let dims = p.weight.shape().dims().to_vec();
            let fan_in = (dims[1] * dims[2] * dims[3]) as f32;
            let normal = Normal::new(0.0, (2.0 / fan_in).sqrt()).expect("positive std");
            for w in p.weight.data_mut() {
                *w = normal.sample(rng);
            }
            p.bias.data_mut().iter_mut().for_each(|b| *b = 0.0);
            p.mask = PruneMask::all_keep(p.weight.len());
        }
    }

    pub fn input_shape(&self) -> ActShape {
        self.input
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    /// Activation shapes: index 0 is the input, `i + 1` the output of layer `i`.
    pub fn shapes(&self) -> &[ActShape] {
        &self.shapes
    }

    pub fn output_len(&self) -> usize {
        numel(*self.shapes.last().expect("non-empty"))
    }

    pub fn params(&self, layer: usize) -> Option<&LayerParams> {
        self.params.get(layer).and_then(Option::as_ref)
    }

    pub fn params_mut(&mut self, layer: usize) -> Option<&mut LayerParams> {
        self.params.get_mut(layer).and_then(Option::as_mut)
    }

    /// Indices of layers carrying weights, in order.
    pub fn weighted_layers(&self) -> Vec<usize> {
        (0..self.layers.len()).filter(|&i| self.params[i].is_some()).collect()
    }

    pub fn normalization(&self) -> &Normalization {
        &self.normalization
    }

    pub fn set_normalization(&mut self, norm: Normalization) -> Result<()> {
        if norm.mean.len() != self.input.2 || norm.std.len() != self.input.2 {
            return Err(Error::ShapeMismatch("normalization channel count".into()));
        }
        self.normalization = norm;
        Ok(())
    }

    pub fn weight_count(&self) -> usize {
        self.params.iter().flatten().map(|p| p.weight.len()).sum()
    }

    pub fn parameter_count(&self) -> usize {
        self.params
            .iter()
            .flatten()
            .map(|p| p.weight.len() + p.bias.len())
            .sum()
    }

    /// Pruned fraction over all weights, weighting each layer by its size.
    pub fn sparsity(&self) -> f64 {
        let total = self.weight_count();
        if total == 0 {
            return 0.0;
        }
        let pruned: usize = self.params.iter().flatten().map(|p| p.mask.pruned_count()).sum();
        pruned as f64 / total as f64
    }

    /// 32-bit float bytes of all weights and biases.
    pub fn float_bytes(&self) -> usize {
        self.parameter_count() * std::mem::size_of::<f32>()
    }

    /// Float forward pass returning every activation (input first, logits last).
    pub fn forward_sample(&self, x: &[f32]) -> Result<Vec<Vec<f32>>> {
        Ok(self.trace(x)?.acts)
    }

    pub fn logits(&self, x: &[f32]) -> Result<Vec<f32>> {
        let mut acts = self.forward_sample(x)?;
        Ok(acts.pop().expect("non-empty"))
    }

    pub fn trace(&self, x: &[f32]) -> Result<Trace> {
        if x.len() != numel(self.input) {
            return Err(Error::ShapeMismatch(format!(
                "input of {} values, expected {:?}",
                x.len(),
                self.input
            )));
        }
        let n = self.layers.len();
        let mut acts: Vec<Vec<f32>> = Vec::with_capacity(n + 1);
        let mut cols = vec![Vec::new(); n];
        let mut argmax = vec![Vec::new(); n];
        acts.push(x.to_vec());
        for (i, layer) in self.layers.iter().enumerate() {
            let input = &acts[i];
            let in_shape = self.shapes[i];
            let out_shape = self.shapes[i + 1];
            let out = match *layer {
                LayerSpec::Conv2d { .. } | LayerSpec::FullyConnected { .. } => {
                    let g = layer.conv_geom(in_shape, out_shape).expect("weighted layer");
                    let p = self.params[i].as_ref().expect("weighted layer has params");
                    let mut out = Vec::new();
                    if matches!(layer, LayerSpec::Conv2d { .. }) {
                        ops::im2col(input, &g, &mut cols[i]);
                        ops::dense_forward(&cols[i], g.positions(), g.patch_len(), p.weight.data(), p.bias.data(), &mut out);
                    } else {
                        ops::dense_forward(input, 1, g.patch_len(), p.weight.data(), p.bias.data(), &mut out);
                    }
                    out
                }
                LayerSpec::Relu => input.iter().map(|&v| v.max(0.0)).collect(),
                LayerSpec::MaxPool { size, stride } => {
                    let (out, arg) = ops::max_pool(input, in_shape, size, stride);
                    argmax[i] = arg;
                    out
                }
                LayerSpec::GlobalAvgPool => ops::global_avg_pool(input, in_shape),
                LayerSpec::Flatten => input.clone(),
                LayerSpec::ResidualAdd { from } => input.iter().zip(&acts[from]).map(|(a, b)| a + b).collect(),
            };
            acts.push(out);
        }
        Ok(Trace { acts, cols, argmax })
    }

    /// Accumulate parameter gradients of a loss whose gradient w.r.t. the
    /// logits is `dlogits` into `grads`.
    pub fn backward_sample(&self, trace: &Trace, dlogits: &[f32], grads: &mut Grads) {
        let n = self.layers.len();
        let mut dacts: Vec<Option<Vec<f32>>> = vec![None; n + 1];
        dacts[n] = Some(dlogits.to_vec());
        let accumulate = |slot: &mut Option<Vec<f32>>, g: Vec<f32>| match slot {
            Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += b),
            None => *slot = Some(g),
        };
        for i in (0..n).rev() {
            let Some(dy) = dacts[i + 1].take() else {
                continue;
            };
            // the network input never needs a gradient
            let need_dx = i > 0;
            let in_shape = self.shapes[i];
            let out_shape = self.shapes[i + 1];
            let input = &trace.acts[i];
            let dx: Option<Vec<f32>> = match self.layers[i] {
                layer @ (LayerSpec::Conv2d { .. } | LayerSpec::FullyConnected { .. }) => {
                    let g = layer.conv_geom(in_shape, out_shape).expect("weighted layer");
                    let p = self.params[i].as_ref().expect("weighted layer has params");
                    let is_conv = matches!(layer, LayerSpec::Conv2d { .. });
                    let cols: &[f32] = if is_conv { &trace.cols[i] } else { input };
                    let dcols = ops::dense_backward(
                        &dy,
                        cols,
                        g.positions(),
                        g.patch_len(),
                        p.weight.data(),
                        &mut grads.weight[i],
                        &mut grads.bias[i],
                        need_dx,
                    );
                    dcols.map(|dc| {
                        if is_conv {
                            let mut dx = vec![0.0; input.len()];
                            ops::col2im_add(&dc, &g, &mut dx);
                            dx
                        } else {
                            dc
                        }
                    })
                }
                LayerSpec::Relu => Some(
                    dy.iter()
                        .zip(input)
                        .map(|(&g, &x)| if x > 0.0 { g } else { 0.0 })
                        .collect(),
                ),
                LayerSpec::MaxPool { .. } => {
                    let mut dx = vec![0.0; input.len()];
                    for (&g, &a) in dy.iter().zip(&trace.argmax[i]) {
                        dx[a as usize] += g;
                    }
                    Some(dx)
                }
                LayerSpec::GlobalAvgPool => {
                    let c = in_shape.2;
                    let inv = 1.0 / (in_shape.0 * in_shape.1) as f32;
                    Some((0..input.len()).map(|j| dy[j % c] * inv).collect())
                }
                LayerSpec::Flatten => Some(dy),
                LayerSpec::ResidualAdd { from } => {
                    if from > 0 {
                        accumulate(&mut dacts[from], dy.clone());
                    }
                    Some(dy)
                }
            };
            if let Some(dx) = dx {
                accumulate(&mut dacts[i], dx);
            }
        }
    }

}
