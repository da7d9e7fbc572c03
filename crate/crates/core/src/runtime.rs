//! Integer-only inference over a model container.
//!
//! Layers run in order. Each weighted layer's bias block and then its weight
//! block are decoded into one shared scratch buffer sized to the largest
//! block, the kernel runs, and the buffer is handed to the next layer.

use std::io::Write;
use std::time::{Duration, Instant};

use crate::codec::container::{LayerKind, ModelContainer};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::export::{topology, Topology};
use crate::quantize::{quantize_slice, QuantParams, QuantTensor};
use crate::tensor::Shape;
use crate::trainer::{argmax, ActShape, LayerSpec};

/// Rounding arithmetic right shift, halves away from zero.
#[inline]
pub fn round_shift(acc: i64, shift: u32) -> i64 {
    if shift == 0 {
        return acc;
    }
    let half = 1i64 << (shift - 1);
    if acc >= 0 {
        (acc + half) >> shift
    } else {
        -((-acc + half) >> shift)
    }
}

#[inline]
pub fn saturate_i8(v: i64) -> i8 {
    v.clamp(-128, 127) as i8
}

/// Binary points of one weighted layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FixedPointContext {
    pub input_frac: i32,
    pub weight_frac: i32,
    pub bias_frac: i32,
    pub output_frac: i32,
}

impl FixedPointContext {
    /// Right shift taking the `w_frac + in_frac` accumulator to the output binary point.
    pub fn output_shift(&self) -> Result<u32> {
        let s = self.weight_frac + self.input_frac - self.output_frac;
        u32::try_from(s)
            .ok()
            .filter(|&s| s < 63)
            .ok_or_else(|| Error::Export(format!("negative or oversized requantization shift {s}")))
    }

    /// Left shift aligning the bias with the accumulator.
    pub fn bias_shift(&self) -> Result<u32> {
        let s = self.weight_frac + self.input_frac - self.bias_frac;
        u32::try_from(s)
            .ok()
            .filter(|&s| s <= 16)
            .ok_or_else(|| Error::Export(format!("bias shift {s} outside [0, 16]")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeometry {
    pub in_h: usize,
    pub in_w: usize,
    pub in_c: usize,
    pub out_c: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
}

impl ConvGeometry {
    pub fn out_hw(&self) -> (usize, usize) {
        (
            (self.in_h + 2 * self.padding - self.kernel) / self.stride + 1,
            (self.in_w + 2 * self.padding - self.kernel) / self.stride + 1,
        )
    }

    pub fn macs(&self) -> u64 {
        let (oh, ow) = self.out_hw();
        (oh * ow * self.out_c * self.kernel * self.kernel * self.in_c) as u64
    }
}

/// Widen biases into accumulator units.
pub fn bias_to_acc(bias: &[i8], ctx: &FixedPointContext, out: &mut Vec<i32>) -> Result<()> {
    let shift = ctx.bias_shift()?;
    out.clear();
    out.extend(bias.iter().map(|&b| i32::from(b) << shift));
    Ok(())
}

/// 8-bit convolution over a channel-last input with `(out, kh, kw, in)` weights.
/// `bias_acc` holds biases already shifted into accumulator units.
pub fn conv2d_q8(
    input: &[i8],
    g: &ConvGeometry,
    weights: &[i8],
    bias_acc: &[i32],
    out_shift: u32,
) -> Result<Vec<i8>> {
    let patch = g.kernel * g.kernel * g.in_c;
    if input.len() != g.in_h * g.in_w * g.in_c || weights.len() != g.out_c * patch || bias_acc.len() != g.out_c {
        return Err(Error::ShapeMismatch("conv2d_q8 operand sizes".into()));
    }
    let (oh, ow) = g.out_hw();
    let mut out = vec![0i8; oh * ow * g.out_c];
    for oy in 0..oh {
        for ox in 0..ow {
            let base = (oy * ow + ox) * g.out_c;
            for o in 0..g.out_c {
                let mut acc: i32 = bias_acc[o];
                for ky in 0..g.kernel {
                    let iy = (oy * g.stride + ky) as isize - g.padding as isize;
                    if iy < 0 || iy >= g.in_h as isize {
                        continue;
                    }
                    for kx in 0..g.kernel {
                        let ix = (ox * g.stride + kx) as isize - g.padding as isize;
                        if ix < 0 || ix >= g.in_w as isize {
                            continue;
                        }
                        let src = &input[(iy as usize * g.in_w + ix as usize) * g.in_c..][..g.in_c];
                        let w = &weights[o * patch + (ky * g.kernel + kx) * g.in_c..][..g.in_c];
                        acc += src
                            .iter()
                            .zip(w)
                            .map(|(&a, &b)| i32::from(a) * i32::from(b))
                            .sum::<i32>();
                    }
                }
                out[base + o] = saturate_i8(round_shift(i64::from(acc), out_shift));
            }
        }
    }
    Ok(out)
}

/// Fully-connected layer: a 1x1 convolution over the flattened input.
pub fn fc_q8(input: &[i8], weights: &[i8], bias_acc: &[i32], out_shift: u32) -> Result<Vec<i8>> {
    let g = ConvGeometry {
        in_h: 1,
        in_w: 1,
        in_c: input.len(),
        out_c: bias_acc.len(),
        kernel: 1,
        stride: 1,
        padding: 0,
    };
    conv2d_q8(input, &g, weights, bias_acc, out_shift)
}

pub fn relu_q8(x: &[i8]) -> Vec<i8> {
    x.iter().map(|&v| v.max(0)).collect()
}

pub fn max_pool_q8(x: &[i8], (h, w, c): ActShape, size: usize, stride: usize) -> Vec<i8> {
    let oh = (h - size) / stride + 1;
    let ow = (w - size) / stride + 1;
    let mut out = vec![i8::MIN; oh * ow * c];
    for oy in 0..oh {
        for ox in 0..ow {
            let o = &mut out[(oy * ow + ox) * c..][..c];
            for ky in 0..size {
                for kx in 0..size {
                    let i = &x[((oy * stride + ky) * w + ox * stride + kx) * c..][..c];
                    o.iter_mut().zip(i).for_each(|(a, &b)| *a = (*a).max(b));
                }
            }
        }
    }
    out
}

/// Channel means with round-half-away-from-zero division.
pub fn global_avg_pool_q8(x: &[i8], (h, w, c): ActShape) -> Vec<i8> {
    let n = (h * w) as i64;
    let mut sums = vec![0i64; c];
    for px in x.chunks_exact(c) {
        sums.iter_mut().zip(px).for_each(|(s, &v)| *s += i64::from(v));
    }
    sums.iter()
        .map(|&s| {
            let q = (s.abs() * 2 + n) / (2 * n);
            saturate_i8(if s < 0 { -q } else { q })
        })
        .collect()
}

/// Move values from binary point `from` to `to`.
pub fn rescale_q8(x: &[i8], from: i32, to: i32) -> Vec<i8> {
    if to <= from {
        let shift = (from - to) as u32;
        x.iter().map(|&v| saturate_i8(round_shift(i64::from(v), shift))).collect()
    } else {
        let shift = (to - from) as u32;
        x.iter().map(|&v| saturate_i8(i64::from(v) << shift)).collect()
    }
}

/// Saturating elementwise add of operands sharing one binary point.
pub fn add_q8(a: &[i8], a_frac: i32, b: &[i8], b_frac: i32) -> Result<Vec<i8>> {
    if a_frac != b_frac {
        return Err(Error::Export(format!("add operands at binary points {a_frac} and {b_frac}")));
    }
    if a.len() != b.len() {
        return Err(Error::ShapeMismatch("add operand lengths".into()));
    }
    Ok(a.iter().zip(b).map(|(&x, &y)| x.saturating_add(y)).collect())
}

/// Buffer sizes needed to run a container.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ScratchPlan {
    /// Largest decoded parameter block; one buffer of this size serves every layer.
    pub weight_scratch_bytes: usize,
    /// Peak bytes of live activations (input, output and held residual sources).
    pub activation_bytes: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerStats {
    pub layer: usize,
    pub kind: LayerKind,
    pub compressed_bytes: usize,
    pub decoded_bytes: usize,
    pub macs: u64,
    pub decode_time: Duration,
    pub kernel_time: Duration,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct DecodeStats {
    pub layers: Vec<LayerStats>,
    /// Largest number of scratch bytes written by any single decode.
    pub peak_scratch_bytes: usize,
}

impl DecodeStats {
    pub fn total_decoded_bytes(&self) -> usize {
        self.layers.iter().map(|l| l.decoded_bytes).sum()
    }

    pub fn total_macs(&self) -> u64 {
        self.layers.iter().map(|l| l.macs).sum()
    }

    pub fn decode_time(&self) -> Duration {
        self.layers.iter().map(|l| l.decode_time).sum()
    }

    pub fn kernel_time(&self) -> Duration {
        self.layers.iter().map(|l| l.kernel_time).sum()
    }

    /// CSV inference report followed by scratch-plan summary rows.
    pub fn write_report<W: Write>(&self, plan: &ScratchPlan, mut w: W) -> std::io::Result<()> {
        writeln!(w, "layer,kind,compressed_bytes,decoded_bytes,macs,decode_us,kernel_us")?;
        for l in &self.layers {
            writeln!(
                w,
                "{},{},{},{},{},{:.1},{:.1}",
                l.layer,
                l.kind.name(),
                l.compressed_bytes,
                l.decoded_bytes,
                l.macs,
                l.decode_time.as_secs_f64() * 1e6,
                l.kernel_time.as_secs_f64() * 1e6
            )?;
        }
        writeln!(w, "# weight_scratch_bytes,{}", plan.weight_scratch_bytes)?;
        writeln!(w, "# activation_bytes,{}", plan.activation_bytes)?;
        writeln!(w, "# peak_scratch_bytes,{}", self.peak_scratch_bytes)?;
        writeln!(w, "# total_decoded_bytes,{}", self.total_decoded_bytes())?;
        writeln!(w, "# total_macs,{}", self.total_macs())?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy)]
enum Step {
    Weighted {
        weight_entry: usize,
        bias_entry: usize,
        ctx: FixedPointContext,
        conv: Option<ConvGeometry>,
    },
    Relu,
    MaxPool { size: usize, stride: usize },
    GlobalAvgPool,
    Flatten,
    Add { from: usize },
}

/// All parameter blocks decoded up front, as a reference path.
#[derive(Debug, Clone)]
pub struct DecodedModel {
    weights: Vec<Vec<i8>>,
    biases: Vec<Vec<i8>>,
}

pub struct Runtime<'a> {
    container: ModelContainer<'a>,
    topo: Topology,
    steps: Vec<Step>,
    shapes: Vec<ActShape>,
    fracs: Vec<i32>,
    last_use: Vec<usize>,
    plan: ScratchPlan,
    scratch: Vec<u8>,
    bias_acc: Vec<i32>,
}

impl<'a> Runtime<'a> {
    pub fn new(bytes: &'a [u8]) -> Result<Self> {
        let container = ModelContainer::parse(bytes)?;
        if container.entries().iter().any(|e| e.float_payload && e.kind != LayerKind::Input) {
            return Err(Error::InvalidContainer("float checkpoints cannot run on the fixed-point runtime".into()));
        }
        let topo = topology(&container)?;
        let entries = container.entries();
        let mut shapes = vec![topo.input];
        let mut fracs = vec![i32::from(entries[0].act_frac_bits)];
        let mut steps = Vec::with_capacity(topo.layers.len());
        for (i, layer) in topo.layers.iter().enumerate() {
            let e = entries[topo.entry_of_layer[i]];
            let in_shape = shapes[i];
            let in_f = fracs[i];
            let out_f = i32::from(e.act_frac_bits);
            let (step, out_shape) = match *layer {
                LayerSpec::Conv2d {
                    in_channels,
                    out_channels,
                    kernel,
                    stride,
                    padding,
                } => {
                    let g = ConvGeometry {
                        in_h: in_shape.0,
                        in_w: in_shape.1,
                        in_c: in_channels,
                        out_c: out_channels,
                        kernel,
                        stride,
                        padding,
                    };
                    if in_shape.2 != in_channels || in_shape.0 + 2 * padding < kernel || in_shape.1 + 2 * padding < kernel {
                        return Err(Error::InvalidContainer(format!("layer {i}: conv does not fit input {in_shape:?}")));
                    }
                    let (oh, ow) = g.out_hw();
                    (Self::weighted(&e, topo.entry_of_layer[i], in_f, Some(g))?, (oh, ow, out_channels))
                }
                LayerSpec::FullyConnected { in_features, out_features } => {
                    if in_shape.0 * in_shape.1 * in_shape.2 != in_features {
                        return Err(Error::InvalidContainer(format!("layer {i}: fully-connected input mismatch")));
                    }
                    (Self::weighted(&e, topo.entry_of_layer[i], in_f, None)?, (1, 1, out_features))
                }
                LayerSpec::Relu => (Step::Relu, in_shape),
                LayerSpec::MaxPool { size, stride } => {
                    if size == 0 || stride == 0 || in_shape.0 < size || in_shape.1 < size {
                        return Err(Error::InvalidContainer(format!("layer {i}: pool does not fit")));
                    }
                    (
                        Step::MaxPool { size, stride },
                        ((in_shape.0 - size) / stride + 1, (in_shape.1 - size) / stride + 1, in_shape.2),
                    )
                }
                LayerSpec::GlobalAvgPool => (Step::GlobalAvgPool, (1, 1, in_shape.2)),
                LayerSpec::Flatten => (Step::Flatten, (1, 1, in_shape.0 * in_shape.1 * in_shape.2)),
                LayerSpec::ResidualAdd { from } => {
                    if from > i || shapes[from] != in_shape {
                        return Err(Error::InvalidContainer(format!("layer {i}: bad residual source {from}")));
                    }
                    if out_f > in_f || out_f > fracs[from] {
                        return Err(Error::InvalidContainer(format!("layer {i}: add output finer than its inputs")));
                    }
                    (Step::Add { from }, in_shape)
                }
            };
            if !matches!(step, Step::Weighted { .. } | Step::Add { .. }) && out_f != in_f {
                return Err(Error::InvalidContainer(format!("layer {i}: binary point changes across {}", e.kind.name())));
            }
            steps.push(step);
            shapes.push(out_shape);
            fracs.push(out_f);
        }

        // activation j is last read by layer last_use[j]
        let mut last_use: Vec<usize> = (0..shapes.len()).collect();
        for (i, step) in steps.iter().enumerate() {
            if let Step::Add { from } = *step {
                last_use[from] = last_use[from].max(i);
            }
        }
        let size = |s: &ActShape| s.0 * s.1 * s.2;
        let activation_bytes = (0..steps.len())
            .map(|i| {
                let held: usize = (0..i).filter(|&j| last_use[j] >= i).map(|j| size(&shapes[j])).sum();
                size(&shapes[i]) + size(&shapes[i + 1]) + held
            })
            .max()
            .unwrap_or(0);
        let weight_scratch_bytes = container
            .entries()
            .iter()
            .filter(|e| e.kind.is_parameter_block())
            .map(|e| e.raw_len as usize)
            .max()
            .unwrap_or(0);
        let max_out = topo
            .layers
            .iter()
            .filter_map(|l| l.weight_dims().map(|d| d[0]))
            .max()
            .unwrap_or(0);
        Ok(Self {
            container,
            topo,
            steps,
            shapes,
            fracs,
            last_use,
            plan: ScratchPlan {
                weight_scratch_bytes,
                activation_bytes,
            },
            scratch: vec![0u8; weight_scratch_bytes],
            bias_acc: Vec::with_capacity(max_out),
        })
    }

    fn weighted(
        e: &crate::codec::container::LayerEntry,
        weight_entry: usize,
        in_f: i32,
        conv: Option<ConvGeometry>,
    ) -> Result<Step> {
        let ctx = FixedPointContext {
            input_frac: in_f,
            weight_frac: i32::from(e.weight_frac_bits),
            bias_frac: i32::from(e.bias_frac_bits),
            output_frac: i32::from(e.act_frac_bits),
        };
        ctx.output_shift()?;
        ctx.bias_shift()?;
        let macs_per_output: u64 = e.dims[1..].iter().map(|&d| u64::from(d)).product();
        if macs_per_output > crate::export::MAX_MACS_PER_OUTPUT as u64 {
            return Err(Error::InvalidContainer("kernel too large for a 32-bit accumulator".into()));
        }
        Ok(Step::Weighted {
            weight_entry,
            bias_entry: weight_entry + 1,
            ctx,
            conv,
        })
    }

    pub fn plan(&self) -> ScratchPlan {
        self.plan
    }

    pub fn container(&self) -> &ModelContainer<'a> {
        &self.container
    }

    pub fn topology(&self) -> &Topology {
        &self.topo
    }

    pub fn input_shape(&self) -> ActShape {
        self.shapes[0]
    }

    pub fn input_frac(&self) -> i32 {
        self.fracs[0]
    }

    pub fn output_frac(&self) -> i32 {
        *self.fracs.last().expect("non-empty")
    }

    /// Quantize an already normalized channel-last image at the input binary point.
    pub fn quantize_input(&self, normalized: &[f32]) -> Vec<i8> {
        quantize_slice(normalized, self.input_frac())
    }

    fn execute(&self, i: usize, acts: &[Option<Vec<i8>>], params: Option<(&[i8], &[i32])>) -> Result<(Vec<i8>, u64)> {
        let input = acts[i].as_deref().expect("input activation is live");
        let in_shape = self.shapes[i];
        Ok(match self.steps[i] {
            Step::Weighted { ctx, conv, .. } => {
                let (w, b) = params.expect("weighted layer has parameters");
                let shift = ctx.output_shift()?;
                match conv {
                    Some(g) => (conv2d_q8(input, &g, w, b, shift)?, g.macs()),
                    None => (fc_q8(input, w, b, shift)?, w.len() as u64),
                }
            }
            Step::Relu => (relu_q8(input), 0),
            Step::MaxPool { size, stride } => (max_pool_q8(input, in_shape, size, stride), 0),
            Step::GlobalAvgPool => (global_avg_pool_q8(input, in_shape), 0),
            Step::Flatten => (input.to_vec(), 0),
            Step::Add { from } => {
                let out_f = self.fracs[i + 1];
                let other = acts[from].as_deref().expect("residual source is held");
                let a = rescale_q8(input, self.fracs[i], out_f);
                let b = rescale_q8(other, self.fracs[from], out_f);
                (add_q8(&a, out_f, &b, out_f)?, 0)
            }
        })
    }

    fn check_input(&self, input: &[i8]) -> Result<()> {
        let (h, w, c) = self.shapes[0];
        if input.len() != h * w * c {
            return Err(Error::ShapeMismatch(format!(
                "input of {} values, container expects {:?}",
                input.len(),
                self.shapes[0]
            )));
        }
        Ok(())
    }

    fn release(&self, i: usize, acts: &mut [Option<Vec<i8>>]) {
        for (j, slot) in acts.iter_mut().enumerate().take(i + 1) {
            if self.last_use[j] <= i {
                *slot = None;
            }
        }
    }

    /// Run one inference, decoding each layer into the shared scratch buffer.
    pub fn run(&mut self, input: &[i8]) -> Result<(Vec<i8>, DecodeStats)> {
        self.check_input(input)?;
        let mut acts: Vec<Option<Vec<i8>>> = vec![None; self.shapes.len()];
        acts[0] = Some(input.to_vec());
        let mut stats = DecodeStats::default();
        let mut scratch = std::mem::take(&mut self.scratch);
        let mut bias_acc = std::mem::take(&mut self.bias_acc);
        let result = (|| -> Result<()> {
            for i in 0..self.steps.len() {
                let mut s = LayerStats {
                    layer: i,
                    kind: self.container.entry(self.topo.entry_of_layer[i])?.kind,
                    compressed_bytes: 0,
                    decoded_bytes: 0,
                    macs: 0,
                    decode_time: Duration::ZERO,
                    kernel_time: Duration::ZERO,
                };
                let (out, macs) = if let Step::Weighted {
                    weight_entry,
                    bias_entry,
                    ctx,
                    ..
                } = self.steps[i]
                {
                    let t0 = Instant::now();
                    let bias = self.container.unpack_layer(bias_entry, &mut scratch)?;
                    let bias_raw = bias.raw().len();
                    bias_to_acc(bias.qdata(), &ctx, &mut bias_acc)?;
                    let weights = self.container.unpack_layer(weight_entry, &mut scratch)?;
                    let weight_raw = weights.raw().len();
                    s.decode_time = t0.elapsed();
                    stats.peak_scratch_bytes = stats.peak_scratch_bytes.max(bias_raw).max(weight_raw);
                    assert!(
                        stats.peak_scratch_bytes <= self.plan.weight_scratch_bytes,
                        "scratch use exceeds plan"
                    );
                    s.decoded_bytes = bias_raw + weight_raw;
                    s.compressed_bytes = (self.container.entry(weight_entry)?.compressed_len
                        + self.container.entry(bias_entry)?.compressed_len) as usize;
                    let t1 = Instant::now();
                    let r = self.execute(i, &acts, Some((weights.qdata(), &bias_acc)))?;
                    s.kernel_time = t1.elapsed();
                    r
                } else {
                    let t1 = Instant::now();
                    let r = self.execute(i, &acts, None)?;
                    s.kernel_time = t1.elapsed();
                    r
                };
                s.macs = macs;
                acts[i + 1] = Some(out);
                self.release(i, &mut acts);
                stats.layers.push(s);
            }
            Ok(())
        })();
        self.scratch = scratch;
        self.bias_acc = bias_acc;
        result?;
        let logits = acts.pop().flatten().expect("output activation");
        Ok((logits, stats))
    }

    /// Decode every parameter block into its own buffer.
    pub fn predecode(&self) -> Result<DecodedModel> {
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        let mut scratch = vec![0u8; self.plan.weight_scratch_bytes];
        for step in &self.steps {
            if let Step::Weighted {
                weight_entry,
                bias_entry,
                ..
            } = *step
            {
                weights.push(self.container.unpack_layer(weight_entry, &mut scratch)?.qdata().to_vec());
                biases.push(self.container.unpack_layer(bias_entry, &mut scratch)?.qdata().to_vec());
            } else {
                weights.push(Vec::new());
                biases.push(Vec::new());
            }
        }
        Ok(DecodedModel { weights, biases })
    }

    /// Same kernels over pre-decoded parameters, without the shared scratch.
    pub fn run_predecoded(&self, model: &DecodedModel, input: &[i8]) -> Result<Vec<i8>> {
        self.check_input(input)?;
        let mut acts: Vec<Option<Vec<i8>>> = vec![None; self.shapes.len()];
        acts[0] = Some(input.to_vec());
        let mut bias_acc = Vec::new();
        for i in 0..self.steps.len() {
            let (out, _) = if let Step::Weighted { ctx, .. } = self.steps[i] {
                bias_to_acc(&model.biases[i], &ctx, &mut bias_acc)?;
                self.execute(i, &acts, Some((&model.weights[i], &bias_acc)))?
            } else {
                self.execute(i, &acts, None)?
            };
            acts[i + 1] = Some(out);
            self.release(i, &mut acts);
        }
        Ok(acts.pop().flatten().expect("output activation"))
    }

    /// Top-1 class of a normalized image.
    pub fn classify(&mut self, normalized: &[f32]) -> Result<usize> {
        let q = self.quantize_input(normalized);
        let (logits, _) = self.run(&q)?;
        Ok(argmax(&logits))
    }
}

/// Run `input` through `container`, returning logits, the scratch plan and
/// per-layer decode statistics.
pub fn run_container(container: &[u8], input: &QuantTensor) -> Result<(QuantTensor, ScratchPlan, DecodeStats)> {
    let mut rt = Runtime::new(container)?;
    if input.params().frac_bits() != rt.input_frac() {
        return Err(Error::ShapeMismatch(format!(
            "input binary point {} but container expects {}",
            input.params().frac_bits(),
            rt.input_frac()
        )));
    }
    let (logits, stats) = rt.run(input.qdata())?;
    let shape = Shape::new(&[logits.len()])?;
    let out = QuantTensor::new(shape, logits, QuantParams::new(rt.output_frac())?)?;
    Ok((out, rt.plan(), stats))
}

/// Top-1 accuracy of a quantized container on a normalized dataset.
pub fn evaluate_container(container: &[u8], data: &Dataset) -> Result<f64> {
    let mut rt = Runtime::new(container)?;
    if rt.input_shape() != data.shape() {
        return Err(Error::ShapeMismatch(format!(
            "container input {:?} vs data {:?}",
            rt.input_shape(),
            data.shape()
        )));
    }
    let mut correct = 0usize;
    for (img, label) in data.iter() {
        if rt.classify(img)? == label as usize {
            correct += 1;
        }
    }
    Ok(correct as f64 / data.len().max(1) as f64)
}
