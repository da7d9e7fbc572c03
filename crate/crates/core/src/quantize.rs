//! 8-bit binary-point quantization: `q = clamp(round(x * 2^f), -128, 127)`.
//!
//! The fractional-bit count `f` is picked per tensor by exhaustive MSE search.

use crate::error::{Error, Result};
use crate::tensor::{Shape, Tensor};
use crate::trainer::Network;

pub const BIT_WIDTH: u32 = 8;
pub const FRAC_MIN: i32 = -8;
pub const FRAC_MAX: i32 = 14;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct QuantParams {
    frac_bits: i32,
}

impl QuantParams {
    pub fn new(frac_bits: i32) -> Result<Self> {
        if !(FRAC_MIN..=FRAC_MAX).contains(&frac_bits) {
            return Err(Error::FracBits(frac_bits));
        }
        Ok(Self { frac_bits })
    }

    pub fn frac_bits(self) -> i32 {
        self.frac_bits
    }

    pub fn bit_width(self) -> u32 {
        BIT_WIDTH
    }

    pub fn scale(self) -> f64 {
        (self.frac_bits as f64).exp2()
    }

    /// Representable closed interval `[-128 / 2^f, 127 / 2^f]`.
    pub fn range(self) -> (f64, f64) {
        (-128.0 / self.scale(), 127.0 / self.scale())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QuantTensor {
    shape: Shape,
    qdata: Vec<i8>,
    params: QuantParams,
}

impl QuantTensor {
    pub fn new(shape: Shape, qdata: Vec<i8>, params: QuantParams) -> Result<Self> {
        if qdata.len() != shape.numel() {
            return Err(Error::LengthMismatch {
                expected: shape.numel(),
                data: qdata.len(),
            });
        }
        Ok(Self {
            shape,
            qdata,
            params,
        })
    }

    pub fn shape(&self) -> &Shape {
        &self.shape
    }

    pub fn qdata(&self) -> &[i8] {
        &self.qdata
    }

    pub fn params(&self) -> QuantParams {
        self.params
    }

    pub fn len(&self) -> usize {
        self.qdata.len()
    }

    pub fn is_empty(&self) -> bool {
        self.qdata.is_empty()
    }

    /// Payload bytes as stored in a container block.
    pub fn to_bytes(&self) -> Vec<u8> {
        self.qdata.iter().map(|&q| q as u8).collect()
    }
}

#[inline]
pub fn quantize_value(x: f32, frac_bits: i32) -> i8 {
    // f64::round is round-half-away-from-zero
    let scaled = (f64::from(x) * (frac_bits as f64).exp2()).round();
    scaled.clamp(-128.0, 127.0) as i8
}

pub fn quantize_slice(xs: &[f32], frac_bits: i32) -> Vec<i8> {
    xs.iter().map(|&x| quantize_value(x, frac_bits)).collect()
}

pub fn quantize(t: &Tensor, f: i32) -> Result<QuantTensor> {
    let params = QuantParams::new(f)?;
    QuantTensor::new(t.shape().clone(), quantize_slice(t.data(), f), params)
}

pub fn dequantize(q: &QuantTensor) -> Tensor {
    let inv = 1.0 / q.params.scale();
    let data = q.qdata.iter().map(|&v| (f64::from(v) * inv) as f32).collect();
    Tensor::new(q.shape.clone(), data).expect("dequantized values are finite")
}

fn quant_mse(xs: &[f32], f: i32) -> f64 {
    let scale = (f as f64).exp2();
    let sum: f64 = xs
        .iter()
        .map(|&x| {
            let x = f64::from(x);
            let q = (x * scale).round().clamp(-128.0, 127.0);
            let e = x - q / scale;
            e * e
        })
        .sum();
    sum / xs.len() as f64
}

/// MSE-optimal binary-point position over `FRAC_MIN..=FRAC_MAX`. Ties go to
/// the larger `f`, i.e. the finest grid that represents the data equally well.
pub fn choose_frac_bits_slice(xs: &[f32]) -> i32 {
    if xs.is_empty() {
        return FRAC_MAX;
    }
    let mut best = FRAC_MIN;
    let mut best_mse = f64::INFINITY;
    for f in FRAC_MIN..=FRAC_MAX {
        let mse = quant_mse(xs, f);
        if mse <= best_mse {
            best = f;
            best_mse = mse;
        }
    }
    best
}

pub fn choose_frac_bits(t: &Tensor) -> i32 {
    choose_frac_bits_slice(t.data())
}

/// Activation binary points gathered from float forward passes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ActivationParams {
    pub input: QuantParams,
    /// One entry per layer, describing that layer's output.
    pub layers: Vec<QuantParams>,
}

/// Run float forward passes over `samples` (flat channel-last images) and
/// choose one binary point per activation from the pooled values.
pub fn calibrate_activations<'a, I>(net: &Network, samples: I) -> Result<ActivationParams>
where
    I: IntoIterator<Item = &'a [f32]>,
{
    let mut pooled: Vec<Vec<f32>> = vec![Vec::new(); net.layers().len() + 1];
    let mut seen = 0usize;
    for sample in samples {
        let acts = net.forward_sample(sample)?;
        for (pool, act) in pooled.iter_mut().zip(acts.iter()) {
            pool.extend_from_slice(act);
        }
        seen += 1;
    }
    if seen == 0 {
        return Err(Error::EmptyCalibration);
    }
    let mut params = pooled
        .iter()
        .map(|vals| QuantParams::new(choose_frac_bits_slice(vals)));
    let input = params.next().expect("input activation present")?;
    let layers = params.collect::<Result<Vec<_>>>()?;
    Ok(ActivationParams { input, layers })
}
