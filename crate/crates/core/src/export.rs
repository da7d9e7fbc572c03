//! Conversion between a trained `Network` and container layer records.
//!
//! Every network layer maps to one entry (weighted layers are followed by a
//! bias entry), preceded by an input entry carrying the per-channel
//! normalization. Binary points propagate through the graph so every
//! fixed-point requantization shift is non-negative.

use crate::codec::container::{pack_container, LayerEntry, LayerKind, LayerRecord, ModelContainer};
use crate::error::{Error, Result};
use crate::quantize::{choose_frac_bits_slice, quantize_slice, ActivationParams, QuantParams, FRAC_MAX, FRAC_MIN};
use crate::trainer::{LayerSpec, Network, Normalization};

/// Largest multiply-accumulate count per output allowed in a 32-bit accumulator.
pub const MAX_MACS_PER_OUTPUT: usize = 1 << 15;
/// Largest left shift applied to a bias before accumulation.
pub const MAX_BIAS_SHIFT: i32 = 15;

fn to_u32(v: usize) -> Result<u32> {
    u32::try_from(v).map_err(|_| Error::Export(format!("dimension {v} overflows u32")))
}

fn frac_i8(f: i32) -> Result<i8> {
    if !(FRAC_MIN..=FRAC_MAX).contains(&f) {
        return Err(Error::Export(format!("binary point {f} outside [{FRAC_MIN}, {FRAC_MAX}]")));
    }
    Ok(f as i8)
}

fn normalization_payload(n: &Normalization) -> Vec<u8> {
    n.mean.iter().chain(&n.std).flat_map(|v| v.to_le_bytes()).collect()
}

fn f32_bytes(v: &[f32]) -> Vec<u8> {
    v.iter().flat_map(|x| x.to_le_bytes()).collect()
}

fn input_entry(net: &Network) -> Result<LayerEntry> {
    let (h, w, c) = net.input_shape();
    Ok(LayerEntry::new(LayerKind::Input, [to_u32(h)?, to_u32(w)?, to_u32(c)?, 0]))
}

/// Entry for `layer` without payload or binary points.
fn layer_entry(layer: &LayerSpec) -> Result<LayerEntry> {
    Ok(match *layer {
        LayerSpec::Conv2d {
            in_channels,
            out_channels,
            kernel,
            stride,
            padding,
        } => {
            let mut e = LayerEntry::new(
                LayerKind::Conv2d,
                [to_u32(out_channels)?, to_u32(kernel)?, to_u32(kernel)?, to_u32(in_channels)?],
            );
            e.stride = u8::try_from(stride)
                .ok()
                .filter(|s| (1..=4).contains(s))
                .ok_or_else(|| Error::Export(format!("stride {stride} not encodable")))?;
            e.same_padding = match padding {
                0 => false,
                p if p == kernel / 2 && kernel % 2 == 1 => true,
                p => return Err(Error::Export(format!("padding {p} for kernel {kernel} not encodable"))),
            };
            e
        }
        LayerSpec::FullyConnected {
            in_features,
            out_features,
        } => LayerEntry::new(LayerKind::FullyConnected, [to_u32(out_features)?, 1, 1, to_u32(in_features)?]),
        LayerSpec::Relu => LayerEntry::new(LayerKind::Relu, [0; 4]),
        LayerSpec::MaxPool { size, stride } => LayerEntry::new(LayerKind::MaxPool, [to_u32(size)?, to_u32(stride)?, 0, 0]),
        LayerSpec::GlobalAvgPool => LayerEntry::new(LayerKind::GlobalAvgPool, [0; 4]),
        LayerSpec::Flatten => LayerEntry::new(LayerKind::Flatten, [0; 4]),
        LayerSpec::ResidualAdd { from } => LayerEntry::new(LayerKind::ResidualAdd, [to_u32(from)?, 0, 0, 0]),
    })
}

fn bias_entry(out: usize) -> Result<LayerEntry> {
    Ok(LayerEntry::new(LayerKind::Bias, [to_u32(out)?, 1, 1, 1]))
}

/// Quantized records for every layer. Without activation parameters all
/// activation binary points are 0; block sizes are unaffected, which is what
/// memory estimation relies on.
pub fn quantized_records(net: &Network, acts: Option<&ActivationParams>) -> Result<Vec<LayerRecord>> {
    if let Some(a) = acts {
        if a.layers.len() != net.layers().len() {
            return Err(Error::Export("activation parameters do not match the network".into()));
        }
    }
    let act_frac = |i: Option<usize>| -> i32 {
        acts.map_or(0, |a| match i {
            None => a.input.frac_bits(),
            Some(i) => a.layers[i].frac_bits(),
        })
    };

    let mut records = Vec::with_capacity(net.layers().len() + 5);
    let mut fracs = vec![act_frac(None)];
    let mut input = input_entry(net)?;
    input.act_frac_bits = frac_i8(fracs[0])?;
    records.push(LayerRecord::new(input, normalization_payload(net.normalization())));

    for (i, layer) in net.layers().iter().enumerate() {
        let in_f = fracs[i];
        let mut entry = layer_entry(layer)?;
        let out_f = match *layer {
            LayerSpec::Conv2d { .. } | LayerSpec::FullyConnected { .. } => {
                let p = net.params(i).expect("weighted layer has params");
                let dims = layer.weight_dims().expect("weighted layer");
                let macs = dims[1] * dims[2] * dims[3];
                if macs > MAX_MACS_PER_OUTPUT {
                    return Err(Error::Export(format!("layer {i}: {macs} MACs per output overflow the accumulator")));
                }
                let w_f = choose_frac_bits_slice(p.weight().data());
                let prod = w_f + in_f;
                let out_f = act_frac(Some(i)).min(prod);
                let b_f = choose_frac_bits_slice(p.bias().data())
                    .min(prod)
                    .max(prod - MAX_BIAS_SHIFT)
                    .clamp(FRAC_MIN, FRAC_MAX);
                entry.weight_frac_bits = frac_i8(w_f)?;
                entry.bias_frac_bits = frac_i8(b_f)?;
                entry.act_frac_bits = frac_i8(out_f)?;
                let weights = quantize_slice(p.weight().data(), w_f);
                records.push(LayerRecord::new(entry, bytemuck::cast_slice(&weights).to_vec()));

                let mut b = bias_entry(dims[0])?;
                b.weight_frac_bits = entry.weight_frac_bits;
                b.bias_frac_bits = entry.bias_frac_bits;
                b.act_frac_bits = entry.act_frac_bits;
                let bias = quantize_slice(p.bias().data(), b_f);
                records.push(LayerRecord::new(b, bytemuck::cast_slice(&bias).to_vec()));
                fracs.push(out_f);
                continue;
            }
            LayerSpec::ResidualAdd { from } => in_f.min(fracs[from]).min(act_frac(Some(i))),
            _ => in_f,
        };
        entry.act_frac_bits = frac_i8(out_f)?;
        records.push(LayerRecord::new(entry, Vec::new()));
        fracs.push(out_f);
    }
    Ok(records)
}

pub fn export_container(net: &Network, acts: &ActivationParams) -> Result<Vec<u8>> {
    pack_container(&quantized_records(net, Some(acts))?)
}

/// Float checkpoint: same layout with uncompressed f32 payloads. Calibrated
/// activation binary points ride along in `act_frac_bits`.
pub fn export_checkpoint(net: &Network, acts: &ActivationParams) -> Result<Vec<u8>> {
    let mut records = Vec::new();
    let mut input = input_entry(net)?;
    input.float_payload = true;
    input.act_frac_bits = frac_i8(acts.input.frac_bits())?;
    records.push(LayerRecord::new(input, normalization_payload(net.normalization())));
    for (i, layer) in net.layers().iter().enumerate() {
        let mut entry = layer_entry(layer)?;
        entry.act_frac_bits = frac_i8(acts.layers[i].frac_bits())?;
        match net.params(i) {
            Some(p) => {
                entry.float_payload = true;
                records.push(LayerRecord::new(entry, f32_bytes(p.weight().data())));
                let mut b = bias_entry(p.bias().len())?;
                b.float_payload = true;
                b.act_frac_bits = entry.act_frac_bits;
                records.push(LayerRecord::new(b, f32_bytes(p.bias().data())));
            }
            None => records.push(LayerRecord::new(entry, Vec::new())),
        }
    }
    pack_container(&records)
}

/// Graph description recovered from container entries.
#[derive(Debug, Clone, PartialEq)]
pub struct Topology {
    pub input: (usize, usize, usize),
    pub layers: Vec<LayerSpec>,
    /// Entry index of each layer (the weight entry for weighted layers).
    pub entry_of_layer: Vec<usize>,
}

pub fn topology(container: &ModelContainer<'_>) -> Result<Topology> {
    let entries = container.entries();
    let first = entries[0];
    if first.kind != LayerKind::Input {
        return Err(Error::InvalidContainer("first entry is not an input".into()));
    }
    let d = first.dims.map(|v| v as usize);
    let input = (d[0], d[1], d[2]);
    let mut layers = Vec::new();
    let mut entry_of_layer = Vec::new();
    let mut i = 1;
    while i < entries.len() {
        let e = &entries[i];
        let d = e.dims.map(|v| v as usize);
        let spec = match e.kind {
            LayerKind::Conv2d => {
                if d[1] != d[2] {
                    return Err(Error::InvalidContainer(format!("entry {i}: non-square kernel")));
                }
                LayerSpec::conv(d[3], d[0], d[1], e.stride as usize, if e.same_padding { d[1] / 2 } else { 0 })
            }
            LayerKind::FullyConnected => LayerSpec::fc(d[3], d[0]),
            LayerKind::Relu => LayerSpec::Relu,
            LayerKind::MaxPool => LayerSpec::MaxPool { size: d[0], stride: d[1] },
            LayerKind::GlobalAvgPool => LayerSpec::GlobalAvgPool,
            LayerKind::Flatten => LayerSpec::Flatten,
            LayerKind::ResidualAdd => LayerSpec::ResidualAdd { from: d[0] },
            LayerKind::Input | LayerKind::Bias => {
                return Err(Error::InvalidContainer(format!("unexpected {} entry at {i}", e.kind.name())));
            }
        };
        if spec.has_weights() {
            match entries.get(i + 1) {
                Some(b) if b.kind == LayerKind::Bias && b.dims[0] == e.dims[0] => {}
                _ => return Err(Error::InvalidContainer(format!("entry {i} lacks its bias entry"))),
            }
        }
        layers.push(spec);
        entry_of_layer.push(i);
        i += if spec.has_weights() { 2 } else { 1 };
    }
    Ok(Topology {
        input,
        layers,
        entry_of_layer,
    })
}

/// Read the normalization payload of the input entry.
pub fn read_normalization(container: &ModelContainer<'_>) -> Result<Normalization> {
    let mut scratch = vec![0u8; container.entry(0)?.raw_len as usize];
    let view = container.unpack_layer(0, &mut scratch)?;
    let c = view.entry.dims[2] as usize;
    let vals = view.f32_data();
    if vals.len() != 2 * c {
        return Err(Error::InvalidContainer("input normalization has the wrong length".into()));
    }
    Ok(Normalization {
        mean: vals[..c].to_vec(),
        std: vals[c..].to_vec(),
    })
}

/// A float network restored from a checkpoint.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub net: Network,
    pub activations: ActivationParams,
}

pub fn import_checkpoint(bytes: &[u8]) -> Result<Checkpoint> {
    let container = ModelContainer::parse(bytes)?;
    let topo = topology(&container)?;
    if container.entries().iter().any(|e| e.raw_len > 0 && !e.float_payload) {
        return Err(Error::InvalidContainer("not a float checkpoint".into()));
    }
    let mut net = Network::new(topo.input, topo.layers.clone())?;
    net.set_normalization(read_normalization(&container)?)?;
    let mut scratch = vec![0u8; container.max_raw_len()];
    let mut layer_params = Vec::new();
    for (i, &e) in topo.entry_of_layer.iter().enumerate() {
        let entry = container.entry(e)?;
        layer_params.push(QuantParams::new(i32::from(entry.act_frac_bits))?);
        if topo.layers[i].has_weights() {
            let w = container.unpack_layer(e, &mut scratch)?.f32_data();
            let p = net.params_mut(i).expect("weighted layer");
            p.weight_mut().copy_from_slice(&w);
            let b = container.unpack_layer(e + 1, &mut scratch)?.f32_data();
            p.bias_mut().copy_from_slice(&b);
            if p.weight().data().iter().chain(p.bias().data()).any(|v| !v.is_finite()) {
                return Err(Error::InvalidContainer(format!("layer {i} holds non-finite values")));
            }
            let mask = crate::pruning::PruneMask::from_zeros(&w, 1);
            p.set_mask(mask)?;
        }
    }
    let activations = ActivationParams {
        input: QuantParams::new(i32::from(container.entry(0)?.act_frac_bits))?,
        layers: layer_params,
    };
    Ok(Checkpoint { net, activations })
}
