//! Per-layer compressed model container.
//!
//! ```text
//! offset  size  field
//! 0       4     magic "EAST"
//! 4       2     version (u16 LE)
//! 6       2     layer_count (u16 LE)
//! 8       28*n  entries:
//!                 u8      layer_kind  bits 0-3 kind, bits 4-5 conv stride-1,
//!                                     bit 6 conv same-padding, bit 7 f32 payload
//!                 i8      weight_frac_bits
//!                 i8      act_frac_bits   (binary point of the layer output)
//!                 i8      bias_frac_bits
//!                 4 x u32 dims
//!                 u32     raw_len
//!                 u32     compressed_len
//! ...           blocks, in entry order, compressed_len bytes each
//! ```
//!
//! All integers are little-endian. Quantized containers hold LZ4 blocks;
//! entries flagged with the f32 bit store their payload uncompressed
//! (`compressed_len == raw_len`), which is how float checkpoints are written.
//!
//! `dims` by kind:
//!
//! | kind            | dims                      | payload                         |
//! |-----------------|---------------------------|---------------------------------|
//! | input           | `[h, w, c, 0]`            | per-channel mean then std, f32  |
//! | conv2d          | `[out, kh, kw, in]`       | weights, channel-last           |
//! | fully_connected | `[out, 1, 1, in]`         | weights                         |
//! | bias            | `[out, 1, 1, 1]`          | biases of the preceding layer   |
//! | max_pool        | `[size, stride, 0, 0]`    | none                            |
//! | residual_add    | `[activation, 0, 0, 0]`   | none                            |
//! | relu, global_avg_pool, flatten | zeros      | none                            |

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::quantize::{QuantParams, QuantTensor};
use crate::tensor::Shape;

use super::lz4::{lz4_compress, lz4_decompress_into};

pub const MAGIC: [u8; 4] = *b"EAST";
pub const VERSION: u16 = 1;
pub const HEADER_BYTES: usize = 8;
pub const ENTRY_BYTES: usize = 28;

const KIND_MASK: u8 = 0x0f;
const STRIDE_SHIFT: u8 = 4;
const SAME_PAD_BIT: u8 = 1 << 6;
const FLOAT_BIT: u8 = 1 << 7;

/// Size of the fixed header plus `layers` entries.
pub fn header_len(layers: usize) -> usize {
    HEADER_BYTES + ENTRY_BYTES * layers
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum LayerKind {
    Input = 0,
    Conv2d = 1,
    FullyConnected = 2,
    Bias = 3,
    Relu = 4,
    MaxPool = 5,
    GlobalAvgPool = 6,
    Flatten = 7,
    ResidualAdd = 8,
}

impl LayerKind {
    fn from_code(code: u8) -> Option<Self> {
        use LayerKind::*;
        Some(match code {
            0 => Input,
            1 => Conv2d,
            2 => FullyConnected,
            3 => Bias,
            4 => Relu,
            5 => MaxPool,
            6 => GlobalAvgPool,
            7 => Flatten,
            8 => ResidualAdd,
            _ => return None,
        })
    }

    /// Kinds whose payload is a parameter tensor sized exactly by `dims`.
    pub fn is_parameter_block(self) -> bool {
        matches!(self, Self::Conv2d | Self::FullyConnected | Self::Bias)
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Input => "input",
            Self::Conv2d => "conv2d",
            Self::FullyConnected => "fully_connected",
            Self::Bias => "bias",
            Self::Relu => "relu",
            Self::MaxPool => "max_pool",
            Self::GlobalAvgPool => "global_avg_pool",
            Self::Flatten => "flatten",
            Self::ResidualAdd => "residual_add",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerEntry {
    pub kind: LayerKind,
    /// Conv stride, 1..=4.
    pub stride: u8,
    /// Conv padding of `kernel / 2` on each side when set, none otherwise.
    pub same_padding: bool,
    pub float_payload: bool,
    pub weight_frac_bits: i8,
    pub act_frac_bits: i8,
    pub bias_frac_bits: i8,
    pub dims: [u32; 4],
    pub raw_len: u32,
    pub compressed_len: u32,
}

impl LayerEntry {
    pub fn new(kind: LayerKind, dims: [u32; 4]) -> Self {
        Self {
            kind,
            stride: 1,
            same_padding: false,
            float_payload: false,
            weight_frac_bits: 0,
            act_frac_bits: 0,
            bias_frac_bits: 0,
            dims,
            raw_len: 0,
            compressed_len: 0,
        }
    }

    fn kind_byte(&self) -> Result<u8> {
        if !(1..=4).contains(&self.stride) {
            return Err(Error::Export(format!("stride {} not encodable", self.stride)));
        }
        let mut b = self.kind as u8 | ((self.stride - 1) << STRIDE_SHIFT);
        if self.same_padding {
            b |= SAME_PAD_BIT;
        }
        if self.float_payload {
            b |= FLOAT_BIT;
        }
        Ok(b)
    }

    pub fn dims_product(&self) -> u64 {
        self.dims.iter().map(|&d| u64::from(d)).product()
    }

    fn write(&self, out: &mut Vec<u8>) -> Result<()> {
        out.push(self.kind_byte()?);
        out.push(self.weight_frac_bits as u8);
        out.push(self.act_frac_bits as u8);
        out.push(self.bias_frac_bits as u8);
        for d in self.dims {
            out.extend_from_slice(&d.to_le_bytes());
        }
        out.extend_from_slice(&self.raw_len.to_le_bytes());
        out.extend_from_slice(&self.compressed_len.to_le_bytes());
        Ok(())
    }

    fn read(b: &[u8]) -> Result<Self> {
        debug_assert_eq!(b.len(), ENTRY_BYTES);
        let u32_at = |o: usize| u32::from_le_bytes([b[o], b[o + 1], b[o + 2], b[o + 3]]);
        let kind = LayerKind::from_code(b[0] & KIND_MASK)
            .ok_or_else(|| Error::InvalidContainer(format!("unknown layer kind {}", b[0] & KIND_MASK)))?;
        Ok(Self {
            kind,
            stride: ((b[0] >> STRIDE_SHIFT) & 0x3) + 1,
            same_padding: b[0] & SAME_PAD_BIT != 0,
            float_payload: b[0] & FLOAT_BIT != 0,
            weight_frac_bits: b[1] as i8,
            act_frac_bits: b[2] as i8,
            bias_frac_bits: b[3] as i8,
            dims: [u32_at(4), u32_at(8), u32_at(12), u32_at(16)],
            raw_len: u32_at(20),
            compressed_len: u32_at(24),
        })
    }

    /// Bytes per payload element: 4 for f32 payloads, 1 otherwise.
    pub fn element_bytes(&self) -> u64 {
        if self.float_payload {
            4
        } else {
            1
        }
    }
}

/// One layer to be packed: its metadata and uncompressed payload.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerRecord {
    pub entry: LayerEntry,
    pub payload: Vec<u8>,
}

impl LayerRecord {
    pub fn new(entry: LayerEntry, payload: Vec<u8>) -> Self {
        Self { entry, payload }
    }
}

/// Encode a block the way `pack_container` would, returning its stored bytes.
pub fn encode_block(entry: &LayerEntry, payload: &[u8]) -> Vec<u8> {
    if payload.is_empty() {
        Vec::new()
    } else if entry.float_payload {
        payload.to_vec()
    } else {
        lz4_compress(payload)
    }
}

pub fn pack_container(layers: &[LayerRecord]) -> Result<Vec<u8>> {
    if layers.is_empty() {
        return Err(Error::Export("empty layer list".into()));
    }
    let count = u16::try_from(layers.len())
        .map_err(|_| Error::Export(format!("{} layers exceed the u16 count", layers.len())))?;
    let blocks: Vec<Vec<u8>> = layers
        .par_iter()
        .map(|l| encode_block(&l.entry, &l.payload))
        .collect();

    let mut out = Vec::with_capacity(
        header_len(layers.len()) + blocks.iter().map(Vec::len).sum::<usize>(),
    );
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&count.to_le_bytes());
    for (layer, block) in layers.iter().zip(&blocks) {
        let mut entry = layer.entry;
        entry.raw_len = u32::try_from(layer.payload.len())
            .map_err(|_| Error::Export("payload exceeds u32 length".into()))?;
        entry.compressed_len = block.len() as u32;
        if entry.kind.is_parameter_block()
            && entry.dims_product() * entry.element_bytes() != u64::from(entry.raw_len)
        {
            return Err(Error::Export(format!(
                "{} dims {:?} do not describe a {}-byte payload",
                entry.kind.name(),
                entry.dims,
                entry.raw_len
            )));
        }
        entry.write(&mut out)?;
    }
    for block in &blocks {
        out.extend_from_slice(block);
    }
    Ok(out)
}

/// Parsed, validated view over container bytes. Blocks are decoded lazily.
#[derive(Debug, Clone)]
pub struct ModelContainer<'a> {
    bytes: &'a [u8],
    entries: Vec<LayerEntry>,
    offsets: Vec<usize>,
}

impl<'a> ModelContainer<'a> {
    pub fn parse(bytes: &'a [u8]) -> Result<Self> {
        if bytes.len() < HEADER_BYTES {
            return Err(Error::InvalidContainer("file shorter than header".into()));
        }
        if bytes[..4] != MAGIC {
            return Err(Error::InvalidContainer("bad magic".into()));
        }
        let version = u16::from_le_bytes([bytes[4], bytes[5]]);
        if version != VERSION {
            return Err(Error::InvalidContainer(format!("unsupported version {version}")));
        }
        let count = u16::from_le_bytes([bytes[6], bytes[7]]) as usize;
        if count == 0 {
            return Err(Error::InvalidContainer("no layers".into()));
        }
        let header = header_len(count);
        if bytes.len() < header {
            return Err(Error::InvalidContainer("entry table truncated".into()));
        }
        let entries = bytes[HEADER_BYTES..header]
            .chunks_exact(ENTRY_BYTES)
            .map(LayerEntry::read)
            .collect::<Result<Vec<_>>>()?;

        let mut offsets = Vec::with_capacity(count);
        let mut pos = header;
        for (i, e) in entries.iter().enumerate() {
            offsets.push(pos);
            pos = pos
                .checked_add(e.compressed_len as usize)
                .filter(|&end| end <= bytes.len())
                .ok_or_else(|| Error::InvalidContainer(format!("block {i} overruns the file")))?;
            if e.float_payload && e.compressed_len != e.raw_len {
                return Err(Error::InvalidContainer(format!("block {i}: f32 payload length mismatch")));
            }
            if e.kind.is_parameter_block()
                && e.dims_product() * e.element_bytes() != u64::from(e.raw_len)
            {
                return Err(Error::InvalidContainer(format!("block {i}: dims disagree with raw_len")));
            }
        }
        if pos != bytes.len() {
            return Err(Error::InvalidContainer(format!(
                "{} trailing bytes after the last block",
                bytes.len() - pos
            )));
        }
        Ok(Self {
            bytes,
            entries,
            offsets,
        })
    }

    pub fn bytes(&self) -> &'a [u8] {
        self.bytes
    }

    pub fn layer_count(&self) -> usize {
        self.entries.len()
    }

    pub fn entries(&self) -> &[LayerEntry] {
        &self.entries
    }

    pub fn entry(&self, index: usize) -> Result<&LayerEntry> {
        self.entries.get(index).ok_or(Error::LayerIndex {
            index,
            count: self.entries.len(),
        })
    }

    pub fn header_bytes(&self) -> usize {
        header_len(self.entries.len())
    }

    pub fn total_bytes(&self) -> usize {
        self.bytes.len()
    }

    /// Largest decoded block, i.e. the size of a time-shared decode buffer.
    pub fn max_raw_len(&self) -> usize {
        self.entries.iter().map(|e| e.raw_len as usize).max().unwrap_or(0)
    }

    pub fn block(&self, index: usize) -> Result<&'a [u8]> {
        let e = self.entry(index)?;
        let start = self.offsets[index];
        Ok(&self.bytes[start..start + e.compressed_len as usize])
    }

    /// Decode block `index` into the front of `scratch` without touching any
    /// other block.
    pub fn unpack_layer<'s>(&self, index: usize, scratch: &'s mut [u8]) -> Result<LayerView<'s>> {
        let entry = *self.entry(index)?;
        let raw = entry.raw_len as usize;
        if scratch.len() < raw {
            return Err(Error::ScratchTooSmall {
                required: raw,
                available: scratch.len(),
            });
        }
        let block = self.block(index)?;
        let dst = &mut scratch[..raw];
        if entry.float_payload {
            dst.copy_from_slice(block);
        } else if raw > 0 {
            lz4_decompress_into(block, dst)?;
        } else if !block.is_empty() {
            return Err(Error::InvalidContainer(format!("block {index} has data but raw_len 0")));
        }
        Ok(LayerView { entry, data: dst })
    }
}

/// Parse `container` and decode one layer into `scratch`.
pub fn unpack_layer<'s>(container: &[u8], index: usize, scratch: &'s mut [u8]) -> Result<LayerView<'s>> {
    ModelContainer::parse(container)?.unpack_layer(index, scratch)
}

/// A decoded block borrowed from a scratch buffer.
#[derive(Debug)]
pub struct LayerView<'s> {
    pub entry: LayerEntry,
    data: &'s [u8],
}

impl<'s> LayerView<'s> {
    pub fn raw(&self) -> &[u8] {
        self.data
    }

    pub fn qdata(&self) -> &[i8] {
        bytemuck::cast_slice(self.data)
    }

    pub fn f32_data(&self) -> Vec<f32> {
        self.data
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect()
    }

    /// Tensor shape of a parameter block (bias blocks are 1-D).
    pub fn param_shape(&self) -> Result<Shape> {
        let d = self.entry.dims.map(|d| d as usize);
        match self.entry.kind {
            LayerKind::Bias => Shape::new(&[d[0]]),
            LayerKind::Conv2d | LayerKind::FullyConnected => Shape::new(&d),
            k => Err(Error::InvalidContainer(format!("{} has no parameter tensor", k.name()))),
        }
    }

    pub fn to_quant_tensor(&self) -> Result<QuantTensor> {
        if self.entry.float_payload {
            return Err(Error::InvalidContainer("f32 payload is not quantized".into()));
        }
        let frac = match self.entry.kind {
            LayerKind::Bias => self.entry.bias_frac_bits,
            _ => self.entry.weight_frac_bits,
        };
        QuantTensor::new(
            self.param_shape()?,
            self.qdata().to_vec(),
            QuantParams::new(i32::from(frac))?,
        )
    }
}
