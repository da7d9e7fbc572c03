//! LZ4 block codec, the per-layer model container and memory estimation.

pub mod container;
pub mod lz4;
mod memory;

pub use container::{
    header_len, pack_container, unpack_layer, LayerEntry, LayerKind, LayerRecord, LayerView, ModelContainer,
};
pub use lz4::{lz4_compress, lz4_decompress, lz4_decompress_into, max_compressed_len};
pub use memory::{estimate_memory, MemoryReport};
