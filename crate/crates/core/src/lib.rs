//! Encoding-aware sparse training.
//!
//! Train small convolutional networks under a hard byte budget on their
//! compressed size, quantize them to 8-bit binary-point fixed point, pack each
//! layer as an independent LZ4 block and run them with an integer runtime that
//! decodes one layer at a time into a shared scratch buffer.
//!
//! ```
//! use east::codec::{lz4_compress, lz4_decompress};
//!
//! let raw = vec![0u8; 4096];
//! let packed = lz4_compress(&raw);
//! assert_eq!(packed.len(), 26);
//! assert_eq!(lz4_decompress(&packed, raw.len()).unwrap(), raw);
//! ```

pub mod cli;
pub mod codec;
pub mod data;
pub mod error;
pub mod export;
pub mod pruning;
pub mod quantize;
pub mod runtime;
pub mod schedule;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
