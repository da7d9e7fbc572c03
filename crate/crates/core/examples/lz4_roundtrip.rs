//! Compress a few buffers with the LZ4 block codec and decode them again.
//!
//! cargo run --example lz4_roundtrip

use east::codec::{lz4_compress, lz4_decompress};

fn main() -> east::Result<()> {
    let inputs: Vec<(&str, Vec<u8>)> = vec![
        ("zeros", vec![0; 4096]),
        ("text", b"the quick brown fox jumps over the lazy dog. ".repeat(40)),
        ("ramp", (0..4096u32).map(|v| (v * 7 % 256) as u8).collect()),
        ("tiny", b"abc".to_vec()),
    ];
    for (name, raw) in inputs {
        let block = lz4_compress(&raw);
        let back = lz4_decompress(&block, raw.len())?;
        assert_eq!(back, raw);
        println!("{name:>6}: {:>5} -> {:>5} bytes", raw.len(), block.len());
    }
    Ok(())
}
