//! LZ4 block format (no frame header, no checksums).
//!
//! A block is a run of sequences. Each sequence is a token byte (high nibble:
//! literal length, low nibble: match length - 4), optional length extension
//! bytes of 255, the literals, a little-endian u16 offset and optional match
//! length extension bytes. The last sequence carries literals only.
//!
//! The encoder is greedy over a hash chain of 4-byte windows within a 64 KiB
//! window. It follows the end-of-block rules of the reference format: the
//! last 5 bytes are always literals and no match starts within the final 12.

use crate::error::{Error, Result};

const MIN_MATCH: usize = 4;
const LAST_LITERALS: usize = 5;
const MF_LIMIT: usize = 12;
const MAX_OFFSET: usize = 65_535;
const HASH_LOG: u32 = 16;
const MAX_CHAIN: usize = 64;
const NONE: u32 = u32::MAX;

/// Worst-case compressed size for `n` input bytes.
pub fn max_compressed_len(n: usize) -> usize {
    n + n / 255 + 16
}

#[inline]
fn read_u32(buf: &[u8], pos: usize) -> u32 {
    u32::from_le_bytes([buf[pos], buf[pos + 1], buf[pos + 2], buf[pos + 3]])
}

#[inline]
fn hash(v: u32) -> usize {
    (v.wrapping_mul(2_654_435_761) >> (32 - HASH_LOG)) as usize
}

fn write_len_ext(out: &mut Vec<u8>, mut rest: usize) {
    while rest >= 255 {
        out.push(255);
        rest -= 255;
    }
    out.push(rest as u8);
}

fn emit_sequence(out: &mut Vec<u8>, literals: &[u8], offset: usize, match_len: usize) {
    let lit = literals.len();
    let ml = match_len - MIN_MATCH;
    let token = ((lit.min(15) as u8) << 4) | ml.min(15) as u8;
    out.push(token);
    if lit >= 15 {
        write_len_ext(out, lit - 15);
    }
    out.extend_from_slice(literals);
    out.extend_from_slice(&(offset as u16).to_le_bytes());
    if ml >= 15 {
        write_len_ext(out, ml - 15);
    }
}

fn emit_last_literals(out: &mut Vec<u8>, literals: &[u8]) {
    let lit = literals.len();
    out.push((lit.min(15) as u8) << 4);
    if lit >= 15 {
        write_len_ext(out, lit - 15);
    }
    out.extend_from_slice(literals);
}

struct HashChain {
    head: Vec<u32>,
    prev: Vec<u32>,
}

impl HashChain {
    fn new(n: usize) -> Self {
        Self {
            head: vec![NONE; 1 << HASH_LOG],
            prev: vec![NONE; n],
        }
    }

    fn insert(&mut self, input: &[u8], pos: usize) {
        let h = hash(read_u32(input, pos));
        self.prev[pos] = self.head[h];
        self.head[h] = pos as u32;
    }

    /// Longest earlier match for `pos`, limited to `max_len` bytes.
    fn best_match(&self, input: &[u8], pos: usize, max_len: usize) -> Option<(usize, usize)> {
        let seq = read_u32(input, pos);
        let mut cand = self.head[hash(seq)];
        let mut best: Option<(usize, usize)> = None;
        for _ in 0..MAX_CHAIN {
            if cand == NONE {
                break;
            }
            let c = cand as usize;
            if pos - c > MAX_OFFSET {
                break;
            }
            if read_u32(input, c) == seq {
                let len = MIN_MATCH
                    + input[c + MIN_MATCH..]
                        .iter()
                        .zip(&input[pos + MIN_MATCH..pos + max_len])
                        .take_while(|(a, b)| a == b)
                        .count();
                if best.is_none_or(|(_, l)| len > l) {
                    best = Some((pos - c, len));
                    if len == max_len {
                        break;
                    }
                }
            }
            cand = self.prev[c];
        }
        best
    }
}

pub fn lz4_compress(raw: &[u8]) -> Vec<u8> {
    let n = raw.len();
    let mut out = Vec::with_capacity(max_compressed_len(n));
    if n < MF_LIMIT + 1 {
        emit_last_literals(&mut out, raw);
        return out;
    }
    let last_match_start = n - MF_LIMIT;
    let match_end_limit = n - LAST_LITERALS;
    let mut chain = HashChain::new(n);
    let mut anchor = 0;
    let mut pos = 0;
    while pos <= last_match_start {
        let found = chain.best_match(raw, pos, match_end_limit - pos);
        chain.insert(raw, pos);
        match found {
            Some((offset, len)) => {
                emit_sequence(&mut out, &raw[anchor..pos], offset, len);
                let end = pos + len;
                for p in pos + 1..end.min(last_match_start + 1) {
                    chain.insert(raw, p);
                }
                pos = end;
                anchor = end;
            }
            None => pos += 1,
        }
    }
    emit_last_literals(&mut out, &raw[anchor..]);
    out
}

fn read_len_ext(payload: &[u8], ip: &mut usize) -> Result<usize> {
    let mut total = 0usize;
    loop {
        let b = *payload
            .get(*ip)
            .ok_or(Error::CorruptBlock("truncated length"))?;
        *ip += 1;
        total = total
            .checked_add(b as usize)
            .ok_or(Error::CorruptBlock("length overflow"))?;
        if b != 255 {
            return Ok(total);
        }
    }
}

/// Decode `payload` into `out`, which must be exactly the decoded length.
pub fn lz4_decompress_into(payload: &[u8], out: &mut [u8]) -> Result<()> {
    let mut ip: usize = 0;
    let mut op: usize = 0;
    loop {
        let token = *payload.get(ip).ok_or(Error::CorruptBlock("missing token"))?;
        ip += 1;

        let mut lit = (token >> 4) as usize;
        if lit == 15 {
            lit += read_len_ext(payload, &mut ip)?;
        }
        let lit_end = ip
            .checked_add(lit)
            .filter(|&e| e <= payload.len())
            .ok_or(Error::CorruptBlock("literal run past end of input"))?;
        let out_end = op
            .checked_add(lit)
            .filter(|&e| e <= out.len())
            .ok_or(Error::CorruptBlock("output overrun"))?;
        out[op..out_end].copy_from_slice(&payload[ip..lit_end]);
        ip = lit_end;
        op = out_end;

        if ip == payload.len() {
            break;
        }

        if ip + 2 > payload.len() {
            return Err(Error::CorruptBlock("truncated offset"));
        }
        let offset = u16::from_le_bytes([payload[ip], payload[ip + 1]]) as usize;
        ip += 2;
        if offset == 0 || offset > op {
            return Err(Error::CorruptBlock("invalid offset"));
        }
        let mut ml = (token & 0x0f) as usize;
        if ml == 15 {
            ml += read_len_ext(payload, &mut ip)?;
        }
        ml += MIN_MATCH;
        let m_end = op
            .checked_add(ml)
            .filter(|&e| e <= out.len())
            .ok_or(Error::CorruptBlock("output overrun"))?;
        let src = op - offset;
        if offset >= ml {
            out.copy_within(src..src + ml, op);
        } else {
            // overlapping copy replicates the period
            for i in 0..ml {
                out[op + i] = out[src + i];
            }
        }
        op = m_end;
    }
    if op != out.len() {
        return Err(Error::OutputLength {
            expected: out.len(),
            actual: op,
        });
    }
    Ok(())
}

pub fn lz4_decompress(payload: &[u8], expected_len: usize) -> Result<Vec<u8>> {
    let mut out = vec![0u8; expected_len];
    lz4_decompress_into(payload, &mut out)?;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, RngCore, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn round_trip(raw: &[u8]) {
        let c = lz4_compress(raw);
        assert!(c.len() <= max_compressed_len(raw.len()));
        assert_eq!(lz4_decompress(&c, raw.len()).unwrap(), raw);
    }

    #[test]
    fn random_10k_round_trips() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut raw = vec![0u8; 10 * 1024];
        rng.fill_bytes(&mut raw);
        round_trip(&raw);
    }

    #[test]
    fn small_and_empty_inputs() {
        for n in 0..=20 {
            round_trip(&vec![7u8; n]);
            round_trip(&(0..n as u8).collect::<Vec<_>>());
        }
        assert_eq!(lz4_compress(&[]), vec![0x00]);
    }

    #[test]
    fn zero_page_stream_is_exact() {
        let c = lz4_compress(&[0u8; 4096]);
        // one literal zero, offset 1, match of 4090, then five literal zeros
        let mut want = vec![0x1f, 0x00, 0x01, 0x00];
        want.extend(std::iter::repeat_n(255, 15));
        want.push((4090usize - 4 - 15 - 15 * 255) as u8);
        want.extend_from_slice(&[0x50, 0, 0, 0, 0, 0]);
        assert_eq!(c, want);
        assert!(c.len() <= 32);
    }

    #[test]
    fn grouped_zeros_beat_scattered_zeros() {
        // Same multiset of bytes per 16-byte tile: two runs of four zeros vs
        // scattered zeros. A lone tile is too short for any match, so tiles
        // with distinct nonzero values are chained.
        let grouped_tile = [9, 0, 0, 0, 0, 3, 5, 0, 0, 0, 0, 7, 2, 6, 4, 1];
        let scattered_tile = [9, 0, 3, 0, 5, 0, 0, 7, 0, 2, 0, 6, 0, 4, 0, 1];
        let tiled = |tile: &[u8; 16]| -> Vec<u8> {
            (0..32u8)
                .flat_map(|t| tile.iter().map(move |&b| if b == 0 { 0 } else { b.wrapping_mul(t + 1).wrapping_add(t) | 1 }))
                .collect()
        };
        let (grouped, scattered) = (tiled(&grouped_tile), tiled(&scattered_tile));
        let g = lz4_compress(&grouped);
        let s = lz4_compress(&scattered);
        assert!(g.len() < s.len(), "{} vs {}", g.len(), s.len());
        assert_eq!(lz4_compress(&grouped_tile).len(), lz4_compress(&scattered_tile).len());
        round_trip(&grouped);
        round_trip(&scattered);
    }

    #[test]
    fn decodes_hand_built_stream() {
        // "abcabcabcabc!!!!!" as literals "abc" + match(offset 3, len 9) + "!!!!!"
        let stream = [0x35, b'a', b'b', b'c', 0x03, 0x00, 0x50, b'!', b'!', b'!', b'!', b'!'];
        assert_eq!(lz4_decompress(&stream, 17).unwrap(), b"abcabcabcabc!!!!!");
    }

    #[test]
    fn truncated_and_malformed_streams_fail() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let raw: Vec<u8> = (0..3000).map(|i| (i % 17) as u8 ^ (rng.gen::<u8>() & 1)).collect();
        let c = lz4_compress(&raw);
        for cut in [0, 1, c.len() / 2, c.len() - 1] {
            assert!(lz4_decompress(&c[..cut], raw.len()).is_err(), "cut {cut}");
        }
        assert!(matches!(
            lz4_decompress(&[0x00, 0x00, 0x00], 0),
            Err(Error::CorruptBlock(_))
        ));
        // offset pointing before the start of output
        assert!(matches!(
            lz4_decompress(&[0x10, b'x', 0x05, 0x00, 0x00], 5),
            Err(Error::CorruptBlock(_))
        ));
        // expected length disagrees with the stream
        assert!(matches!(lz4_decompress(&c, raw.len() + 1), Err(Error::OutputLength { .. })));
        assert!(matches!(lz4_decompress(&c, raw.len() - 1), Err(Error::CorruptBlock(_))));
    }

    proptest! {
        #[test]
        fn lossless(raw in prop::collection::vec(any::<u8>(), 0..4096)) {
            let c = lz4_compress(&raw);
            prop_assert_eq!(lz4_decompress(&c, raw.len()).unwrap(), raw);
        }

        #[test]
        fn lossless_on_low_entropy(raw in prop::collection::vec(0u8..3, 0..8192)) {
            let c = lz4_compress(&raw);
            prop_assert_eq!(lz4_decompress(&c, raw.len()).unwrap(), raw);
        }
    }
}
