use rayon::prelude::*;

use crate::error::Result;
use crate::export::quantized_records;
use crate::trainer::Network;

use super::container::{encode_block, header_len, LayerRecord, ModelContainer};

/// Flash footprint of a container, split into header and blocks.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MemoryReport {
    pub total_bytes: usize,
    /// Stored (compressed) bytes of every entry's block, in entry order.
    pub per_layer_bytes: Vec<usize>,
    /// Largest decoded parameter block.
    pub scratch_bytes: usize,
    pub header_bytes: usize,
}

impl MemoryReport {
    pub fn of_records(records: &[LayerRecord]) -> Self {
        let per_layer_bytes: Vec<usize> = records
            .par_iter()
            .map(|r| encode_block(&r.entry, &r.payload).len())
            .collect();
        let scratch_bytes = records
            .iter()
            .filter(|r| r.entry.kind.is_parameter_block())
            .map(|r| r.payload.len())
            .max()
            .unwrap_or(0);
        let header_bytes = header_len(records.len());
        Self {
            total_bytes: header_bytes + per_layer_bytes.iter().sum::<usize>(),
            per_layer_bytes,
            scratch_bytes,
            header_bytes,
        }
    }

    pub fn of_container(c: &ModelContainer<'_>) -> Self {
        Self {
            total_bytes: c.total_bytes(),
            per_layer_bytes: c.entries().iter().map(|e| e.compressed_len as usize).collect(),
            scratch_bytes: c.max_raw_len(),
            header_bytes: c.header_bytes(),
        }
    }

    /// Float model bytes over container bytes.
    pub fn compression_ratio(&self, float_bytes: usize) -> f64 {
        float_bytes as f64 / self.total_bytes as f64
    }
}

/// Quantize the (already masked) weights of `net`, compress every layer and
/// report the container size it would export to.
pub fn estimate_memory(net: &Network) -> Result<MemoryReport> {
    Ok(MemoryReport::of_records(&quantized_records(net, None)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codec::container::pack_container;
    use crate::trainer::LayerSpec;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small_net() -> Network {
        let mut net = Network::new(
            (8, 8, 4),
            vec![LayerSpec::conv(4, 16, 3, 1, 1), LayerSpec::Relu, LayerSpec::GlobalAvgPool, LayerSpec::Flatten, LayerSpec::fc(16, 256)],
        )
        .unwrap();
        net.init_he(&mut ChaCha8Rng::seed_from_u64(1));
        net
    }

    #[test]
    fn estimate_matches_packed_size() {
        let net = small_net();
        let report = estimate_memory(&net).unwrap();
        let bytes = pack_container(&quantized_records(&net, None).unwrap()).unwrap();
        assert_eq!(report.total_bytes, bytes.len());
        assert_eq!(report.total_bytes, report.header_bytes + report.per_layer_bytes.iter().sum::<usize>());
        assert_eq!(report.scratch_bytes, 16 * 256);
        let parsed = ModelContainer::parse(&bytes).unwrap();
        assert_eq!(MemoryReport::of_container(&parsed), report);
    }

    #[test]
    fn zeroed_layer_shrinks() {
        let mut net = small_net();
        let before = estimate_memory(&net).unwrap();
        net.params_mut(4).unwrap().weight_mut().fill(0.0);
        let after = estimate_memory(&net).unwrap();
        // entries: input, conv, bias, relu, gap, flatten, fc, bias
        let idx = 6;
        assert!(before.per_layer_bytes[idx] >= 4000);
        assert!(before.per_layer_bytes[idx] >= 50 * after.per_layer_bytes[idx]);
    }
}
