//! Export a pruned toy network to a container and walk its entries.
//!
//! cargo run --release --example container_inspect

use east::codec::{MemoryReport, ModelContainer};
use east::export::export_container;
use east::pruning::{group_prune, SparsityTarget};
use east::quantize::calibrate_activations;
use east::trainer::Network;
use rand::SeedableRng;

fn main() -> east::Result<()> {
    let mut net = Network::toy((32, 32, 3), 10)?;
    net.init_he(&mut rand_chacha::ChaCha8Rng::seed_from_u64(1));
    for l in net.weighted_layers() {
        let p = net.params_mut(l).expect("weighted layer");
        let mask = group_prune(p.weight().data(), SparsityTarget::new(0.8)?, 8);
        p.set_mask(mask)?;
    }
    let probe: Vec<f32> = (0..32 * 32 * 3).map(|i| ((i % 17) as f32 - 8.0) / 8.0).collect();
    let acts = calibrate_activations(&net, [probe.as_slice()])?;
    let bytes = export_container(&net, &acts)?;

    let c = ModelContainer::parse(&bytes)?;
    println!("{} entries, header {} bytes", c.layer_count(), c.header_bytes());
    for (i, e) in c.entries().iter().enumerate() {
        println!(
            "{i:>2} {:<16} dims {:?} raw {} stored {} w_f {} a_f {}",
            e.kind.name(),
            e.dims,
            e.raw_len,
            e.compressed_len,
            e.weight_frac_bits,
            e.act_frac_bits
        );
    }
    let report = MemoryReport::of_container(&c);
    println!(
        "total {} bytes, compression ratio {:.2} against f32 weights",
        report.total_bytes,
        report.compression_ratio(net.float_bytes())
    );
    Ok(())
}
