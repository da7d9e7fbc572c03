//! Scattered magnitude pruning against contiguous group pruning at the same
//! sparsity, measured by the LZ4 size of the quantized weights.
//!
//! cargo run --release --example pruning_patterns

use east::codec::lz4_compress;
use east::pruning::{group_prune, magnitude_prune, SparsityTarget};
use east::quantize::{choose_frac_bits_slice, quantize_slice};
use rand::SeedableRng;
use rand_distr::{Distribution, Normal};

fn encoded(weights: &[f32], keep: &[bool]) -> usize {
    let masked: Vec<f32> = weights.iter().zip(keep).map(|(w, k)| if *k { *w } else { 0.0 }).collect();
    let q = quantize_slice(&masked, choose_frac_bits_slice(&masked));
    lz4_compress(bytemuck::cast_slice(&q)).len()
}

fn main() -> east::Result<()> {
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
    let normal = Normal::new(0.0f32, 0.1).expect("valid std");
    let weights: Vec<f32> = (0..27_648).map(|_| normal.sample(&mut rng)).collect();

    println!("sparsity  scattered  gs=4  gs=8  gs=16");
    for s in [0.3, 0.5, 0.59, 0.7, 0.9] {
        let t = SparsityTarget::new(s)?;
        let scattered = encoded(&weights, magnitude_prune(&weights, t).keep());
        let grouped: Vec<usize> = [4, 8, 16]
            .iter()
            .map(|&gs| encoded(&weights, group_prune(&weights, t, gs).keep()))
            .collect();
        println!("{s:>8.2}  {scattered:>9}  {:>4}  {:>4}  {:>5}", grouped[0], grouped[1], grouped[2]);
    }
    Ok(())
}
