//! Choosing a power-of-two binary point for 8-bit weights.
//!
//! cargo run --example binary_point

use east::quantize::{choose_frac_bits_slice, quantize_slice};

fn main() {
    let sets: [&[f32]; 4] = [&[-1.0, 0.5, 0.25], &[3.0], &[0.01, -0.02, 0.005], &[40.0, -90.0]];
    for xs in sets {
        let f = choose_frac_bits_slice(xs);
        let q = quantize_slice(xs, f);
        let back: Vec<f32> = q.iter().map(|v| f32::from(*v) / 2f32.powi(f)).collect();
        println!("{xs:?} -> f = {f}, q = {q:?}, dequantized {back:?}");
    }
}
