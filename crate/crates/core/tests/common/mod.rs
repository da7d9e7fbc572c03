//! Shared oracles for the integration and acceptance tests.
#![allow(dead_code)]

use east::trainer::{softmax_cross_entropy, Grads, LayerSpec, Network};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Shape3 = (usize, usize, usize);

/// Parameters in double precision, indexed like `Network` layers.
#[derive(Clone)]
pub struct Params64 {
    pub weight: Vec<Vec<f64>>,
    pub bias: Vec<Vec<f64>>,
}

pub fn params64(net: &Network) -> Params64 {
    let mut p = Params64 { weight: Vec::new(), bias: Vec::new() };
    for i in 0..net.layers().len() {
        match net.params(i) {
            Some(lp) => {
                p.weight.push(lp.weight().data().iter().map(|&v| f64::from(v)).collect());
                p.bias.push(lp.bias().data().iter().map(|&v| f64::from(v)).collect());
            }
            None => {
                p.weight.push(Vec::new());
                p.bias.push(Vec::new());
            }
        }
    }
    p
}

/// Logits plus the branch taken at every ReLU and max-pool window, so a
/// perturbation that crosses a kink can be detected.
pub fn forward64(net: &Network, p: &Params64, x: &[f32]) -> (Vec<f64>, Vec<usize>) {
    let mut branches = Vec::new();
    let mut acts: Vec<Vec<f64>> = vec![x.iter().map(|&v| f64::from(v)).collect()];
    let shapes = net.shapes();
    for (i, layer) in net.layers().iter().enumerate() {
        let a = &acts[i];
        let (h, w, c): Shape3 = shapes[i];
        let (oh, ow, oc) = shapes[i + 1];
        let out = match *layer {
            LayerSpec::Conv2d { kernel, stride, padding, .. } => {
                let mut out = vec![0.0; oh * ow * oc];
                for oy in 0..oh {
                    for ox in 0..ow {
                        for o in 0..oc {
                            let mut s = p.bias[i][o];
                            for ky in 0..kernel {
                                for kx in 0..kernel {
                                    let iy = (oy * stride + ky) as isize - padding as isize;
                                    let ix = (ox * stride + kx) as isize - padding as isize;
                                    if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                                        continue;
                                    }
                                    for ci in 0..c {
                                        s += p.weight[i][((o * kernel + ky) * kernel + kx) * c + ci]
                                            * a[(iy as usize * w + ix as usize) * c + ci];
                                    }
                                }
                            }
                            out[(oy * ow + ox) * oc + o] = s;
                        }
                    }
                }
                out
            }
            LayerSpec::FullyConnected { in_features, out_features } => (0..out_features)
                .map(|o| p.bias[i][o] + (0..in_features).map(|k| p.weight[i][o * in_features + k] * a[k]).sum::<f64>())
                .collect(),
            LayerSpec::Relu => {
                branches.extend(a.iter().map(|&v| usize::from(v > 0.0)));
                a.iter().map(|&v| v.max(0.0)).collect()
            }
            LayerSpec::MaxPool { size, stride } => {
                let mut out = vec![f64::NEG_INFINITY; oh * ow * oc];
                for oy in 0..oh {
                    for ox in 0..ow {
                        for ch in 0..c {
                            let mut arg = 0;
                            for ky in 0..size {
                                for kx in 0..size {
                                    let v = a[((oy * stride + ky) * w + ox * stride + kx) * c + ch];
                                    let o = &mut out[(oy * ow + ox) * c + ch];
                                    if v > *o {
                                        *o = v;
                                        arg = ky * size + kx;
                                    }
                                }
                            }
                            branches.push(arg);
                        }
                    }
                }
                out
            }
            LayerSpec::GlobalAvgPool => (0..c)
                .map(|ch| (0..h * w).map(|px| a[px * c + ch]).sum::<f64>() / (h * w) as f64)
                .collect(),
            LayerSpec::Flatten => a.clone(),
            LayerSpec::ResidualAdd { from } => a.iter().zip(&acts[from]).map(|(x, y)| x + y).collect(),
        };
        acts.push(out);
    }
    (acts.pop().unwrap(), branches)
}

fn xent64(logits: &[f64], label: usize) -> f64 {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = logits.iter().map(|z| (z - m).exp()).sum::<f64>().ln() + m;
    lse - logits[label]
}

fn batch_loss64(net: &Network, p: &Params64, batch: &[(Vec<f32>, usize)]) -> (f64, Vec<usize>) {
    let mut loss = 0.0;
    let mut branches = Vec::new();
    for (x, y) in batch {
        let (logits, b) = forward64(net, p, x);
        loss += xent64(&logits, *y);
        branches.extend(b);
    }
    (loss, branches)
}

pub fn small_net(seed: u64) -> Network {
    let mut net = Network::new(
        (6, 6, 2),
        vec![
            LayerSpec::conv(2, 4, 3, 1, 1),
            LayerSpec::Relu,
            LayerSpec::MaxPool { size: 2, stride: 2 },
            LayerSpec::conv(4, 4, 3, 1, 1),
            LayerSpec::Relu,
            LayerSpec::ResidualAdd { from: 3 },
            LayerSpec::conv(4, 5, 3, 2, 0),
            LayerSpec::GlobalAvgPool,
            LayerSpec::Flatten,
            LayerSpec::fc(5, 3),
        ],
    )
    .unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    net.init_he(&mut rng);
    for l in net.weighted_layers() {
        for b in net.params_mut(l).unwrap().bias_mut() {
            *b = rng.gen_range(-0.2..0.2);
        }
    }
    net
}

/// Outcome of one finite-difference comparison.
#[derive(Debug, Clone, Copy)]
pub struct GradCheck {
    pub max_rel_error: f64,
    pub checked: usize,
    pub parameters: usize,
    /// Perturbations that flipped a ReLU or pooling decision.
    pub kinks: usize,
}

/// Seeds whose perturbations stay clear of every ReLU and pooling switch.
pub const GRAD_SEEDS: [u64; 4] = [1, 4, 6, 7];

/// Compare backprop with central differences (step `h`) over every
/// parameter of `small_net(seed)` on a fixed batch.
pub fn gradient_check(seed: u64, h: f64) -> GradCheck {
    let net = small_net(seed);
    assert!(net.parameter_count() <= 1000, "{} parameters", net.parameter_count());

    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let batch: Vec<(Vec<f32>, usize)> = (0..3)
        .map(|k| ((0..72).map(|_| rng.gen_range(-1.0f32..1.0)).collect(), k % 3))
        .collect();

    let mut grads = Grads::zeros_like(&net);
    for (x, y) in &batch {
        let trace = net.trace(x).unwrap();
        let (_, dlogits) = softmax_cross_entropy(trace.logits(), *y);
        net.backward_sample(&trace, &dlogits, &mut grads);
    }

    let base = params64(&net);
    let mut worst: f64 = 0.0;
    let mut checked = 0;
    let mut kinks = 0;
    for layer in net.weighted_layers() {
        for is_bias in [false, true] {
            let len = if is_bias { base.bias[layer].len() } else { base.weight[layer].len() };
            for j in 0..len {
                let mut plus = base.clone();
                let mut minus = base.clone();
                let (pv, mv) = if is_bias {
                    (&mut plus.bias[layer][j], &mut minus.bias[layer][j])
                } else {
                    (&mut plus.weight[layer][j], &mut minus.weight[layer][j])
                };
                *pv += h;
                *mv -= h;
                let (lp, bp) = batch_loss64(&net, &plus, &batch);
                let (lm, bm) = batch_loss64(&net, &minus, &batch);
                if bp != bm {
                    kinks += 1;
                }
                let numeric = (lp - lm) / (2.0 * h);
                let analytic = f64::from(if is_bias { grads.bias[layer][j] } else { grads.weight[layer][j] });
                let rel = (numeric - analytic).abs() / numeric.abs().max(analytic.abs()).max(1e-4);
                worst = worst.max(rel);
                checked += 1;
            }
        }
    }
    GradCheck {
        max_rel_error: worst,
        checked,
        parameters: net.parameter_count(),
        kinks,
    }
}


/// Mixed LZ4 corpus: random bytes, sparse int8 weight blocks at several
/// densities, long runs, short repeats, and edge lengths around the
/// end-of-block limits.
pub fn lz4_corpus(count: usize, seed: u64) -> Vec<Vec<u8>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out: Vec<Vec<u8>> = (0..20).map(|n| (0..n as u8).map(|v| v % 3).collect()).collect();
    out.push(vec![0; 65_536 + 300]);
    out.push((0..70_000u32).map(|v| (v % 251) as u8).collect());
    while out.len() < count {
        let len = rng.gen_range(1..4096);
        let kind = rng.gen_range(0..5);
        let buf: Vec<u8> = match kind {
            0 => (0..len).map(|_| rng.gen()).collect(),
            1 => {
                let density: f64 = rng.gen_range(0.02..0.6);
                (0..len).map(|_| if rng.gen_bool(density) { rng.gen_range(-90i8..=90) as u8 } else { 0 }).collect()
            }
            2 => {
                let mut b = Vec::with_capacity(len);
                while b.len() < len {
                    let v: u8 = rng.gen();
                    let run = rng.gen_range(1..300);
                    b.extend(std::iter::repeat_n(v, run));
                }
                b.truncate(len);
                b
            }
            3 => {
                let period = rng.gen_range(1..40);
                let pat: Vec<u8> = (0..period).map(|_| rng.gen()).collect();
                (0..len).map(|i| pat[i % period]).collect()
            }
            _ => {
                let alphabet = rng.gen_range(2..8u8);
                (0..len).map(|_| rng.gen_range(0..alphabet)).collect()
            }
        };
        out.push(buf);
    }
    out
}
