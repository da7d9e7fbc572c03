use super::network::{Grads, Network};

/// Cosine-annealed learning rate for epoch `e` of `total`.
pub fn cosine_lr(e: usize, total: usize, lr0: f64) -> f64 {
    lr0 * 0.5 * (1.0 + (std::f64::consts::PI * e as f64 / total as f64).cos())
}

/// SGD with momentum. Weight decay applies to unpruned weights only; pruned
/// positions get neither gradient nor momentum.
#[derive(Debug, Clone)]
pub struct Sgd {
    momentum: f32,
    weight_decay: f32,
    velocity_w: Vec<Vec<f32>>,
    velocity_b: Vec<Vec<f32>>,
}

impl Sgd {
    pub fn new(net: &Network, momentum: f64, weight_decay: f64) -> Self {
        let zeros = Grads::zeros_like(net);
        Self {
            momentum: momentum as f32,
            weight_decay: weight_decay as f32,
            velocity_w: zeros.weight,
            velocity_b: zeros.bias,
        }
    }

    /// Apply already batch-averaged gradients.
    pub fn step(&mut self, net: &mut Network, grads: &Grads, lr: f64) {
        let lr = lr as f32;
        for layer in net.weighted_layers() {
            let p = net.params_mut(layer).expect("weighted layer");
            let keep = p.mask().keep().to_vec();
            let vw = &mut self.velocity_w[layer];
            let gw = &grads.weight[layer];
            for (j, w) in p.weight_mut().iter_mut().enumerate() {
                if !keep[j] {
                    *w = 0.0;
                    vw[j] = 0.0;
                    continue;
                }
                let g = gw[j] + self.weight_decay * *w;
                vw[j] = self.momentum * vw[j] + g;
                *w -= lr * vw[j];
            }
            let vb = &mut self.velocity_b[layer];
            for ((b, v), g) in p.bias_mut().iter_mut().zip(vb.iter_mut()).zip(&grads.bias[layer]) {
                *v = self.momentum * *v + g;
                *b -= lr * *v;
            }
        }
    }

    /// Drop momentum at positions a new mask prunes.
    pub fn reset_pruned(&mut self, net: &Network) {
        for layer in net.weighted_layers() {
            let keep = net.params(layer).expect("weighted layer").mask().keep();
            for (v, &k) in self.velocity_w[layer].iter_mut().zip(keep) {
                if !k {
                    *v = 0.0;
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cosine_examples() {
        assert!((cosine_lr(0, 200, 0.1) - 0.1).abs() < 1e-15);
        assert!(cosine_lr(200, 200, 0.1).abs() < 1e-15);
        assert!((cosine_lr(100, 200, 0.1) - 0.05).abs() < 1e-15);
        assert!((cosine_lr(20, 40, 0.1) - 0.05).abs() < 1e-15);
    }

    #[test]
    fn cosine_is_monotone() {
        let lrs: Vec<f64> = (0..=50).map(|e| cosine_lr(e, 50, 0.1)).collect();
        assert!(lrs.windows(2).all(|w| w[1] <= w[0]));
    }
}
