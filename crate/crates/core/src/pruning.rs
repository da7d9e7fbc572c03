//! Single-weight magnitude pruning and contiguous group pruning over
//! channel-last flattened weights.

use crate::error::{Error, Result};
use crate::tensor::{sum_squares, Tensor};

/// Fraction of positions to zero, in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct SparsityTarget(f64);

impl SparsityTarget {
    pub fn new(fraction: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&fraction) {
            return Err(Error::Config(format!("sparsity {fraction} outside [0, 1]")));
        }
        Ok(Self(fraction))
    }

    pub fn fraction(self) -> f64 {
        self.0
    }

    /// Number of positions that must be pruned out of `n`.
    pub fn count_of(self, n: usize) -> usize {
        // The epsilon absorbs representation error in products like 0.57 * 100.
        ((self.0 * n as f64) + 1e-9).floor().min(n as f64) as usize
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PruneMask {
    keep: Vec<bool>,
    group_size: usize,
}

impl PruneMask {
    pub fn all_keep(n: usize) -> Self {
        Self {
            keep: vec![true; n],
            group_size: 1,
        }
    }

    pub fn from_keep(keep: Vec<bool>, group_size: usize) -> Self {
        assert!(group_size >= 1, "group size must be positive");
        Self { keep, group_size }
    }

    /// Mask whose pruned set is exactly the zero entries of `values`.
    pub fn from_zeros(values: &[f32], group_size: usize) -> Self {
        Self::from_keep(values.iter().map(|&v| v != 0.0).collect(), group_size)
    }

    pub fn keep(&self) -> &[bool] {
        &self.keep
    }

    pub fn group_size(&self) -> usize {
        self.group_size
    }

    pub fn len(&self) -> usize {
        self.keep.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keep.is_empty()
    }

    pub fn pruned_count(&self) -> usize {
        self.keep.iter().filter(|k| !**k).count()
    }

    pub fn sparsity(&self) -> f64 {
        sparsity_of(self)
    }

    /// Zero `values` at pruned positions.
    pub fn apply_in_place(&self, values: &mut [f32]) {
        debug_assert_eq!(values.len(), self.keep.len());
        for (v, &k) in values.iter_mut().zip(&self.keep) {
            if !k {
                *v = 0.0;
            }
        }
    }
}

pub fn sparsity_of(m: &PruneMask) -> f64 {
    if m.keep.is_empty() {
        return 0.0;
    }
    m.pruned_count() as f64 / m.keep.len() as f64
}

/// Prune the `floor(target * N)` smallest-magnitude weights; ties go to the lower index.
pub fn magnitude_prune(flat: &[f32], target: SparsityTarget) -> PruneMask {
    let n_prune = target.count_of(flat.len());
    let mut order: Vec<usize> = (0..flat.len()).collect();
    // stable sort keeps lower indices first among equal magnitudes
    order.sort_by(|&a, &b| flat[a].abs().total_cmp(&flat[b].abs()));
    let mut keep = vec![true; flat.len()];
    for &i in &order[..n_prune] {
        keep[i] = false;
    }
    PruneMask::from_keep(keep, 1)
}

/// Prune whole groups of `gs` consecutive weights in ascending l2-norm order
/// until at least `floor(target * N)` weights are zero. The final group may be
/// shorter than `gs` and competes with its own norm.
pub fn group_prune(flat: &[f32], target: SparsityTarget, gs: usize) -> PruneMask {
    assert!(gs >= 1, "group size must be positive");
    let n = flat.len();
    let n_prune = target.count_of(n);
    // squared norms order identically to norms and are exact for gs = 1
    let norms: Vec<f64> = flat.chunks(gs).map(sum_squares).collect();
    let mut order: Vec<usize> = (0..norms.len()).collect();
    order.sort_by(|&a, &b| norms[a].total_cmp(&norms[b]));

    let mut keep = vec![true; n];
    let mut pruned = 0;
    for g in order {
        if pruned >= n_prune {
            break;
        }
        let start = g * gs;
        let end = (start + gs).min(n);
        keep[start..end].iter_mut().for_each(|k| *k = false);
        pruned += end - start;
    }
    PruneMask::from_keep(keep, gs)
}

pub fn apply_mask(t: &Tensor, m: &PruneMask) -> Result<Tensor> {
    if t.len() != m.len() {
        return Err(Error::LengthMismatch {
            expected: t.len(),
            data: m.len(),
        });
    }
    let mut data = t.data().to_vec();
    m.apply_in_place(&mut data);
    Tensor::new(t.shape().clone(), data)
}
