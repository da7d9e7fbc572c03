//! Per-sample float kernels over channel-last `(h, w, c)` activations.

/// `c = a * b + beta * c` for strided row/column layouts.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f32],
    (rsa, csa): (usize, usize),
    b: &[f32],
    (rsb, csb): (usize, usize),
    beta: f32,
    c: &mut [f32],
    (rsc, csc): (usize, usize),
) {
    if m == 0 || n == 0 {
        return;
    }
    let last = |rows: usize, cols: usize, rs: usize, cs: usize| (rows - 1) * rs + (cols - 1) * cs;
    if k == 0 {
        for i in 0..m {
            for j in 0..n {
                c[i * rsc + j * csc] *= beta;
            }
        }
        return;
    }
    assert!(last(m, k, rsa, csa) < a.len());
    assert!(last(k, n, rsb, csb) < b.len());
    assert!(last(m, n, rsc, csc) < c.len());
    // SAFETY: the asserts above bound every index the kernel touches.
    unsafe {
        matrixmultiply::sgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            rsc as isize,
            csc as isize,
        );
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct ConvGeom {
    pub in_h: usize,
    pub in_w: usize,
    pub in_c: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub out_h: usize,
    pub out_w: usize,
}

impl ConvGeom {
    pub fn patch_len(&self) -> usize {
        self.kernel * self.kernel * self.in_c
    }

    pub fn positions(&self) -> usize {
        self.out_h * self.out_w
    }
}

/// Unfold `x` into `(positions, kh * kw * c)` rows matching the weight layout.
pub(crate) fn im2col(x: &[f32], g: &ConvGeom, cols: &mut Vec<f32>) {
    let k = g.patch_len();
    cols.clear();
    cols.resize(g.positions() * k, 0.0);
    for oy in 0..g.out_h {
        for ox in 0..g.out_w {
            let row = &mut cols[(oy * g.out_w + ox) * k..][..k];
            for ky in 0..g.kernel {
                let iy = (oy * g.stride + ky) as isize - g.padding as isize;
                if iy < 0 || iy >= g.in_h as isize {
                    continue;
                }
                for kx in 0..g.kernel {
                    let ix = (ox * g.stride + kx) as isize - g.padding as isize;
                    if ix < 0 || ix >= g.in_w as isize {
                        continue;
                    }
                    let src = (iy as usize * g.in_w + ix as usize) * g.in_c;
                    let dst = (ky * g.kernel + kx) * g.in_c;
                    row[dst..dst + g.in_c].copy_from_slice(&x[src..src + g.in_c]);
                }
            }
        }
    }
}

pub(crate) fn col2im_add(dcols: &[f32], g: &ConvGeom, dx: &mut [f32]) {
    let k = g.patch_len();
    for oy in 0..g.out_h {
        for ox in 0..g.out_w {
            let row = &dcols[(oy * g.out_w + ox) * k..][..k];
            for ky in 0..g.kernel {
                let iy = (oy * g.stride + ky) as isize - g.padding as isize;
                if iy < 0 || iy >= g.in_h as isize {
                    continue;
                }
                for kx in 0..g.kernel {
                    let ix = (ox * g.stride + kx) as isize - g.padding as isize;
                    if ix < 0 || ix >= g.in_w as isize {
                        continue;
                    }
                    let dst = (iy as usize * g.in_w + ix as usize) * g.in_c;
                    let src = (ky * g.kernel + kx) * g.in_c;
                    for (d, s) in dx[dst..dst + g.in_c].iter_mut().zip(&row[src..src + g.in_c]) {
                        *d += s;
                    }
                }
            }
        }
    }
}

/// `out[p, o] = sum_k cols[p, k] * w[o, k] + b[o]`.
pub(crate) fn dense_forward(cols: &[f32], p: usize, k: usize, w: &[f32], b: &[f32], out: &mut Vec<f32>) {
    let o = b.len();
    out.clear();
    out.reserve(p * o);
    for _ in 0..p {
        out.extend_from_slice(b);
    }
    gemm(p, k, o, cols, (k, 1), w, (1, k), 1.0, out, (o, 1));
}

/// Accumulate `dw += dy^T cols`, `db += colsum(dy)`; optionally return `dcols = dy w`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn dense_backward(
    dy: &[f32],
    cols: &[f32],
    p: usize,
    k: usize,
    w: &[f32],
    dw: &mut [f32],
    db: &mut [f32],
    want_dcols: bool,
) -> Option<Vec<f32>> {
    let o = db.len();
    gemm(o, p, k, dy, (1, o), cols, (k, 1), 1.0, dw, (k, 1));
    for row in dy.chunks_exact(o) {
        for (d, g) in db.iter_mut().zip(row) {
            *d += g;
        }
    }
    want_dcols.then(|| {
        let mut dcols = vec![0.0; p * k];
        gemm(p, o, k, dy, (o, 1), w, (k, 1), 0.0, &mut dcols, (k, 1));
        dcols
    })
}

pub(crate) fn max_pool(x: &[f32], (h, w, c): (usize, usize, usize), size: usize, stride: usize) -> (Vec<f32>, Vec<u32>) {
    let oh = (h - size) / stride + 1;
    let ow = (w - size) / stride + 1;
    let mut out = vec![f32::NEG_INFINITY; oh * ow * c];
    let mut arg = vec![0u32; oh * ow * c];
    for oy in 0..oh {
        for ox in 0..ow {
            let o = (oy * ow + ox) * c;
            for ky in 0..size {
                for kx in 0..size {
                    let i = ((oy * stride + ky) * w + ox * stride + kx) * c;
                    for ch in 0..c {
                        // strict comparison keeps the first maximum
                        if x[i + ch] > out[o + ch] {
                            out[o + ch] = x[i + ch];
                            arg[o + ch] = (i + ch) as u32;
                        }
                    }
                }
            }
        }
    }
    (out, arg)
}

pub(crate) fn global_avg_pool(x: &[f32], (h, w, c): (usize, usize, usize)) -> Vec<f32> {
    let mut out = vec![0.0f32; c];
    for px in x.chunks_exact(c) {
        for (o, v) in out.iter_mut().zip(px) {
            *o += v;
        }
    }
    let inv = 1.0 / (h * w) as f32;
    out.iter_mut().for_each(|v| *v *= inv);
    out
}

/// Softmax cross-entropy; returns the loss and `d loss / d logits`.
pub(crate) fn softmax_xent(logits: &[f32], label: usize) -> (f32, Vec<f32>) {
    let max = logits.iter().copied().fold(f32::NEG_INFINITY, f32::max);
    let exps: Vec<f64> = logits.iter().map(|&z| f64::from(z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    let loss = (sum.ln() - f64::from(logits[label] - max)) as f32;
    let mut grad: Vec<f32> = exps.iter().map(|e| (e / sum) as f32).collect();
    grad[label] -= 1.0;
    (loss, grad)
}

/// Index of the largest logit; ties resolve to the lowest index.
pub fn argmax<T: PartialOrd + Copy>(xs: &[T]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate().skip(1) {
        if x > xs[best] {
            best = i;
        }
    }
    best
}
