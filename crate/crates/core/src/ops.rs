//! Raw kernels behind the layer kinds. All inputs are single samples:
//! dense layers see `[features]`, spatial layers see `[channels, h, w]`.

/// Geometry of a linear (weighted) layer, so that forward and transposed
/// products can be evaluated with arbitrary (e.g. rule-modified) weights.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LinearGeom {
    Dense {
        in_features: usize,
        out_features: usize,
    },
    Conv {
        in_shape: [usize; 3],
        out_shape: [usize; 3],
        kernel: usize,
        stride: usize,
        padding: usize,
    },
}

impl LinearGeom {
    pub fn in_len(&self) -> usize {
        match *self {
            LinearGeom::Dense { in_features, .. } => in_features,
            LinearGeom::Conv { in_shape, .. } => in_shape.iter().product(),
        }
    }

    pub fn out_len(&self) -> usize {
        match *self {
            LinearGeom::Dense { out_features, .. } => out_features,
            LinearGeom::Conv { out_shape, .. } => out_shape.iter().product(),
        }
    }

    /// `z = W x` (no bias).
    pub fn apply(&self, w: &[f64], x: &[f64]) -> Vec<f64> {
        let mut z = vec![0.0; self.out_len()];
        match *self {
            LinearGeom::Dense { in_features, .. } => {
                for (zj, row) in z.iter_mut().zip(w.chunks_exact(in_features)) {
                    *zj = row.iter().zip(x).map(|(a, b)| a * b).sum();
                }
            }
            LinearGeom::Conv {
                in_shape,
                out_shape,
                kernel,
                stride,
                padding,
            } => conv_loop(in_shape, out_shape, kernel, stride, padding, |o, i, wi| {
                z[o] += w[wi] * x[i];
            }),
        }
        z
    }

    /// `x̄ = Wᵀ z̄`.
    pub fn transpose(&self, w: &[f64], g: &[f64]) -> Vec<f64> {
        let mut gx = vec![0.0; self.in_len()];
        match *self {
            LinearGeom::Dense { in_features, .. } => {
                for (gj, row) in g.iter().zip(w.chunks_exact(in_features)) {
                    if *gj == 0.0 {
                        continue;
                    }
                    for (acc, wij) in gx.iter_mut().zip(row) {
                        *acc += wij * gj;
                    }
                }
            }
            LinearGeom::Conv {
                in_shape,
                out_shape,
                kernel,
                stride,
                padding,
            } => conv_loop(in_shape, out_shape, kernel, stride, padding, |o, i, wi| {
                gx[i] += w[wi] * g[o];
            }),
        }
        gx
    }

    /// `∂L/∂W` for upstream gradient `g` and layer input `x`.
    pub fn weight_grad(&self, g: &[f64], x: &[f64], w_len: usize) -> Vec<f64> {
        let mut gw = vec![0.0; w_len];
        match *self {
            LinearGeom::Dense { in_features, .. } => {
                for (gj, row) in g.iter().zip(gw.chunks_exact_mut(in_features)) {
                    if *gj == 0.0 {
                        continue;
                    }
                    for (acc, xi) in row.iter_mut().zip(x) {
                        *acc = gj * xi;
                    }
                }
            }
            LinearGeom::Conv {
                in_shape,
                out_shape,
                kernel,
                stride,
                padding,
            } => conv_loop(in_shape, out_shape, kernel, stride, padding, |o, i, wi| {
                gw[wi] += g[o] * x[i];
            }),
        }
        gw
    }

    /// Adds a per-output-channel (conv) or per-output (dense) bias in place.
    pub fn add_bias(&self, z: &mut [f64], b: &[f64]) {
        match *self {
            LinearGeom::Dense { .. } => {
                for (zj, bj) in z.iter_mut().zip(b) {
                    *zj += bj;
                }
            }
            LinearGeom::Conv { out_shape, .. } => {
                let plane = out_shape[1] * out_shape[2];
                for (c, chunk) in z.chunks_exact_mut(plane).enumerate() {
                    for v in chunk {
                        *v += b[c];
                    }
                }
            }
        }
    }

    /// Bias broadcast to the output layout.
    pub fn expand_bias(&self, b: &[f64]) -> Vec<f64> {
        let mut z = vec![0.0; self.out_len()];
        self.add_bias(&mut z, b);
        z
    }

    pub fn bias_grad(&self, g: &[f64]) -> Vec<f64> {
        match *self {
            LinearGeom::Dense { .. } => g.to_vec(),
            LinearGeom::Conv { out_shape, .. } => {
                let plane = out_shape[1] * out_shape[2];
                g.chunks_exact(plane).map(|c| c.iter().sum()).collect()
            }
        }
    }
}

/// Visits every (output index, input index, weight index) triple of a
/// zero-padded 2D convolution. Padding taps are skipped.
#[inline]
fn conv_loop(
    in_shape: [usize; 3],
    out_shape: [usize; 3],
    kernel: usize,
    stride: usize,
    padding: usize,
    mut f: impl FnMut(usize, usize, usize),
) {
    let [cin, h, w] = in_shape;
    let [cout, oh, ow] = out_shape;
    for oc in 0..cout {
        for ic in 0..cin {
            for kh in 0..kernel {
                for kw in 0..kernel {
                    let wi = ((oc * cin + ic) * kernel + kh) * kernel + kw;
                    for y in 0..oh {
                        let iy = (y * stride + kh) as isize - padding as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let in_row = (ic * h + iy as usize) * w;
                        let out_row = (oc * oh + y) * ow;
                        for x in 0..ow {
                            let ix = (x * stride + kw) as isize - padding as isize;
                            if ix < 0 || ix >= w as isize {
                                continue;
                            }
                            f(out_row + x, in_row + ix as usize, wi);
                        }
                    }
                }
            }
        }
    }
}

/// Calls `f(out_index, window_input_indices)` for each tiled pooling window.
pub fn pool_windows(in_shape: &[usize], size: usize, mut f: impl FnMut(usize, &[usize])) {
    let (c, h, w) = (in_shape[0], in_shape[1], in_shape[2]);
    let (oh, ow) = (h / size, w / size);
    let mut idx = Vec::with_capacity(size * size);
    for ch in 0..c {
        for y in 0..oh {
            for x in 0..ow {
                idx.clear();
                for dy in 0..size {
                    for dx in 0..size {
                        idx.push((ch * h + y * size + dy) * w + x * size + dx);
                    }
                }
                f((ch * oh + y) * ow + x, &idx);
            }
        }
    }
}

pub fn avg_pool(x: &[f64], in_shape: &[usize], size: usize) -> Vec<f64> {
    let mut out = vec![0.0; x.len() / (size * size)];
    let inv = 1.0 / (size * size) as f64;
    pool_windows(in_shape, size, |o, win| {
        out[o] = win.iter().map(|&i| x[i]).sum::<f64>() * inv;
    });
    out
}

/// Position of the winner of each window, first maximum in row-major order.
pub fn max_pool_argmax(x: &[f64], in_shape: &[usize], size: usize) -> Vec<usize> {
    let mut out = vec![0; x.len() / (size * size)];
    pool_windows(in_shape, size, |o, win| {
        let mut best = win[0];
        for &i in &win[1..] {
            if x[i] > x[best] {
                best = i;
            }
        }
        out[o] = best;
    });
    out
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|&z| (z - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn conv_transpose_is_adjoint() {
        let geom = LinearGeom::Conv {
            in_shape: [2, 5, 4],
            out_shape: [3, 3, 2],
            kernel: 3,
            stride: 2,
            padding: 1,
        };
        let w: Vec<f64> = (0..3 * 2 * 9).map(|i| ((i * 7 % 11) as f64) - 5.0).collect();
        let x: Vec<f64> = (0..40).map(|i| ((i * 3 % 13) as f64) / 4.0).collect();
        let g: Vec<f64> = (0..18).map(|i| ((i * 5 % 7) as f64) - 3.0).collect();
        let wx = geom.apply(&w, &x);
        let wtg = geom.transpose(&w, &g);
        let lhs: f64 = wx.iter().zip(&g).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.iter().zip(&wtg).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-9);
    }

    #[test]
    fn pooling() {
        let x = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(avg_pool(&x, &[1, 2, 2], 2), vec![2.5]);
        assert_eq!(max_pool_argmax(&[5.0, 5.0, 1.0, 0.0], &[1, 2, 2], 2), vec![0]);
    }
}
