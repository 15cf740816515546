//! Dense CHW tensors and the handful of layers the predictor needs, each with
//! an explicit backward pass. Gradients are accumulated (`+=`) into caller
//! buffers so several uses of a parameter block can share one slice.

/// Channel-major feature map.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(c: usize, h: usize, w: usize) -> Self {
        Self {
            c,
            h,
            w,
            data: vec![0.0; c * h * w],
        }
    }

    pub fn from_vec(c: usize, h: usize, w: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), c * h * w, "tensor data length");
        Self { c, h, w, data }
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.c, self.h, self.w)
    }

    pub fn plane(&self, c: usize) -> &[f64] {
        let n = self.h * self.w;
        &self.data[c * n..(c + 1) * n]
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor::from_vec(self.c, self.h, self.w, self.data.iter().map(|&v| f(v)).collect())
    }

    /// Stacks `self` on top of `other` along the channel axis.
    pub fn concat(&self, other: &Tensor) -> Tensor {
        assert_eq!((self.h, self.w), (other.h, other.w), "concat spatial dims");
        let mut data = Vec::with_capacity(self.data.len() + other.data.len());
        data.extend_from_slice(&self.data);
        data.extend_from_slice(&other.data);
        Tensor::from_vec(self.c + other.c, self.h, self.w, data)
    }

    /// Inverse of [`Tensor::concat`]: the first `c` channels and the rest.
    pub fn split(&self, c: usize) -> (Tensor, Tensor) {
        let n = c * self.h * self.w;
        (
            Tensor::from_vec(c, self.h, self.w, self.data[..n].to_vec()),
            Tensor::from_vec(self.c - c, self.h, self.w, self.data[n..].to_vec()),
        )
    }
}

/// 3x3 convolution, stride 1, zero padding 1. `weight` is `[out][in][3][3]`.
pub fn conv3x3(input: &Tensor, weight: &[f64], bias: &[f64], out_c: usize) -> Tensor {
    let (ic, h, w) = (input.c, input.h, input.w);
    debug_assert_eq!(weight.len(), out_c * ic * 9);
    debug_assert_eq!(bias.len(), out_c);
    let mut out = Tensor::zeros(out_c, h, w);
    let n = h * w;
    for oc in 0..out_c {
        let dst = &mut out.data[oc * n..(oc + 1) * n];
        dst.iter_mut().for_each(|v| *v = bias[oc]);
        for c in 0..ic {
            let src = input.plane(c);
            let k = &weight[(oc * ic + c) * 9..(oc * ic + c + 1) * 9];
            for ky in 0..3 {
                for kx in 0..3 {
                    let wv = k[ky * 3 + kx];
                    if wv == 0.0 {
                        continue;
                    }
                    let (y0, y1) = valid_range(ky, h);
                    let (x0, x1) = valid_range(kx, w);
                    for y in y0..y1 {
                        let sy = y + ky - 1;
                        let drow = &mut dst[y * w + x0..y * w + x1];
                        let srow = &src[sy * w + x0 + kx - 1..sy * w + x1 + kx - 1];
                        for (d, s) in drow.iter_mut().zip(srow) {
                            *d += wv * s;
                        }
                    }
                }
            }
        }
    }
    out
}

/// Output rows (or columns) whose tap at kernel offset `k` stays inside `[0, n)`.
#[inline]
fn valid_range(k: usize, n: usize) -> (usize, usize) {
    match k {
        0 => (1.min(n), n),
        1 => (0, n),
        _ => (0, n.saturating_sub(1)),
    }
}

/// Backward of [`conv3x3`]. Accumulates into `grad_w` and `grad_b`; returns
/// the input gradient when `want_input` is set.
pub fn conv3x3_backward(
    input: &Tensor,
    weight: &[f64],
    grad_out: &Tensor,
    grad_w: &mut [f64],
    grad_b: &mut [f64],
    want_input: bool,
) -> Option<Tensor> {
    let (ic, h, w) = (input.c, input.h, input.w);
    let out_c = grad_out.c;
    let n = h * w;
    let mut gin = want_input.then(|| input.zeros_like());
    for oc in 0..out_c {
        let g = grad_out.plane(oc);
        grad_b[oc] += g.iter().sum::<f64>();
        for c in 0..ic {
            let src = input.plane(c);
            let base = (oc * ic + c) * 9;
            for ky in 0..3 {
                for kx in 0..3 {
                    let (y0, y1) = valid_range(ky, h);
                    let (x0, x1) = valid_range(kx, w);
                    let wv = weight[base + ky * 3 + kx];
                    let mut acc = 0.0;
                    for y in y0..y1 {
                        let sy = y + ky - 1;
                        let grow = &g[y * w + x0..y * w + x1];
                        let srow = &src[sy * w + x0 + kx - 1..sy * w + x1 + kx - 1];
                        acc += grow.iter().zip(srow).map(|(a, b)| a * b).sum::<f64>();
                        if let Some(gi) = gin.as_mut() {
                            let dst = &mut gi.data[c * n + sy * w + x0 + kx - 1..c * n + sy * w + x1 + kx - 1];
                            for (d, gv) in dst.iter_mut().zip(grow) {
                                *d += wv * gv;
                            }
                        }
                    }
                    grad_w[base + ky * 3 + kx] += acc;
                }
            }
        }
    }
    gin
}

/// 2x2 mean pooling with stride 2. Odd trailing rows/columns are dropped.
pub fn avg_pool2(input: &Tensor) -> Tensor {
    let (h, w) = (input.h / 2, input.w / 2);
    let mut out = Tensor::zeros(input.c, h, w);
    for c in 0..input.c {
        let src = input.plane(c);
        for y in 0..h {
            for x in 0..w {
                let i = 2 * y * input.w + 2 * x;
                out.data[(c * h + y) * w + x] =
                    0.25 * (src[i] + src[i + 1] + src[i + input.w] + src[i + input.w + 1]);
            }
        }
    }
    out
}

pub fn avg_pool2_backward(grad_out: &Tensor, in_h: usize, in_w: usize) -> Tensor {
    let mut gin = Tensor::zeros(grad_out.c, in_h, in_w);
    let (h, w) = (grad_out.h, grad_out.w);
    for c in 0..grad_out.c {
        for y in 0..h {
            for x in 0..w {
                let g = 0.25 * grad_out.data[(c * h + y) * w + x];
                let i = c * in_h * in_w + 2 * y * in_w + 2 * x;
                gin.data[i] += g;
                gin.data[i + 1] += g;
                gin.data[i + in_w] += g;
                gin.data[i + in_w + 1] += g;
            }
        }
    }
    gin
}

/// Source taps `(i0, i1, frac)` for bilinear resampling from `n_in` to `n_out`
/// with half-pixel centers and edge clamping. Mirror-symmetric.
fn bilinear_taps(n_in: usize, n_out: usize) -> Vec<(usize, usize, f64)> {
    let scale = n_in as f64 / n_out as f64;
    (0..n_out)
        .map(|o| {
            let s = ((o as f64 + 0.5) * scale - 0.5).clamp(0.0, (n_in - 1) as f64);
            let i0 = s.floor() as usize;
            let i1 = (i0 + 1).min(n_in - 1);
            (i0, i1, s - i0 as f64)
        })
        .collect()
}

/// Bilinear resize of every channel to `out_h x out_w`.
pub fn resize_bilinear(input: &Tensor, out_h: usize, out_w: usize) -> Tensor {
    let ys = bilinear_taps(input.h, out_h);
    let xs = bilinear_taps(input.w, out_w);
    let mut out = Tensor::zeros(input.c, out_h, out_w);
    for c in 0..input.c {
        let src = input.plane(c);
        for (oy, &(y0, y1, fy)) in ys.iter().enumerate() {
            for (ox, &(x0, x1, fx)) in xs.iter().enumerate() {
                let top = src[y0 * input.w + x0] * (1.0 - fx) + src[y0 * input.w + x1] * fx;
                let bot = src[y1 * input.w + x0] * (1.0 - fx) + src[y1 * input.w + x1] * fx;
                out.data[(c * out_h + oy) * out_w + ox] = top * (1.0 - fy) + bot * fy;
            }
        }
    }
    out
}

pub fn resize_bilinear_backward(grad_out: &Tensor, in_h: usize, in_w: usize) -> Tensor {
    let ys = bilinear_taps(in_h, grad_out.h);
    let xs = bilinear_taps(in_w, grad_out.w);
    let mut gin = Tensor::zeros(grad_out.c, in_h, in_w);
    for c in 0..grad_out.c {
        let base = c * in_h * in_w;
        for (oy, &(y0, y1, fy)) in ys.iter().enumerate() {
            for (ox, &(x0, x1, fx)) in xs.iter().enumerate() {
                let g = grad_out.data[(c * grad_out.h + oy) * grad_out.w + ox];
                gin.data[base + y0 * in_w + x0] += g * (1.0 - fy) * (1.0 - fx);
                gin.data[base + y0 * in_w + x1] += g * (1.0 - fy) * fx;
                gin.data[base + y1 * in_w + x0] += g * fy * (1.0 - fx);
                gin.data[base + y1 * in_w + x1] += g * fy * fx;
            }
        }
    }
    gin
}

/// Mean over rows and over `bins` equal column bands, per channel.
/// Output index is `channel * bins + band`.
pub fn column_pool(input: &Tensor, bins: usize) -> Vec<f64> {
    let edges = band_edges(input.w, bins);
    let mut out = vec![0.0; input.c * bins];
    for c in 0..input.c {
        let p = input.plane(c);
        for b in 0..bins {
            let (x0, x1) = (edges[b], edges[b + 1]);
            let mut s = 0.0;
            for y in 0..input.h {
                s += p[y * input.w + x0..y * input.w + x1].iter().sum::<f64>();
            }
            out[c * bins + b] = s / ((x1 - x0) * input.h) as f64;
        }
    }
    out
}

pub fn column_pool_backward(grad: &[f64], c: usize, h: usize, w: usize, bins: usize) -> Tensor {
    let edges = band_edges(w, bins);
    let mut gin = Tensor::zeros(c, h, w);
    for ch in 0..c {
        for b in 0..bins {
            let (x0, x1) = (edges[b], edges[b + 1]);
            let g = grad[ch * bins + b] / ((x1 - x0) * h) as f64;
            for y in 0..h {
                let row = ch * h * w + y * w;
                gin.data[row + x0..row + x1].iter_mut().for_each(|v| *v += g);
            }
        }
    }
    gin
}

/// Symmetric band boundaries: band b of a mirrored map is band `bins-1-b`.
fn band_edges(w: usize, bins: usize) -> Vec<usize> {
    (0..=bins)
        .map(|b| {
            if 2 * b <= bins {
                (b * w + bins / 2) / bins
            } else {
                w - ((bins - b) * w + bins / 2) / bins
            }
        })
        .collect()
}

/// `y = W x + b` with `W` stored row-major `[out][in]`.
pub fn linear(x: &[f64], weight: &[f64], bias: &[f64]) -> Vec<f64> {
    let n_in = x.len();
    bias.iter()
        .enumerate()
        .map(|(o, b)| b + weight[o * n_in..(o + 1) * n_in].iter().zip(x).map(|(w, v)| w * v).sum::<f64>())
        .collect()
}

pub fn linear_backward(
    x: &[f64],
    weight: &[f64],
    grad_out: &[f64],
    grad_w: &mut [f64],
    grad_b: &mut [f64],
) -> Vec<f64> {
    let n_in = x.len();
    let mut gx = vec![0.0; n_in];
    for (o, &g) in grad_out.iter().enumerate() {
        grad_b[o] += g;
        let row = &weight[o * n_in..(o + 1) * n_in];
        let grow = &mut grad_w[o * n_in..(o + 1) * n_in];
        for i in 0..n_in {
            grow[i] += g * x[i];
            gx[i] += g * row[i];
        }
    }
    gx
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// x * sigmoid(x).
pub fn silu(x: f64) -> f64 {
    x * sigmoid(x)
}

pub fn silu_grad(x: f64) -> f64 {
    let s = sigmoid(x);
    s * (1.0 + x * (1.0 - s))
}

/// Numerically stable ln(1 + e^x).
pub fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else if x < -30.0 {
        x.exp()
    } else {
        x.exp().ln_1p()
    }
}

pub fn softplus_inverse(y: f64) -> f64 {
    y + (-(-y).exp_m1()).ln()
}
