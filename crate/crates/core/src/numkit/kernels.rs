//! Raw loops behind the graph ops. All buffers are row-major slices.

/// `[n,k] x [k,m] -> [n,m]`
pub fn matmul(a: &[f64], b: &[f64], n: usize, k: usize, m: usize) -> Vec<f64> {
    let mut out = vec![0.0; n * m];
    for i in 0..n {
        let out_row = &mut out[i * m..(i + 1) * m];
        for (p, &av) in a[i * k..(i + 1) * k].iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            for (o, &bv) in out_row.iter_mut().zip(&b[p * m..(p + 1) * m]) {
                *o += av * bv;
            }
        }
    }
    out
}

/// `[n,k] x [m,k]^T -> [n,m]`
pub fn matmul_bt(a: &[f64], b: &[f64], n: usize, k: usize, m: usize) -> Vec<f64> {
    let mut out = vec![0.0; n * m];
    for i in 0..n {
        let ar = &a[i * k..(i + 1) * k];
        for j in 0..m {
            let br = &b[j * k..(j + 1) * k];
            out[i * m + j] = ar.iter().zip(br).map(|(x, y)| x * y).sum();
        }
    }
    out
}

/// `[k,n]^T x [k,m] -> [n,m]`
pub fn matmul_at(a: &[f64], b: &[f64], k: usize, n: usize, m: usize) -> Vec<f64> {
    let mut out = vec![0.0; n * m];
    for p in 0..k {
        let br = &b[p * m..(p + 1) * m];
        for i in 0..n {
            let av = a[p * n + i];
            if av == 0.0 {
                continue;
            }
            for (o, &bv) in out[i * m..(i + 1) * m].iter_mut().zip(br) {
                *o += av * bv;
            }
        }
    }
    out
}

pub fn transpose(a: &[f64], n: usize, m: usize) -> Vec<f64> {
    let mut out = vec![0.0; n * m];
    for i in 0..n {
        for j in 0..m {
            out[j * n + i] = a[i * m + j];
        }
    }
    out
}

/// Range of destination indices `o` in `[0, dst_len)` for which
/// `o * stride + offset - pad` lands inside `[0, src_len)`.
fn valid_range(offset: usize, stride: usize, pad: usize, src_len: usize, dst_len: usize) -> (usize, usize) {
    let lo = if pad > offset { (pad - offset).div_ceil(stride) } else { 0 };
    let hi = (src_len + pad).saturating_sub(offset).div_ceil(stride).min(dst_len);
    (lo, hi.max(lo))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeom {
    pub cin: usize,
    pub cout: usize,
    pub h: usize,
    pub w: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
}

impl ConvGeom {
    pub fn conv_out(&self) -> (usize, usize) {
        (
            (self.h + 2 * self.pad - self.k) / self.stride + 1,
            (self.w + 2 * self.pad - self.k) / self.stride + 1,
        )
    }

    pub fn deconv_out(&self) -> (usize, usize) {
        (
            (self.h - 1) * self.stride + self.k - 2 * self.pad,
            (self.w - 1) * self.stride + self.k - 2 * self.pad,
        )
    }
}

/// Visits every `(in_index, out_index)` pair a conv kernel tap connects.
/// `kernel` is laid out `[cout, cin, k, k]`; the callback receives the
/// flat weight index too.
#[inline]
fn conv_taps(g: &ConvGeom, mut f: impl FnMut(usize, usize, usize)) {
    let (oh, ow) = g.conv_out();
    for co in 0..g.cout {
        for ci in 0..g.cin {
            for ky in 0..g.k {
                let (oy0, oy1) = valid_range(ky, g.stride, g.pad, g.h, oh);
                for kx in 0..g.k {
                    let (ox0, ox1) = valid_range(kx, g.stride, g.pad, g.w, ow);
                    let widx = ((co * g.cin + ci) * g.k + ky) * g.k + kx;
                    for oy in oy0..oy1 {
                        let iy = oy * g.stride + ky - g.pad;
                        let in_base = (ci * g.h + iy) * g.w;
                        let out_base = (co * oh + oy) * ow;
                        for ox in ox0..ox1 {
                            let ix = ox * g.stride + kx - g.pad;
                            f(widx, in_base + ix, out_base + ox);
                        }
                    }
                }
            }
        }
    }
}

pub fn conv2d(g: &ConvGeom, input: &[f64], weight: &[f64], bias: &[f64]) -> Vec<f64> {
    let (oh, ow) = g.conv_out();
    let plane = oh * ow;
    let mut out = vec![0.0; g.cout * plane];
    for (co, chunk) in out.chunks_mut(plane).enumerate() {
        chunk.fill(bias[co]);
    }
    conv_taps(g, |wi, ii, oi| out[oi] += weight[wi] * input[ii]);
    out
}

/// Gradients of conv2d w.r.t. (input, weight, bias).
pub fn conv2d_backward(
    g: &ConvGeom,
    input: &[f64],
    weight: &[f64],
    grad_out: &[f64],
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let (oh, ow) = g.conv_out();
    let mut gin = vec![0.0; input.len()];
    let mut gw = vec![0.0; weight.len()];
    conv_taps(g, |wi, ii, oi| {
        let go = grad_out[oi];
        gin[ii] += weight[wi] * go;
        gw[wi] += input[ii] * go;
    });
    let gb = grad_out.chunks(oh * ow).map(|c| c.iter().sum()).collect();
    (gin, gw, gb)
}

/// Same tap structure for a transposed conv, kernel laid out `[cin, cout, k, k]`.
#[inline]
fn deconv_taps(g: &ConvGeom, mut f: impl FnMut(usize, usize, usize)) {
    let (oh, ow) = g.deconv_out();
    for ci in 0..g.cin {
        for co in 0..g.cout {
            for ky in 0..g.k {
                let (iy0, iy1) = valid_range(ky, g.stride, g.pad, oh, g.h);
                for kx in 0..g.k {
                    let (ix0, ix1) = valid_range(kx, g.stride, g.pad, ow, g.w);
                    let widx = ((ci * g.cout + co) * g.k + ky) * g.k + kx;
                    for iy in iy0..iy1 {
                        let oy = iy * g.stride + ky - g.pad;
                        let in_base = (ci * g.h + iy) * g.w;
                        let out_base = (co * oh + oy) * ow;
                        for ix in ix0..ix1 {
                            let ox = ix * g.stride + kx - g.pad;
                            f(widx, in_base + ix, out_base + ox);
                        }
                    }
                }
            }
        }
    }
}

pub fn conv_transpose2d(g: &ConvGeom, input: &[f64], weight: &[f64], bias: &[f64]) -> Vec<f64> {
    let (oh, ow) = g.deconv_out();
    let plane = oh * ow;
    let mut out = vec![0.0; g.cout * plane];
    for (co, chunk) in out.chunks_mut(plane).enumerate() {
        chunk.fill(bias[co]);
    }
    deconv_taps(g, |wi, ii, oi| out[oi] += weight[wi] * input[ii]);
    out
}

pub fn conv_transpose2d_backward(
    g: &ConvGeom,
    input: &[f64],
    weight: &[f64],
    grad_out: &[f64],
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let (oh, ow) = g.deconv_out();
    let mut gin = vec![0.0; input.len()];
    let mut gw = vec![0.0; weight.len()];
    deconv_taps(g, |wi, ii, oi| {
        let go = grad_out[oi];
        gin[ii] += weight[wi] * go;
        gw[wi] += input[ii] * go;
    });
    let gb = grad_out.chunks(oh * ow).map(|c| c.iter().sum()).collect();
    (gin, gw, gb)
}

/// Window `[start, end)` of output cell `i` out of `out` cells over `len` inputs.
pub fn pool_window(i: usize, out: usize, len: usize) -> (usize, usize) {
    (i * len / out, (i + 1) * len / out)
}

pub fn adaptive_avg_pool(input: &[f64], c: usize, h: usize, w: usize, oh: usize, ow: usize) -> Vec<f64> {
    let mut out = vec![0.0; c * oh * ow];
    for ch in 0..c {
        for oy in 0..oh {
            let (y0, y1) = pool_window(oy, oh, h);
            for ox in 0..ow {
                let (x0, x1) = pool_window(ox, ow, w);
                let mut acc = 0.0;
                for y in y0..y1 {
                    acc += input[(ch * h + y) * w + x0..(ch * h + y) * w + x1].iter().sum::<f64>();
                }
                out[(ch * oh + oy) * ow + ox] = acc / ((y1 - y0) * (x1 - x0)) as f64;
            }
        }
    }
    out
}

pub fn adaptive_avg_pool_backward(
    grad_out: &[f64],
    c: usize,
    h: usize,
    w: usize,
    oh: usize,
    ow: usize,
) -> Vec<f64> {
    let mut gin = vec![0.0; c * h * w];
    for ch in 0..c {
        for oy in 0..oh {
            let (y0, y1) = pool_window(oy, oh, h);
            for ox in 0..ow {
                let (x0, x1) = pool_window(ox, ow, w);
                let share = grad_out[(ch * oh + oy) * ow + ox] / ((y1 - y0) * (x1 - x0)) as f64;
                for y in y0..y1 {
                    for g in &mut gin[(ch * h + y) * w + x0..(ch * h + y) * w + x1] {
                        *g += share;
                    }
                }
            }
        }
    }
    gin
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh())
}

pub fn gelu_grad(x: f64) -> f64 {
    let t = (GELU_C * (x + GELU_A * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * x * x)
}

/// Numerically stable softmax of one row, written into `out`.
pub fn softmax_row(row: &[f64], out: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for (o, &x) in out.iter_mut().zip(row) {
        *o = (x - max).exp();
        sum += *o;
    }
    for o in out.iter_mut() {
        *o /= sum;
    }
}
