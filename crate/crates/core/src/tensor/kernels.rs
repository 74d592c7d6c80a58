//! Raw numeric kernels over row-major slices. The autodiff graph wraps
//! these; they are public so oracles and benchmarks can call them directly.

use super::Scalar;

/// Dot product with eight partial sums so the loop vectorizes.
#[inline]
pub fn dot(a: &[Scalar], b: &[Scalar]) -> Scalar {
    let mut lanes = [0.0 as Scalar; 8];
    let (ca, cb) = (a.chunks_exact(8), b.chunks_exact(8));
    let tail: Scalar = ca
        .remainder()
        .iter()
        .zip(cb.remainder())
        .map(|(&x, &y)| x * y)
        .sum();
    for (xa, xb) in ca.zip(cb) {
        for k in 0..8 {
            lanes[k] += xa[k] * xb[k];
        }
    }
    lanes.iter().sum::<Scalar>() + tail
}

/// Output extent of a convolution along one axis.
pub fn conv_out_len(len: usize, k: usize, stride: usize, pad: usize) -> Option<usize> {
    let padded = len + 2 * pad;
    if padded < k || stride == 0 {
        return None;
    }
    Some((padded - k) / stride + 1)
}

/// Range of output positions `o` for which `o * stride + tap - pad` lands
/// inside `[0, len)`.
#[inline]
fn valid_range(
    out_len: usize,
    len: usize,
    tap: usize,
    stride: usize,
    pad: usize,
) -> (usize, usize) {
    // o*stride + tap >= pad  and  o*stride + tap - pad < len
    let lo = if tap >= pad {
        0
    } else {
        (pad - tap).div_ceil(stride)
    };
    let hi_excl = if len + pad > tap {
        (len + pad - tap).div_ceil(stride)
    } else {
        0
    };
    (lo.min(out_len), hi_excl.min(out_len))
}

pub struct ConvGeometry {
    pub input: [usize; 4],
    pub weight: [usize; 4],
    pub stride: usize,
    pub pad: usize,
    pub out_h: usize,
    pub out_w: usize,
}

impl ConvGeometry {
    pub fn output(&self) -> [usize; 4] {
        [self.input[0], self.weight[0], self.out_h, self.out_w]
    }
}

/// Cross-correlation with zero padding.
pub fn conv2d_forward(
    geo: &ConvGeometry,
    input: &[Scalar],
    weight: &[Scalar],
    bias: Option<&[Scalar]>,
) -> Vec<Scalar> {
    let [n, ci, h, w] = geo.input;
    let [co, _, kh, kw] = geo.weight;
    let (oh, ow, s, p) = (geo.out_h, geo.out_w, geo.stride, geo.pad);
    let mut out = vec![0.0 as Scalar; n * co * oh * ow];
    for b in 0..n {
        for o in 0..co {
            let plane = &mut out[(b * co + o) * oh * ow..(b * co + o + 1) * oh * ow];
            if let Some(bias) = bias {
                plane.fill(bias[o]);
            }
            for c in 0..ci {
                let src = &input[(b * ci + c) * h * w..(b * ci + c + 1) * h * w];
                for ky in 0..kh {
                    let (y0, y1) = valid_range(oh, h, ky, s, p);
                    for kx in 0..kw {
                        let wv = weight[((o * ci + c) * kh + ky) * kw + kx];
                        let (x0, x1) = valid_range(ow, w, kx, s, p);
                        if x0 >= x1 {
                            continue;
                        }
                        for oy in y0..y1 {
                            let iy = oy * s + ky - p;
                            let dst = &mut plane[oy * ow + x0..oy * ow + x1];
                            if s == 1 {
                                let ix0 = x0 + kx - p;
                                let row = &src[iy * w + ix0..iy * w + ix0 + (x1 - x0)];
                                for (d, &v) in dst.iter_mut().zip(row) {
                                    *d += wv * v;
                                }
                            } else {
                                for (i, d) in dst.iter_mut().enumerate() {
                                    let ix = (x0 + i) * s + kx - p;
                                    *d += wv * src[iy * w + ix];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

/// Gradients of [`conv2d_forward`]. `grad_input` is skipped when `None`.
pub fn conv2d_backward(
    geo: &ConvGeometry,
    input: &[Scalar],
    weight: &[Scalar],
    grad_out: &[Scalar],
    mut grad_input: Option<&mut [Scalar]>,
    grad_weight: &mut [Scalar],
    grad_bias: Option<&mut [Scalar]>,
) {
    let [n, ci, h, w] = geo.input;
    let [co, _, kh, kw] = geo.weight;
    let (oh, ow, s, p) = (geo.out_h, geo.out_w, geo.stride, geo.pad);
    if let Some(gb) = grad_bias {
        for b in 0..n {
            for o in 0..co {
                let plane = &grad_out[(b * co + o) * oh * ow..(b * co + o + 1) * oh * ow];
                gb[o] += plane.iter().map(|&v| v as f64).sum::<f64>() as Scalar;
            }
        }
    }
    for b in 0..n {
        for o in 0..co {
            let gplane = &grad_out[(b * co + o) * oh * ow..(b * co + o + 1) * oh * ow];
            for c in 0..ci {
                let base = (b * ci + c) * h * w;
                for ky in 0..kh {
                    let (y0, y1) = valid_range(oh, h, ky, s, p);
                    for kx in 0..kw {
                        let (x0, x1) = valid_range(ow, w, kx, s, p);
                        if x0 >= x1 {
                            continue;
                        }
                        let widx = ((o * ci + c) * kh + ky) * kw + kx;
                        let wv = weight[widx];
                        let mut acc = 0.0 as Scalar;
                        for oy in y0..y1 {
                            let iy = oy * s + ky - p;
                            let g = &gplane[oy * ow + x0..oy * ow + x1];
                            if s == 1 {
                                let ix0 = x0 + kx - p;
                                let start = base + iy * w + ix0;
                                let row = &input[start..start + (x1 - x0)];
                                acc += dot(g, row);
                                if let Some(gi) = grad_input.as_deref_mut() {
                                    let dst = &mut gi[start..start + (x1 - x0)];
                                    for (d, &gv) in dst.iter_mut().zip(g) {
                                        *d += wv * gv;
                                    }
                                }
                            } else {
                                for (i, &gv) in g.iter().enumerate() {
                                    let ix = (x0 + i) * s + kx - p;
                                    acc += gv * input[base + iy * w + ix];
                                    if let Some(gi) = grad_input.as_deref_mut() {
                                        gi[base + iy * w + ix] += wv * gv;
                                    }
                                }
                            }
                        }
                        grad_weight[widx] += acc;
                    }
                }
            }
        }
    }
}

/// 2x2 max pooling with stride 2 (floor). Returns values and flat argmax
/// positions into the input.
pub fn maxpool2_forward(dims: [usize; 4], input: &[Scalar]) -> (Vec<Scalar>, Vec<u32>) {
    let [n, c, h, w] = dims;
    let (oh, ow) = (h / 2, w / 2);
    let mut out = Vec::with_capacity(n * c * oh * ow);
    let mut arg = Vec::with_capacity(n * c * oh * ow);
    for plane in 0..n * c {
        let base = plane * h * w;
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best = base + 2 * oy * w + 2 * ox;
                for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                    let idx = base + (2 * oy + dy) * w + 2 * ox + dx;
                    // strict comparison: ties resolve to the first element
                    if input[idx] > input[best] {
                        best = idx;
                    }
                }
                out.push(input[best]);
                arg.push(best as u32);
            }
        }
    }
    (out, arg)
}

/// Source taps of half-pixel-center bilinear interpolation along one axis:
/// for each output index, `(i0, i1, frac)` with value `(1-frac)*x[i0] + frac*x[i1]`.
pub fn bilinear_taps(in_len: usize, out_len: usize) -> Vec<(usize, usize, Scalar)> {
    let scale = in_len as f64 / out_len as f64;
    (0..out_len)
        .map(|o| {
            let src = ((o as f64 + 0.5) * scale - 0.5).max(0.0);
            let i0 = (src.floor() as usize).min(in_len - 1);
            let i1 = (i0 + 1).min(in_len - 1);
            let frac = if i1 == i0 { 0.0 } else { src - i0 as f64 };
            (i0, i1, frac as Scalar)
        })
        .collect()
}

/// Bilinear resize of every `[h, w]` plane, half-pixel centers, edge clamp.
pub fn bilinear_forward(
    planes: usize,
    h: usize,
    w: usize,
    oh: usize,
    ow: usize,
    input: &[Scalar],
) -> Vec<Scalar> {
    if oh == h && ow == w {
        return input.to_vec();
    }
    let ty = bilinear_taps(h, oh);
    let tx = bilinear_taps(w, ow);
    let mut out = vec![0.0 as Scalar; planes * oh * ow];
    for p in 0..planes {
        let src = &input[p * h * w..(p + 1) * h * w];
        let dst = &mut out[p * oh * ow..(p + 1) * oh * ow];
        for (oy, &(y0, y1, fy)) in ty.iter().enumerate() {
            for (ox, &(x0, x1, fx)) in tx.iter().enumerate() {
                let top = src[y0 * w + x0] * (1.0 - fx) + src[y0 * w + x1] * fx;
                let bot = src[y1 * w + x0] * (1.0 - fx) + src[y1 * w + x1] * fx;
                dst[oy * ow + ox] = top * (1.0 - fy) + bot * fy;
            }
        }
    }
    out
}

pub fn bilinear_backward(
    planes: usize,
    h: usize,
    w: usize,
    oh: usize,
    ow: usize,
    grad_out: &[Scalar],
    grad_in: &mut [Scalar],
) {
    if oh == h && ow == w {
        for (d, &g) in grad_in.iter_mut().zip(grad_out) {
            *d += g;
        }
        return;
    }
    let ty = bilinear_taps(h, oh);
    let tx = bilinear_taps(w, ow);
    for p in 0..planes {
        let g = &grad_out[p * oh * ow..(p + 1) * oh * ow];
        let dst = &mut grad_in[p * h * w..(p + 1) * h * w];
        for (oy, &(y0, y1, fy)) in ty.iter().enumerate() {
            for (ox, &(x0, x1, fx)) in tx.iter().enumerate() {
                let gv = g[oy * ow + ox];
                dst[y0 * w + x0] += gv * (1.0 - fy) * (1.0 - fx);
                dst[y0 * w + x1] += gv * (1.0 - fy) * fx;
                dst[y1 * w + x0] += gv * fy * (1.0 - fx);
                dst[y1 * w + x1] += gv * fy * fx;
            }
        }
    }
}

/// Nearest-neighbor resize using the same half-pixel center mapping.
pub fn nearest_forward(
    planes: usize,
    h: usize,
    w: usize,
    oh: usize,
    ow: usize,
    input: &[Scalar],
) -> Vec<Scalar> {
    let map = |in_len: usize, out_len: usize| -> Vec<usize> {
        let scale = in_len as f64 / out_len as f64;
        (0..out_len)
            .map(|o| (((o as f64 + 0.5) * scale).floor() as usize).min(in_len - 1))
            .collect()
    };
    let my = map(h, oh);
    let mx = map(w, ow);
    let mut out = Vec::with_capacity(planes * oh * ow);
    for p in 0..planes {
        for &y in &my {
            for &x in &mx {
                out.push(input[p * h * w + y * w + x]);
            }
        }
    }
    out
}

/// Softmax over the middle axis of an `[outer, len, inner]` view,
/// max-subtracted.
pub fn softmax_forward(outer: usize, len: usize, inner: usize, input: &[Scalar]) -> Vec<Scalar> {
    let mut out = vec![0.0 as Scalar; input.len()];
    for o in 0..outer {
        for i in 0..inner {
            let at = |k: usize| (o * len + k) * inner + i;
            let mut m = Scalar::NEG_INFINITY;
            for k in 0..len {
                m = m.max(input[at(k)]);
            }
            let mut z = 0.0 as Scalar;
            for k in 0..len {
                let e = (input[at(k)] - m).exp();
                out[at(k)] = e;
                z += e;
            }
            for k in 0..len {
                out[at(k)] /= z;
            }
        }
    }
    out
}

pub fn softmax_backward(
    outer: usize,
    len: usize,
    inner: usize,
    output: &[Scalar],
    grad_out: &[Scalar],
    grad_in: &mut [Scalar],
) {
    for o in 0..outer {
        for i in 0..inner {
            let at = |k: usize| (o * len + k) * inner + i;
            let dot: Scalar = (0..len).map(|k| output[at(k)] * grad_out[at(k)]).sum();
            for k in 0..len {
                grad_in[at(k)] += output[at(k)] * (grad_out[at(k)] - dot);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn valid_range_matches_bruteforce() {
        for len in 1..7 {
            for k in 1..6 {
                for s in 1..4 {
                    for p in 0..3 {
                        let Some(out) = conv_out_len(len, k, s, p) else {
                            continue;
                        };
                        for tap in 0..k {
                            let brute: Vec<usize> = (0..out)
                                .filter(|&o| {
                                    let i = (o * s + tap) as isize - p as isize;
                                    i >= 0 && (i as usize) < len
                                })
                                .collect();
                            let (lo, hi) = valid_range(out, len, tap, s, p);
                            let got: Vec<usize> = (lo..hi).collect();
                            assert_eq!(got, brute, "len={len} k={k} s={s} p={p} tap={tap}");
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn maxpool_picks_max() {
        let x = [1.0, 5.0, 2.0, 0.0, 3.0, 4.0, 9.0, 8.0];
        let (v, a) = maxpool2_forward([1, 1, 2, 4], &x);
        assert_eq!(v, vec![5.0, 9.0]);
        assert_eq!(a, vec![1, 6]);
    }

    #[test]
    fn softmax_large_magnitudes_stay_normalized() {
        let x = [1e4, -1e4, 0.0, 1e4 - 1.0];
        let y = softmax_forward(1, 4, 1, &x);
        let s: Scalar = y.iter().sum();
        assert!((s - 1.0).abs() < 1e-6);
        assert!(y.iter().all(|v| v.is_finite() && *v >= 0.0));
    }
}
