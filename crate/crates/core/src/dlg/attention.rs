//! Fused windowed attention over the two local graphs.
//!
//! Both kernels work on pixel-major copies (`[B,H,W,C]`) so every edge is a
//! contiguous dot product. Attention weights are recomputed in the backward
//! pass instead of being stored.

use std::sync::Arc;

use super::window::{NeighborIndex, Offset};
use crate::tensor::{kernels, CustomOp, Scalar, Tensor};

fn to_pixel_major(t: &Tensor) -> Vec<Scalar> {
    let [b, c, h, w] = t.dims4().expect("rank-4 feature");
    let hw = h * w;
    let src = t.data();
    let mut out = vec![0.0 as Scalar; src.len()];
    for n in 0..b {
        for ch in 0..c {
            let plane = &src[(n * c + ch) * hw..(n * c + ch + 1) * hw];
            for (p, &v) in plane.iter().enumerate() {
                out[(n * hw + p) * c + ch] = v;
            }
        }
    }
    out
}

fn to_channel_major(data: &[Scalar], b: usize, c: usize, h: usize, w: usize) -> Tensor {
    let hw = h * w;
    let mut out = vec![0.0 as Scalar; data.len()];
    for n in 0..b {
        for p in 0..hw {
            let px = &data[(n * hw + p) * c..(n * hw + p + 1) * c];
            for (ch, &v) in px.iter().enumerate() {
                out[(n * c + ch) * hw + p] = v;
            }
        }
    }
    Tensor::new(&[b, c, h, w], out).expect("consistent dims")
}

#[inline]
fn dot(a: &[Scalar], b: &[Scalar]) -> f64 {
    kernels::dot(a, b) as f64
}

#[inline]
fn axpy(out: &mut [Scalar], alpha: f64, x: &[Scalar]) {
    let alpha = alpha as Scalar;
    for (o, &v) in out.iter_mut().zip(x) {
        *o += alpha * v;
    }
}

/// In-place softmax. The exponentials are taken in `Scalar` precision; the
/// normalization is exact for the values produced.
fn softmax_in_place(logits: &mut [f64]) {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut s = 0.0;
    for l in logits.iter_mut() {
        *l = ((*l - m) as Scalar).exp() as f64;
        s += *l;
    }
    for l in logits.iter_mut() {
        *l /= s;
    }
}

/// Pixel indices (within one `H x W` plane) of the in-bounds support of
/// `(y, x)`.
fn support_pixels(index: &[Offset], y: usize, x: usize, h: usize, w: usize, out: &mut Vec<usize>) {
    out.clear();
    for &o in index {
        if let Some((yy, xx)) = NeighborIndex::shifted(y, x, o, h, w) {
            out.push(yy * w + xx);
        }
    }
}

#[derive(Clone, Copy, Debug)]
struct Dims {
    n: usize,
    h: usize,
    w: usize,
    ce: usize,
}

/// Calls `visit(target, sources, alphas)` for every focal target; sources
/// are node indices `slice * H * W + pixel`.
fn focal_alphas(
    d: Dims,
    support: &[Offset],
    tf: &[Scalar],
    pf: &[Scalar],
    mut visit: impl FnMut(usize, &[usize], &[f64]),
) {
    let hw = d.h * d.w;
    let mut pix = Vec::new();
    let mut nodes = Vec::new();
    let mut logits = Vec::new();
    // location-major so the neighbor features are reused by all N targets
    for y in 0..d.h {
        for x in 0..d.w {
            support_pixels(support, y, x, d.h, d.w, &mut pix);
            nodes.clear();
            for &p in &pix {
                nodes.extend((0..d.n).map(|j| j * hw + p));
            }
            for i in 0..d.n {
                let u = i * hw + y * d.w + x;
                let tu = &tf[u * d.ce..(u + 1) * d.ce];
                logits.clear();
                logits.extend(
                    nodes
                        .iter()
                        .map(|&v| dot(tu, &pf[v * d.ce..(v + 1) * d.ce])),
                );
                softmax_in_place(&mut logits);
                visit(u, &nodes, &logits);
            }
        }
    }
}

/// `m^f` for targets `[N,C,H,W]` given `theta_f(F_f)`, `phi_f(F_f)` and
/// `g_f(F_f)`.
pub fn focal_attention_forward(
    support: &[Offset],
    tf: &Tensor,
    pf: &Tensor,
    vf: &Tensor,
) -> Tensor {
    let [n, ce, h, w] = tf.dims4().expect("rank-4");
    let cv = vf.shape()[1];
    let d = Dims { n, h, w, ce };
    let (tfp, pfp, vfp) = (to_pixel_major(tf), to_pixel_major(pf), to_pixel_major(vf));
    let mut out = vec![0.0 as Scalar; n * h * w * cv];
    focal_alphas(d, support, &tfp, &pfp, |u, nodes, alpha| {
        let acc = &mut out[u * cv..(u + 1) * cv];
        for (&v, &a) in nodes.iter().zip(alpha) {
            axpy(acc, a, &vfp[v * cv..(v + 1) * cv]);
        }
    });
    to_channel_major(&out, n, cv, h, w)
}

/// Per-target sum of focal-focal attention weights.
pub fn focal_attention_sums(support: &[Offset], tf: &Tensor, pf: &Tensor) -> Vec<f64> {
    let [n, ce, h, w] = tf.dims4().expect("rank-4");
    let d = Dims { n, h, w, ce };
    let mut sums = vec![0.0; n * h * w];
    focal_alphas(
        d,
        support,
        &to_pixel_major(tf),
        &to_pixel_major(pf),
        |u, _, a| {
            sums[u] = a.iter().sum();
        },
    );
    sums
}

#[derive(Debug)]
pub struct FocalAttentionOp {
    pub support: Arc<Vec<Offset>>,
}

impl CustomOp for FocalAttentionOp {
    fn name(&self) -> &'static str {
        "focal_attention"
    }

    fn backward(
        &self,
        inputs: &[&Tensor],
        _output: &Tensor,
        grad_out: &Tensor,
        needs: &[bool],
    ) -> Vec<Option<Tensor>> {
        let (tf, pf, vf) = (inputs[0], inputs[1], inputs[2]);
        let [n, ce, h, w] = tf.dims4().expect("rank-4");
        let cv = vf.shape()[1];
        let d = Dims { n, h, w, ce };
        let (tfp, pfp, vfp) = (to_pixel_major(tf), to_pixel_major(pf), to_pixel_major(vf));
        let gp = to_pixel_major(grad_out);
        let mut dtf = vec![0.0 as Scalar; tfp.len()];
        let mut dpf = vec![0.0 as Scalar; pfp.len()];
        let mut dvf = vec![0.0 as Scalar; vfp.len()];
        let mut dalpha = Vec::new();
        focal_alphas(d, &self.support, &tfp, &pfp, |u, nodes, alpha| {
            let gu = &gp[u * cv..(u + 1) * cv];
            dalpha.clear();
            let mut mean = 0.0;
            for (&v, &a) in nodes.iter().zip(alpha) {
                let da = dot(gu, &vfp[v * cv..(v + 1) * cv]);
                mean += a * da;
                dalpha.push(da);
                axpy(&mut dvf[v * cv..(v + 1) * cv], a, gu);
            }
            let tu = &tfp[u * ce..(u + 1) * ce];
            for ((&v, &a), &da) in nodes.iter().zip(alpha).zip(&dalpha) {
                let de = a * (da - mean);
                axpy(
                    &mut dtf[u * ce..(u + 1) * ce],
                    de,
                    &pfp[v * ce..(v + 1) * ce],
                );
                axpy(&mut dpf[v * ce..(v + 1) * ce], de, tu);
            }
        });
        let pick = |k: usize, data: Vec<Scalar>, c: usize| {
            needs[k].then(|| to_channel_major(&data, n, c, h, w))
        };
        vec![pick(0, dtf, ce), pick(1, dpf, ce), pick(2, dvf, cv)]
    }
}

/// Focal-all logits split as `s_u + r_q + b`, with `s_u = w1 . theta_a(h_u)`
/// and `r_q = w2 . phi_a(h_q)`.
struct AllFocusTerms {
    s: Vec<f64>,
    r: Vec<f64>,
    b: f64,
}

fn allfocus_terms(
    ta: &[Scalar],
    pa: &[Scalar],
    psi_w: &[Scalar],
    psi_b: Scalar,
    ce: usize,
) -> AllFocusTerms {
    let (w1, w2) = psi_w.split_at(ce);
    AllFocusTerms {
        s: ta.chunks(ce).map(|u| dot(u, w1)).collect(),
        r: pa.chunks(ce).map(|q| dot(q, w2)).collect(),
        b: psi_b as f64,
    }
}

fn allfocus_alphas(
    d: Dims,
    support: &[Offset],
    terms: &AllFocusTerms,
    mut visit: impl FnMut(usize, &[usize], &[f64]),
) {
    let hw = d.h * d.w;
    let mut pix = Vec::new();
    let mut logits = Vec::new();
    for y in 0..d.h {
        for x in 0..d.w {
            support_pixels(support, y, x, d.h, d.w, &mut pix);
            for i in 0..d.n {
                let u = i * hw + y * d.w + x;
                logits.clear();
                logits.extend(pix.iter().map(|&q| terms.s[u] + terms.r[q] + terms.b));
                softmax_in_place(&mut logits);
                visit(u, &pix, &logits);
            }
        }
    }
}

/// `m^a` for targets `[N,C,H,W]` given `theta_a(F_f)`, `phi_a(F_a)`,
/// `g_a(F_a)` and the edge projection `psi = (weight [2C'], bias [1])`.
pub fn allfocus_attention_forward(
    support: &[Offset],
    ta: &Tensor,
    pa: &Tensor,
    va: &Tensor,
    psi_w: &Tensor,
    psi_b: &Tensor,
) -> Tensor {
    let [n, ce, h, w] = ta.dims4().expect("rank-4");
    let cv = va.shape()[1];
    let d = Dims { n, h, w, ce };
    let terms = allfocus_terms(
        &to_pixel_major(ta),
        &to_pixel_major(pa),
        psi_w.data(),
        psi_b.data()[0],
        ce,
    );
    let vap = to_pixel_major(va);
    let mut out = vec![0.0 as Scalar; n * h * w * cv];
    allfocus_alphas(d, support, &terms, |u, pix, alpha| {
        let acc = &mut out[u * cv..(u + 1) * cv];
        for (&q, &a) in pix.iter().zip(alpha) {
            axpy(acc, a, &vap[q * cv..(q + 1) * cv]);
        }
    });
    to_channel_major(&out, n, cv, h, w)
}

pub fn allfocus_attention_sums(
    support: &[Offset],
    ta: &Tensor,
    pa: &Tensor,
    psi_w: &Tensor,
    psi_b: &Tensor,
) -> Vec<f64> {
    let [n, ce, h, w] = ta.dims4().expect("rank-4");
    let d = Dims { n, h, w, ce };
    let terms = allfocus_terms(
        &to_pixel_major(ta),
        &to_pixel_major(pa),
        psi_w.data(),
        psi_b.data()[0],
        ce,
    );
    let mut sums = vec![0.0; n * h * w];
    allfocus_alphas(d, support, &terms, |u, _, a| sums[u] = a.iter().sum());
    sums
}

#[derive(Debug)]
pub struct AllFocusAttentionOp {
    pub support: Arc<Vec<Offset>>,
}

impl CustomOp for AllFocusAttentionOp {
    fn name(&self) -> &'static str {
        "allfocus_attention"
    }

    fn backward(
        &self,
        inputs: &[&Tensor],
        _output: &Tensor,
        grad_out: &Tensor,
        needs: &[bool],
    ) -> Vec<Option<Tensor>> {
        let (ta, pa, va, psi_w, psi_b) = (inputs[0], inputs[1], inputs[2], inputs[3], inputs[4]);
        let [n, ce, h, w] = ta.dims4().expect("rank-4");
        let cv = va.shape()[1];
        let d = Dims { n, h, w, ce };
        let (tap, pap) = (to_pixel_major(ta), to_pixel_major(pa));
        let terms = allfocus_terms(&tap, &pap, psi_w.data(), psi_b.data()[0], ce);
        let vap = to_pixel_major(va);
        let gp = to_pixel_major(grad_out);
        let hw = h * w;
        let mut ds = vec![0.0f64; n * hw];
        let mut dr = vec![0.0f64; hw];
        let mut dva = vec![0.0 as Scalar; vap.len()];
        let mut dalpha = Vec::new();
        allfocus_alphas(d, &self.support, &terms, |u, pix, alpha| {
            let gu = &gp[u * cv..(u + 1) * cv];
            dalpha.clear();
            let mut mean = 0.0;
            for (&q, &a) in pix.iter().zip(alpha) {
                let da = dot(gu, &vap[q * cv..(q + 1) * cv]);
                mean += a * da;
                dalpha.push(da);
                axpy(&mut dva[q * cv..(q + 1) * cv], a, gu);
            }
            for ((&q, &a), &da) in pix.iter().zip(alpha).zip(&dalpha) {
                let de = a * (da - mean);
                ds[u] += de;
                dr[q] += de;
            }
        });
        let (w1, w2) = psi_w.data().split_at(ce);
        let mut dta = vec![0.0 as Scalar; tap.len()];
        let mut dpa = vec![0.0 as Scalar; pap.len()];
        let mut dw = vec![0.0f64; 2 * ce];
        for (u, &g) in ds.iter().enumerate() {
            axpy(&mut dta[u * ce..(u + 1) * ce], g, w1);
            for (k, &t) in tap[u * ce..(u + 1) * ce].iter().enumerate() {
                dw[k] += g * t as f64;
            }
        }
        for (q, &g) in dr.iter().enumerate() {
            axpy(&mut dpa[q * ce..(q + 1) * ce], g, w2);
            for (k, &p) in pap[q * ce..(q + 1) * ce].iter().enumerate() {
                dw[ce + k] += g * p as f64;
            }
        }
        let db: f64 = ds.iter().sum();
        let to = |v: Vec<f64>, shape: &[usize]| {
            Tensor::new(shape, v.into_iter().map(|x| x as Scalar).collect()).expect("shape")
        };
        vec![
            needs[0].then(|| to_channel_major(&dta, n, ce, h, w)),
            needs[1].then(|| to_channel_major(&dpa, 1, ce, h, w)),
            needs[2].then(|| to_channel_major(&dva, 1, cv, h, w)),
            needs[3].then(|| to(dw, &[2 * ce])),
            needs[4].then(|| to(vec![db], &[1])),
        ]
    }
}
