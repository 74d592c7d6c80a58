//! Straight-loop `f64` re-evaluation of a [`SaliencyModel`].
//!
//! Reads the same parameters as the graph model but shares none of its
//! kernels (the graph layer runs through the dense DLG oracle). Used as the
//! high-precision side of the end-to-end gradient check and as an
//! independent check of the forward pass.

use crate::data::LightFieldSample;
use crate::dlg::dense_oracle_f64;
use crate::encoder::Encoder;
use crate::error::{DlgError, Result};
use crate::head::downsample_mask;
use crate::model::{Fusion, SaliencyModel, CONCAT_SLICES};
use crate::nn::Conv;
use crate::tensor::{ParamStore, BCE_CLAMP};

/// One `[C,H,W]` feature map.
#[derive(Clone, Debug, PartialEq)]
pub struct Map {
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub data: Vec<f64>,
}

impl Map {
    pub fn zeros(c: usize, h: usize, w: usize) -> Self {
        Self {
            c,
            h,
            w,
            data: vec![0.0; c * h * w],
        }
    }

    fn at(&self, c: usize, y: usize, x: usize) -> f64 {
        self.data[(c * self.h + y) * self.w + x]
    }

    fn map(mut self, f: impl Fn(f64) -> f64) -> Self {
        self.data.iter_mut().for_each(|v| *v = f(*v));
        self
    }

    fn zip(mut self, other: &Map, f: impl Fn(f64, f64) -> f64) -> Self {
        debug_assert_eq!(self.data.len(), other.data.len());
        self.data
            .iter_mut()
            .zip(&other.data)
            .for_each(|(a, &b)| *a = f(*a, b));
        self
    }

    fn cat(&self, other: &Map) -> Map {
        let mut data = self.data.clone();
        data.extend_from_slice(&other.data);
        Map {
            c: self.c + other.c,
            h: self.h,
            w: self.w,
            data,
        }
    }
}

fn sigmoid(v: f64) -> f64 {
    1.0 / (1.0 + (-v).exp())
}

/// Zero-padded same-size convolution.
pub fn conv(store: &ParamStore, layer: &Conv, x: &Map) -> Map {
    let wt = store.value(layer.weight);
    let b = store.value(layer.bias).data();
    let (co, ci, k) = (wt.shape()[0], wt.shape()[1], layer.kernel);
    assert_eq!(ci, x.c, "conv input channels");
    let r = (k / 2) as isize;
    let wd = wt.data();
    let mut out = Map::zeros(co, x.h, x.w);
    for o in 0..co {
        for y in 0..x.h {
            for xx in 0..x.w {
                let mut acc = b[o] as f64;
                for c in 0..ci {
                    for ky in 0..k {
                        let sy = y as isize + ky as isize - r;
                        if sy < 0 || sy >= x.h as isize {
                            continue;
                        }
                        for kx in 0..k {
                            let sx = xx as isize + kx as isize - r;
                            if sx < 0 || sx >= x.w as isize {
                                continue;
                            }
                            acc += wd[((o * ci + c) * k + ky) * k + kx] as f64
                                * x.at(c, sy as usize, sx as usize);
                        }
                    }
                }
                out.data[(o * x.h + y) * x.w + xx] = acc;
            }
        }
    }
    out
}

fn conv_relu(store: &ParamStore, layer: &Conv, x: &Map) -> Map {
    conv(store, layer, x).map(|v| v.max(0.0))
}

pub fn maxpool2(x: &Map) -> Map {
    let (h, w) = (x.h / 2, x.w / 2);
    let mut out = Map::zeros(x.c, h, w);
    for c in 0..x.c {
        for y in 0..h {
            for xx in 0..w {
                let m = [(0, 0), (0, 1), (1, 0), (1, 1)]
                    .iter()
                    .map(|&(dy, dx)| x.at(c, 2 * y + dy, 2 * xx + dx))
                    .fold(f64::NEG_INFINITY, f64::max);
                out.data[(c * h + y) * w + xx] = m;
            }
        }
    }
    out
}

/// Source coordinate of output index `o` under half-pixel centers, clamped
/// at the edges, as `(lower, upper, weight of upper)`.
fn taps(o: usize, in_len: usize, out_len: usize) -> (usize, usize, f64) {
    let s = ((o as f64 + 0.5) * in_len as f64 / out_len as f64 - 0.5).max(0.0);
    let lo = (s.floor() as usize).min(in_len - 1);
    let hi = (lo + 1).min(in_len - 1);
    (lo, hi, if hi == lo { 0.0 } else { s - lo as f64 })
}

/// Bilinear resize with half-pixel centers and edge clamping.
pub fn resize(x: &Map, h: usize, w: usize) -> Map {
    if (h, w) == (x.h, x.w) {
        return x.clone();
    }
    let mut out = Map::zeros(x.c, h, w);
    for c in 0..x.c {
        for y in 0..h {
            let (y0, y1, fy) = taps(y, x.h, h);
            for xx in 0..w {
                let (x0, x1, fx) = taps(xx, x.w, w);
                let top = x.at(c, y0, x0) * (1.0 - fx) + x.at(c, y0, x1) * fx;
                let bot = x.at(c, y1, x0) * (1.0 - fx) + x.at(c, y1, x1) * fx;
                out.data[(c * h + y) * w + xx] = top * (1.0 - fy) + bot * fy;
            }
        }
    }
    out
}

/// `(fused, lowlevel)` of one image.
pub fn encoder(store: &ParamStore, enc: &Encoder, image: &Map) -> (Map, Map) {
    let mut stages = Vec::with_capacity(enc.convs.len());
    let mut cur = image.clone();
    for [a, b] in &enc.convs {
        cur = maxpool2(&conv_relu(store, b, &conv_relu(store, a, &cur)));
        stages.push(cur.clone());
    }
    let s = stages.len();
    let feats = &stages[s - 3..];
    let mut acc = conv(store, &enc.laterals[2], &feats[2]);
    for i in (0..2).rev() {
        let up = resize(&acc, feats[i].h, feats[i].w);
        acc = conv(store, &enc.laterals[i], &feats[i]).zip(&up, |a, b| a + b);
    }
    (conv(store, &enc.smooth, &acc), stages.swap_remove(0))
}

fn gru(store: &ParamStore, m: &SaliencyModel, x: &Map, h: &Map) -> Map {
    let xh = x.cat(h);
    let z = conv(store, &m.gru.update, &xh).map(sigmoid);
    let r = conv(store, &m.gru.reset, &xh).map(sigmoid);
    let rh = r.zip(h, |a, b| a * b);
    let cand = conv(store, &m.gru.candidate, &x.cat(&rh)).map(f64::tanh);
    let diff = cand.zip(h, |c, hv| c - hv);
    h.clone().zip(&z.zip(&diff, |zv, d| zv * d), |hv, s| hv + s)
}

/// Softmax over slices of a per-slice 1x1 logit, then the weighted sum.
fn fsfa(store: &ParamStore, m: &SaliencyModel, slices: &[Map]) -> Map {
    let logits: Vec<Map> = slices
        .iter()
        .map(|f| conv(store, &m.fsfa.reduce, f))
        .collect();
    let (c, h, w) = (slices[0].c, slices[0].h, slices[0].w);
    let mut out = Map::zeros(c, h, w);
    for p in 0..h * w {
        let mx = logits
            .iter()
            .map(|l| l.data[p])
            .fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = logits.iter().map(|l| (l.data[p] - mx).exp()).collect();
        let z: f64 = e.iter().sum();
        for ch in 0..c {
            out.data[ch * h * w + p] = slices
                .iter()
                .zip(&e)
                .map(|(f, a)| a / z * f.data[ch * h * w + p])
                .sum();
        }
    }
    out
}

#[derive(Clone, Debug)]
pub struct ReferenceOutput {
    /// `[H,W]` probabilities.
    pub final_map: Map,
    pub sides: Vec<Map>,
}

fn image(t: &crate::tensor::Tensor, index: usize, h: usize, w: usize) -> Map {
    let len = 3 * h * w;
    Map {
        c: 3,
        h,
        w,
        data: t.data()[index * len..(index + 1) * len]
            .iter()
            .map(|&v| v as f64)
            .collect(),
    }
}

pub fn forward(
    model: &SaliencyModel,
    store: &ParamStore,
    sample: &LightFieldSample,
) -> Result<ReferenceOutput> {
    let (h, w) = (sample.height(), sample.width());
    model.config.encoder.check_input(h, w)?;
    let (f_a0, low) = encoder(
        store,
        &model.encoders.allfocus,
        &image(&sample.allfocus, 0, h, w),
    );
    let focal: Vec<Map> = (0..sample.num_slices())
        .map(|i| {
            encoder(
                store,
                &model.encoders.focal,
                &image(&sample.slices, i, h, w),
            )
            .0
        })
        .collect();
    let n = focal.len();
    let side = |f: &Map| conv(store, &model.side.conv, f).map(sigmoid);

    let mut sides = Vec::new();
    let last = match model.config.fusion {
        Fusion::Dlg => {
            let layer = model
                .dlg
                .as_ref()
                .ok_or_else(|| DlgError::invalid("graph fusion without a graph layer"))?;
            let (c, fh, fw) = (f_a0.c, f_a0.h, f_a0.w);
            let mut f_f: Vec<f64> = focal.iter().flat_map(|m| m.data.iter().copied()).collect();
            let mut f_a = f_a0;
            for _ in 0..model.config.steps {
                f_f = dense_oracle_f64(layer, store, &f_f, &f_a.data, [n, c, fh, fw])?.0;
                let slices: Vec<Map> = f_f
                    .chunks(c * fh * fw)
                    .map(|d| Map {
                        c,
                        h: fh,
                        w: fw,
                        data: d.to_vec(),
                    })
                    .collect();
                let o = fsfa(store, model, &slices);
                f_a = gru(store, model, &o, &f_a);
                sides.push(side(&f_a));
            }
            f_a
        }
        Fusion::Concat => {
            let conv_layer = model
                .concat
                .as_ref()
                .ok_or_else(|| DlgError::invalid("concat fusion without its conv"))?;
            let mut cat = focal[0].clone();
            cat.c = 0;
            cat.data.clear();
            for i in 0..CONCAT_SLICES {
                cat = cat.cat(&focal[i * n / CONCAT_SLICES]);
            }
            let fused = conv_relu(store, conv_layer, &cat.cat(&f_a0));
            sides.push(side(&fused));
            fused
        }
        Fusion::Gru => {
            let mut state = f_a0;
            for f in &focal {
                state = gru(store, model, f, &state);
            }
            sides.push(side(&state));
            state
        }
    };

    let dec = &model.decoder;
    let mut x = resize(&last, low.h, low.w);
    if let Some(skip) = &dec.skip {
        x = x.zip(&conv(store, skip, &low), |a, b| a + b);
    }
    for c in &dec.convs {
        x = conv_relu(store, c, &x);
    }
    let logit = resize(&conv(store, &dec.out, &x), h, w);
    Ok(ReferenceOutput {
        final_map: logit.map(sigmoid),
        sides,
    })
}

fn bce(pred: &Map, target: &[f64]) -> f64 {
    let lo = BCE_CLAMP as f64;
    let sum: f64 = pred
        .data
        .iter()
        .zip(target)
        .map(|(&p, &t)| {
            let q = p.clamp(lo, 1.0 - lo);
            -(t * q.ln() + (1.0 - t) * (1.0 - q).ln())
        })
        .sum();
    sum / pred.data.len() as f64
}

/// Training loss of `sample`: final-map BCE plus every side-map BCE.
pub fn loss(model: &SaliencyModel, store: &ParamStore, sample: &LightFieldSample) -> Result<f64> {
    let out = forward(model, store, sample)?;
    let gt = sample.gt_batch();
    let wide = |t: &crate::tensor::Tensor| t.data().iter().map(|&v| v as f64).collect::<Vec<_>>();
    let mut total = bce(&out.final_map, &wide(&gt));
    for s in &out.sides {
        total += bce(s, &wide(&downsample_mask(&gt, s.h, s.w)?));
    }
    Ok(total)
}
