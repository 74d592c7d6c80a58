//! Edge-by-edge reference for the dual local graph.
//!
//! Materializes every node and every edge explicitly and evaluates the
//! layer in `f64`. Membership is decided from the window definition on each
//! node pair, independently of [`NeighborIndex`](super::NeighborIndex).

use super::{DlgLayer, EdgeCounts};
use crate::error::{DlgError, Result};
use crate::nn::Conv;
use crate::tensor::{ParamStore, Scalar, Tensor};

/// Largest `(N + 1) H W` the oracle accepts.
pub const ORACLE_MAX_NODES: usize = 512;

#[derive(Clone, Debug)]
pub struct OracleOutput {
    pub out: Tensor,
    /// Edges actually materialized (in-bounds only).
    pub edges: EdgeCounts,
}

struct Linear {
    w: Vec<f64>,
    b: Vec<f64>,
    cin: usize,
}

impl Linear {
    fn from_conv(store: &ParamStore, conv: &Conv) -> Self {
        let w = store.value(conv.weight);
        Self {
            cin: w.shape()[1],
            w: w.data().iter().map(|&v| v as f64).collect(),
            b: store
                .value(conv.bias)
                .data()
                .iter()
                .map(|&v| v as f64)
                .collect(),
        }
    }

    fn apply(&self, x: &[f64]) -> Vec<f64> {
        self.b
            .iter()
            .enumerate()
            .map(|(o, &b)| {
                b + (0..self.cin)
                    .map(|i| self.w[o * self.cin + i] * x[i])
                    .sum::<f64>()
            })
            .collect()
    }
}

#[derive(Clone, Copy, PartialEq)]
enum Kind {
    Focal(usize),
    AllFocus,
}

struct Node {
    kind: Kind,
    y: usize,
    x: usize,
    h: Vec<f64>,
}

#[derive(Clone, Copy, PartialEq)]
enum EdgeKind {
    FocalFocal,
    FocalAll,
}

struct Edge {
    src: usize,
    dst: usize,
    kind: EdgeKind,
    logit: f64,
}

/// Whether the displacement `(dy, dx)` is the center or lies on the grid
/// of some dilated `k x k` window.
fn in_window(dy: isize, dx: isize, k: usize, dilations: &[usize]) -> bool {
    let r = (k as isize - 1) / 2;
    (dy, dx) == (0, 0)
        || dilations.iter().any(|&d| {
            let d = d as isize;
            dy % d == 0 && dx % d == 0 && (dy / d).abs() <= r && (dx / d).abs() <= r
        })
}

pub fn dense_oracle(
    layer: &DlgLayer,
    store: &ParamStore,
    f_f: &Tensor,
    f_a: &Tensor,
) -> Result<OracleOutput> {
    let [n, c, h, w] = f_f.dims4()?;
    let [na, ca, ha, wa] = f_a.dims4()?;
    if na != 1 || ca != c || (ha, wa) != (h, w) {
        return Err(DlgError::shape(
            "oracle inputs must be F_f [N,C,H,W] and F_a [1,C,H,W]",
        ));
    }
    let wide = |t: &Tensor| t.data().iter().map(|&v| v as f64).collect::<Vec<_>>();
    let (out, edges) = dense_oracle_f64(layer, store, &wide(f_f), &wide(f_a), [n, c, h, w])?;
    let out = Tensor::new(f_f.shape(), out.into_iter().map(|v| v as Scalar).collect())?;
    Ok(OracleOutput { out, edges })
}

/// [`dense_oracle`] on row-major `f64` buffers `F_f [N,C,H,W]` and
/// `F_a [1,C,H,W]`, returning `F_f'` in the same layout.
pub fn dense_oracle_f64(
    layer: &DlgLayer,
    store: &ParamStore,
    f_f: &[f64],
    f_a: &[f64],
    [n, c, h, w]: [usize; 4],
) -> Result<(Vec<f64>, EdgeCounts)> {
    if f_f.len() != n * c * h * w || f_a.len() != c * h * w {
        return Err(DlgError::shape(
            "oracle buffers do not match the given dimensions",
        ));
    }
    let total = (n + 1) * h * w;
    if total > ORACLE_MAX_NODES {
        return Err(DlgError::invalid(format!(
            "dense oracle refuses {total} nodes (limit {ORACLE_MAX_NODES})"
        )));
    }
    let cfg = &layer.config;
    let p = &layer.params;

    let mut nodes = Vec::with_capacity(total);
    for (kind, t, b) in (0..n)
        .map(|i| (Kind::Focal(i), f_f, i))
        .chain([(Kind::AllFocus, f_a, 0)])
    {
        for y in 0..h {
            for x in 0..w {
                let hv = (0..c).map(|ch| t[((b * c + ch) * h + y) * w + x]).collect();
                nodes.push(Node { kind, y, x, h: hv });
            }
        }
    }

    let theta_f = Linear::from_conv(store, &p.theta_f);
    let phi_f = Linear::from_conv(store, &p.phi_f);
    let g_f = Linear::from_conv(store, &p.g_f);
    let vphi_f = Linear::from_conv(store, &p.vphi_f);
    let theta_a = Linear::from_conv(store, &p.theta_a);
    let phi_a = Linear::from_conv(store, &p.phi_a);
    let g_a = Linear::from_conv(store, &p.g_a);
    let vphi_a = Linear::from_conv(store, &p.vphi_a);
    let psi_w: Vec<f64> = store
        .value(p.psi_w)
        .data()
        .iter()
        .map(|&v| v as f64)
        .collect();
    let psi_b = store.value(p.psi_b).data()[0] as f64;

    let mut edges = Vec::new();
    for (dst, u) in nodes.iter().enumerate() {
        if !matches!(u.kind, Kind::Focal(_)) {
            continue;
        }
        for (src, v) in nodes.iter().enumerate() {
            let dy = v.y as isize - u.y as isize;
            let dx = v.x as isize - u.x as isize;
            if !in_window(dy, dx, cfg.window.k, &cfg.window.dilations) {
                continue;
            }
            match v.kind {
                Kind::Focal(_) if cfg.use_ff => {
                    let a = theta_f.apply(&u.h);
                    let b = phi_f.apply(&v.h);
                    let logit = a.iter().zip(&b).map(|(x, y)| x * y).sum();
                    edges.push(Edge {
                        src,
                        dst,
                        kind: EdgeKind::FocalFocal,
                        logit,
                    });
                }
                Kind::AllFocus if cfg.use_fa => {
                    let mut cat = theta_a.apply(&u.h);
                    cat.extend(phi_a.apply(&v.h));
                    let logit = psi_b + cat.iter().zip(&psi_w).map(|(x, y)| x * y).sum::<f64>();
                    edges.push(Edge {
                        src,
                        dst,
                        kind: EdgeKind::FocalAll,
                        logit,
                    });
                }
                _ => {}
            }
        }
    }

    let counts = EdgeCounts {
        focal_focal: edges
            .iter()
            .filter(|e| e.kind == EdgeKind::FocalFocal)
            .count(),
        focal_all: edges
            .iter()
            .filter(|e| e.kind == EdgeKind::FocalAll)
            .count(),
    };

    let mut out = f_f.to_vec();
    for (dst, u) in nodes.iter().enumerate() {
        let Kind::Focal(i) = u.kind else { continue };
        let mut h_new = u.h.clone();
        for (kind, g, vphi) in [
            (EdgeKind::FocalFocal, &g_f, &vphi_f),
            (EdgeKind::FocalAll, &g_a, &vphi_a),
        ] {
            let incoming: Vec<&Edge> = edges
                .iter()
                .filter(|e| e.dst == dst && e.kind == kind)
                .collect();
            if incoming.is_empty() {
                continue;
            }
            let max = incoming
                .iter()
                .map(|e| e.logit)
                .fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = incoming.iter().map(|e| (e.logit - max).exp()).sum();
            let mut msg = vec![0.0; c];
            for e in &incoming {
                let alpha = (e.logit - max).exp() / z;
                for (m, gv) in msg.iter_mut().zip(g.apply(&nodes[e.src].h)) {
                    *m += alpha * gv;
                }
            }
            for (hn, d) in h_new.iter_mut().zip(vphi.apply(&msg)) {
                *hn += d;
            }
        }
        for (ch, &v) in h_new.iter().enumerate() {
            out[((i * c + ch) * h + u.y) * w + u.x] = v;
        }
    }
    Ok((out, counts))
}
