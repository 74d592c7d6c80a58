//! Single-node forms of the edge embeddings and the node update, evaluated
//! directly from the stored parameters.

use super::DlgLayer;
use crate::nn::Conv;
use crate::tensor::{ParamStore, Scalar};

fn linear(store: &ParamStore, conv: &Conv, x: &[Scalar]) -> Vec<f64> {
    let w = store.value(conv.weight);
    let b = store.value(conv.bias).data();
    let cin = w.shape()[1];
    b.iter()
        .enumerate()
        .map(|(o, &bo)| {
            bo as f64
                + w.data()[o * cin..(o + 1) * cin]
                    .iter()
                    .zip(x)
                    .map(|(&wv, &xv)| wv as f64 * xv as f64)
                    .sum::<f64>()
        })
        .collect()
}

/// `<theta_f(h_u), phi_f(h_v)>`.
pub fn edge_ff(layer: &DlgLayer, store: &ParamStore, h_u: &[Scalar], h_v: &[Scalar]) -> f64 {
    let a = linear(store, &layer.params.theta_f, h_u);
    let b = linear(store, &layer.params.phi_f, h_v);
    a.iter().zip(&b).map(|(x, y)| x * y).sum()
}

/// `psi([theta_a(h_u), phi_a(h_q)])` for the directed edge `q -> u`.
pub fn edge_fa(layer: &DlgLayer, store: &ParamStore, h_u: &[Scalar], h_q: &[Scalar]) -> f64 {
    let mut cat = linear(store, &layer.params.theta_a, h_u);
    cat.extend(linear(store, &layer.params.phi_a, h_q));
    let w = store.value(layer.params.psi_w).data();
    store.value(layer.params.psi_b).data()[0] as f64
        + cat.iter().zip(w).map(|(x, &y)| x * y as f64).sum::<f64>()
}

/// `h_u + vphi_f(m_f) + vphi_a(m_a)`.
pub fn node_update(
    layer: &DlgLayer,
    store: &ParamStore,
    h_u: &[Scalar],
    m_f: &[Scalar],
    m_a: &[Scalar],
) -> Vec<f64> {
    let f = linear(store, &layer.params.vphi_f, m_f);
    let a = linear(store, &layer.params.vphi_a, m_a);
    h_u.iter()
        .zip(f.iter().zip(&a))
        .map(|(&h, (x, y))| h as f64 + x + y)
        .collect()
}
