#![cfg_attr(feature = "double", allow(clippy::unnecessary_cast))]

use dlg_core::data::LightFieldSample;
use dlg_core::encoder::EncoderConfig;
use dlg_core::head::{total_loss, ConvGru, Decoder, Fsfa};
use dlg_core::model::{Fusion, ModelConfig, SaliencyModel};
use dlg_core::nn::Conv;
use dlg_core::tensor::ParamId;
use dlg_core::{Graph, ParamStore, Scalar, SeededRng, Tensor, Var};
use proptest::prelude::*;

fn set(store: &mut ParamStore, id: ParamId, f: impl Fn(usize) -> Scalar) {
    let shape = store.value(id).shape().to_vec();
    store.set_value(id, Tensor::from_fn(&shape, f)).unwrap();
}

fn rand(shape: &[usize], seed: u64) -> Tensor {
    Tensor::uniform(shape, 1.0, &mut SeededRng::new(seed))
}

fn small_config(steps: usize) -> ModelConfig {
    let mut cfg = ModelConfig {
        encoder: EncoderConfig {
            stage_channels: vec![4, 6, 6, 8],
            out_channels: 6,
        },
        steps,
        ..ModelConfig::default()
    };
    cfg.set_channels(6);
    cfg
}

fn sample(n: usize, hw: usize, seed: u64) -> LightFieldSample {
    let mut rng = SeededRng::new(seed);
    let allfocus = Tensor::uniform(&[3, hw, hw], 1.0, &mut rng).map(|v| v.abs());
    let slices = Tensor::uniform(&[n, 3, hw, hw], 1.0, &mut rng).map(|v| v.abs());
    let gt = Tensor::from_fn(&[1, hw, hw], |i| {
        let (y, x) = (i / hw, i % hw);
        ((y as isize - hw as isize / 2).pow(2) + (x as isize - hw as isize / 2).pow(2)
            < (hw * hw / 9) as isize) as u8 as Scalar
    });
    LightFieldSample::new(allfocus, slices, gt).unwrap()
}

// ---- FSFA ----

fn fsfa_run(store: &ParamStore, fsfa: &Fsfa, f: &Tensor) -> (Tensor, Tensor) {
    let mut g = Graph::new();
    let v = g.input(f.clone());
    let (o, a) = fsfa.forward(&mut g, store, v).unwrap();
    (g.value(o).clone(), g.value(a).clone())
}

fn new_fsfa(c: usize, seed: u64) -> (ParamStore, Fsfa) {
    let mut store = ParamStore::new();
    let fsfa = Fsfa::new(&mut store, "fsfa", c, &mut SeededRng::new(seed)).unwrap();
    (store, fsfa)
}

#[test]
fn fsfa_single_slice_is_identity() {
    let (store, fsfa) = new_fsfa(5, 1);
    let f = rand(&[1, 5, 4, 3], 2);
    let (o, a) = fsfa_run(&store, &fsfa, &f);
    assert!(a.data().iter().all(|&v| v == 1.0));
    assert_eq!(o.data(), f.data());
}

#[test]
fn fsfa_equal_logits_average() {
    let (mut store, fsfa) = new_fsfa(5, 1);
    set(&mut store, fsfa.reduce.weight, |_| 0.0);
    let f = rand(&[4, 5, 3, 3], 3);
    let (o, _) = fsfa_run(&store, &fsfa, &f);
    let [_, c, h, w] = f.dims4().unwrap();
    for i in 0..c * h * w {
        let mean: f64 = (0..4)
            .map(|n| f.data()[n * c * h * w + i] as f64)
            .sum::<f64>()
            / 4.0;
        assert!((o.data()[i] as f64 - mean).abs() < 1e-6);
    }
}

#[test]
fn fsfa_saturates_to_dominant_slice() {
    let (mut store, fsfa) = new_fsfa(3, 1);
    // logit = channel 0
    set(&mut store, fsfa.reduce.weight, |i| {
        if i == 0 {
            1.0
        } else {
            0.0
        }
    });
    let mut f = rand(&[4, 3, 2, 2], 4).map(|v| v * 0.5);
    for n in 0..4 {
        f.set4(n, 0, 1, 1, 0.0);
    }
    f.set4(2, 0, 1, 1, 20.0);
    let (o, _) = fsfa_run(&store, &fsfa, &f);
    for ch in 0..3 {
        let (got, want) = (o.at4(0, ch, 1, 1) as f64, f.at4(2, ch, 1, 1) as f64);
        assert!(
            (got - want).abs() <= 1e-6 * want.abs().max(1.0),
            "ch {ch}: {got} vs {want}"
        );
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn fsfa_convex_and_normalized(n in 1usize..5, c in 1usize..5, h in 1usize..5, w in 1usize..5, seed in 0u64..1000) {
        let (mut store, fsfa) = new_fsfa(c, seed);
        set(&mut store, fsfa.reduce.weight, {
            let t = rand(&[c], seed + 1);
            move |i| 4.0 * t.data()[i]
        });
        let f = rand(&[n, c, h, w], seed + 2).map(|v| 3.0 * v);
        let (o, a) = fsfa_run(&store, &fsfa, &f);
        for i in 0..h * w {
            let s: f64 = (0..n).map(|k| a.data()[k * h * w + i] as f64).sum();
            prop_assert!((s - 1.0).abs() <= 1e-6);
        }
        for ch in 0..c {
            for y in 0..h {
                for x in 0..w {
                    let vals: Vec<f64> = (0..n).map(|k| f.at4(k, ch, y, x) as f64).collect();
                    let lo = vals.iter().cloned().fold(f64::INFINITY, f64::min);
                    let hi = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    let v = o.at4(0, ch, y, x) as f64;
                    prop_assert!(v >= lo - 1e-6 && v <= hi + 1e-6);
                }
            }
        }
    }
}

// ---- ConvGRU ----

fn new_gru(c: usize, k: usize, seed: u64) -> (ParamStore, ConvGru) {
    let mut store = ParamStore::new();
    let gru = ConvGru::new(&mut store, "gru", c, k, &mut SeededRng::new(seed)).unwrap();
    (store, gru)
}

fn gru_run(store: &ParamStore, gru: &ConvGru, x: &Tensor, h: &Tensor) -> Tensor {
    let mut g = Graph::new();
    let (xv, hv) = (g.input(x.clone()), g.input(h.clone()));
    let out = gru.forward(&mut g, store, xv, hv).unwrap();
    g.value(out).clone()
}

/// `r` and the candidate `tanh(W_h [x, r h])` through separate graph ops.
fn gru_candidate(store: &ParamStore, gru: &ConvGru, x: &Tensor, h: &Tensor) -> Tensor {
    let mut g = Graph::new();
    let (xv, hv) = (g.input(x.clone()), g.input(h.clone()));
    let conv = |g: &mut Graph, c: &Conv, v: Var| c.forward(g, store, v).unwrap();
    let xh = g.concat_channels(&[xv, hv]).unwrap();
    let r = conv(&mut g, &gru.reset, xh);
    let r = g.sigmoid(r).unwrap();
    let rh = g.mul(r, hv).unwrap();
    let xrh = g.concat_channels(&[xv, rh]).unwrap();
    let c = conv(&mut g, &gru.candidate, xrh);
    let c = g.tanh(c).unwrap();
    g.value(c).clone()
}

#[test]
fn gru_closed_update_gate_keeps_state() {
    let (mut store, gru) = new_gru(4, 3, 1);
    set(&mut store, gru.update.weight, |_| 0.0);
    set(&mut store, gru.update.bias, |_| -200.0);
    let (x, h) = (rand(&[1, 4, 5, 5], 2), rand(&[1, 4, 5, 5], 3));
    assert_eq!(gru_run(&store, &gru, &x, &h).data(), h.data());
}

#[test]
fn gru_open_gates_give_candidate() {
    let (mut store, gru) = new_gru(4, 3, 1);
    for conv in [&gru.update, &gru.reset] {
        set(&mut store, conv.weight, |_| 0.0);
        set(&mut store, conv.bias, |_| 200.0);
    }
    let (x, h) = (
        rand(&[1, 4, 5, 5], 2),
        rand(&[1, 4, 5, 5], 3).map(|v| 5.0 * v),
    );
    let out = gru_run(&store, &gru, &x, &h);
    let cand = gru_candidate(&store, &gru, &x, &h);
    assert!(out.max_abs_diff(&cand) <= 1e-6);
    assert!(out.data().iter().all(|&v| v > -1.0 && v < 1.0));
}

#[test]
fn gru_scalar_hand_evaluation() {
    let (mut store, gru) = new_gru(1, 1, 1);
    // weights [w_x, w_h], bias
    let params = [
        (&gru.update, [0.5, -0.25], 0.1),
        (&gru.reset, [-0.3, 0.8], -0.2),
        (&gru.candidate, [1.2, 0.7], 0.05),
    ];
    for (conv, w, b) in params {
        set(&mut store, conv.weight, |i| w[i]);
        set(&mut store, conv.bias, |_| b);
    }
    let (x, h) = (0.6f64, -0.4f64);
    let sig = |v: f64| 1.0 / (1.0 + (-v).exp());
    let z = sig(0.5 * x - 0.25 * h + 0.1);
    let r = sig(-0.3 * x + 0.8 * h - 0.2);
    let c = (1.2 * x + 0.7 * r * h + 0.05).tanh();
    let expected = (1.0 - z) * h + z * c;
    let out = gru_run(
        &store,
        &gru,
        &Tensor::full(&[1, 1, 1, 1], x as Scalar),
        &Tensor::full(&[1, 1, 1, 1], h as Scalar),
    );
    assert!(
        (out.data()[0] as f64 - expected).abs() <= 1e-6,
        "{} vs {expected}",
        out.data()[0]
    );
}

#[test]
fn gru_rejects_mismatched_shapes_and_even_kernel() {
    let (store, gru) = new_gru(2, 3, 1);
    let mut g = Graph::new();
    let x = g.input(Tensor::zeros(&[1, 2, 4, 4]));
    let h = g.input(Tensor::zeros(&[1, 2, 4, 3]));
    assert!(gru.forward(&mut g, &store, x, h).is_err());
    let mut store = ParamStore::new();
    assert!(ConvGru::new(&mut store, "g", 2, 2, &mut SeededRng::new(0)).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(50))]

    #[test]
    fn gru_output_between_state_and_candidate(c in 1usize..4, hw in 1usize..5, seed in 0u64..1000) {
        let (store, gru) = new_gru(c, 3, seed);
        let (x, h) = (rand(&[1, c, hw, hw], seed + 1).map(|v| 2.0 * v), rand(&[1, c, hw, hw], seed + 2).map(|v| 2.0 * v));
        let out = gru_run(&store, &gru, &x, &h);
        let cand = gru_candidate(&store, &gru, &x, &h);
        for ((&o, &a), &b) in out.data().iter().zip(h.data()).zip(cand.data()) {
            prop_assert!(o >= a.min(b) - 1e-6 && o <= a.max(b) + 1e-6);
        }
    }
}

// ---- decoder and loss ----

#[test]
fn decoder_shape_range_and_scale_check() {
    let mut store = ParamStore::new();
    let dec = Decoder::new(&mut store, "dec", 4, Some(3), &mut SeededRng::new(1)).unwrap();
    let mut g = Graph::new();
    let f = g.input(rand(&[1, 4, 4, 4], 2));
    let low = g.input(rand(&[1, 3, 8, 8], 3));
    let out = dec.forward(&mut g, &store, f, low, (16, 16)).unwrap();
    assert_eq!(g.shape(out), &[1, 1, 16, 16]);
    assert!(g.value(out).data().iter().all(|&v| v > 0.0 && v < 1.0));
    let bad = g.input(rand(&[1, 3, 4, 4], 3));
    assert!(dec.forward(&mut g, &store, f, bad, (16, 16)).is_err());
}

#[test]
fn decoder_zero_skip_is_plain_conv_stack() {
    let mut store = ParamStore::new();
    let dec = Decoder::new(&mut store, "dec", 4, Some(3), &mut SeededRng::new(1)).unwrap();
    let mut g = Graph::new();
    let f = g.input(rand(&[1, 4, 4, 4], 2));
    let low = g.input(Tensor::zeros(&[1, 3, 8, 8]));
    let out = dec.forward(&mut g, &store, f, low, (16, 16)).unwrap();

    let mut x = g.resize(f, 8, 8).unwrap();
    for c in &dec.convs {
        x = c.forward_relu(&mut g, &store, x).unwrap();
    }
    let logit = dec.out.forward(&mut g, &store, x).unwrap();
    let up = g.resize(logit, 16, 16).unwrap();
    let expect = g.sigmoid(up).unwrap();
    assert_eq!(g.value(out).data(), g.value(expect).data());
}

#[test]
fn loss_values() {
    let gt = Tensor::from_fn(&[1, 1, 8, 8], |i| (i % 3 == 0) as u8 as Scalar);
    let mut g = Graph::new();
    let half = g.input(Tensor::full(&[1, 1, 8, 8], 0.5));
    let sides: Vec<Var> = (0..3)
        .map(|_| g.input(Tensor::full(&[1, 1, 2, 2], 0.5)))
        .collect();
    let (l, terms) = total_loss(&mut g, half, &sides, &gt).unwrap();
    assert_eq!(terms.len(), 4);
    for t in &terms {
        assert!((g.value(*t).data()[0] as f64 - std::f64::consts::LN_2).abs() < 1e-6);
    }
    assert!((g.value(l).data()[0] as f64 - 4.0 * std::f64::consts::LN_2).abs() < 1e-5);

    let mut g = Graph::new();
    let fin = g.input(gt.clone());
    let s = g.input(dlg_core::head::downsample_mask(&gt, 2, 2).unwrap());
    let (l, _) = total_loss(&mut g, fin, &[s, s, s], &gt).unwrap();
    assert!(
        (g.value(l).data()[0] as f64) <= 4.0 * 2e-7,
        "{}",
        g.value(l).data()[0]
    );

    let soft = gt.map(|v| 0.5 * v + 0.1);
    let mut g = Graph::new();
    let fin = g.input(soft.clone());
    assert!(total_loss(&mut g, fin, &[], &soft).is_err());
}

#[test]
fn downsampled_gt_stays_binary() {
    let gt = Tensor::from_fn(&[1, 1, 16, 16], |i| {
        ((i / 16) > 5 && (i % 16) < 9) as u8 as Scalar
    });
    let d = dlg_core::head::downsample_mask(&gt, 4, 4).unwrap();
    assert!(d.data().iter().all(|&v| v == 0.0 || v == 1.0));
}

// ---- full loop ----

fn build(cfg: &ModelConfig, seed: u64) -> (ParamStore, SaliencyModel) {
    let mut store = ParamStore::new();
    let m = SaliencyModel::new(&mut store, cfg, &mut SeededRng::new(seed)).unwrap();
    (store, m)
}

#[test]
fn zero_steps_rejected() {
    let (store, m) = build(&small_config(2), 1);
    let mut g = Graph::new();
    let f = g.input(rand(&[2, 6, 4, 4], 1));
    let a = g.input(rand(&[1, 6, 4, 4], 2));
    assert!(m.reciprocative_forward(&mut g, &store, f, a, 0).is_err());
    let mut cfg = small_config(2);
    cfg.steps = 0;
    assert!(SaliencyModel::new(&mut ParamStore::new(), &cfg, &mut SeededRng::new(0)).is_err());
}

#[test]
fn trace_lengths_and_side_range() {
    let (store, m) = build(&small_config(3), 1);
    let mut g = Graph::new();
    let s = sample(2, 16, 4);
    let (out, _, terms) = m.forward_loss(&mut g, &store, &s).unwrap();
    assert_eq!(out.trace.focal.len(), 4);
    assert_eq!(out.trace.allfocus.len(), 4);
    assert_eq!(out.trace.sides.len(), 3);
    assert_eq!(terms.len(), 4);
    for &sv in &out.trace.sides {
        assert_eq!(g.shape(sv), &[1, 1, 4, 4]);
        assert!(g.value(sv).data().iter().all(|&v| v > 0.0 && v < 1.0));
    }
    assert_eq!(g.shape(out.final_map), &[1, 1, 16, 16]);
}

#[test]
fn unroll_matches_manual_composition() {
    let mut cfg = small_config(2);
    cfg.dlg.zero_init_phi = false;
    let (store, m) = build(&cfg, 3);
    let (f0, a0) = (rand(&[3, 6, 4, 4], 1), rand(&[1, 6, 4, 4], 2));

    let mut g = Graph::new();
    let (f, a) = (g.input(f0.clone()), g.input(a0.clone()));
    let tr = m.reciprocative_forward(&mut g, &store, f, a, 2).unwrap();

    let mut h = Graph::new();
    let (f, a) = (h.input(f0), h.input(a0));
    let (f1, _, _, a1) = m.recip_step(&mut h, &store, f, a).unwrap();
    let (f2, o2, _, a2) = m.recip_step(&mut h, &store, f1, a1).unwrap();
    assert_eq!(g.value(tr.allfocus[2]).data(), h.value(a2).data());
    assert_eq!(g.value(tr.focal[2]).data(), h.value(f2).data());
    assert_eq!(g.value(tr.fused[1]).data(), h.value(o2).data());
    assert_eq!(g.value(tr.allfocus[1]).data(), h.value(a1).data());
}

#[test]
fn single_step_is_graph_fsfa_gru() {
    let mut cfg = small_config(1);
    cfg.dlg.zero_init_phi = false;
    let (store, m) = build(&cfg, 5);
    let (f0, a0) = (rand(&[2, 6, 4, 4], 1), rand(&[1, 6, 4, 4], 2));
    let mut g = Graph::new();
    let (f, a) = (g.input(f0.clone()), g.input(a0.clone()));
    let tr = m.reciprocative_forward(&mut g, &store, f, a, 1).unwrap();

    let mut h = Graph::new();
    let (f, a) = (h.input(f0), h.input(a0));
    let f1 = m
        .dlg
        .as_ref()
        .unwrap()
        .forward(&mut h, &store, f, a)
        .unwrap();
    let (o, _) = m.fsfa.forward(&mut h, &store, f1).unwrap();
    let a1 = m.gru.forward(&mut h, &store, o, a).unwrap();
    assert_eq!(g.value(tr.allfocus[1]).data(), h.value(a1).data());
}

#[test]
fn identity_settings_preserve_states() {
    let (mut store, m) = build(&small_config(3), 7);
    set(&mut store, m.gru.update.weight, |_| 0.0);
    set(&mut store, m.gru.update.bias, |_| -200.0);
    let (f0, a0) = (rand(&[2, 6, 4, 4], 1), rand(&[1, 6, 4, 4], 2));
    let mut g = Graph::new();
    let (f, a) = (g.input(f0.clone()), g.input(a0.clone()));
    let tr = m.reciprocative_forward(&mut g, &store, f, a, 3).unwrap();
    assert_eq!(g.value(tr.allfocus[3]).data(), a0.data());
    assert_eq!(g.value(tr.focal[3]).data(), f0.data());
}

/// Parameters whose gradient is zero whatever the data, up to roundoff:
/// the focal-all logit is `s_u + r_q + b` and the softmax over `q` cancels
/// `s_u` and `b`.
fn structurally_zero(name: &str) -> bool {
    name.starts_with("dlg.theta_a.") || name == "dlg.psi.b"
}

#[test]
fn gradients_reach_every_parameter_through_three_steps() {
    let mut cfg = small_config(3);
    cfg.dlg.zero_init_phi = false;
    let (mut store, m) = build(&cfg, 11);
    let s = sample(2, 16, 12);
    let mut g = Graph::new();
    let (_, loss, _) = m.forward_loss(&mut g, &store, &s).unwrap();
    store.zero_grads();
    g.backward_into(loss, &mut store).unwrap();
    let ce = cfg.dlg.edge_channels;
    let scale = store
        .iter()
        .filter_map(|p| p.grad.as_ref())
        .flat_map(|g| g.data().iter().map(|v| v.abs()))
        .fold(0.0, Scalar::max);
    let negligible = |v: &[Scalar]| v.iter().all(|x| x.abs() <= 1e-5 * scale);
    for p in store.iter() {
        let grad = p
            .grad
            .as_ref()
            .unwrap_or_else(|| panic!("{} has no gradient", p.name));
        if structurally_zero(&p.name) {
            assert!(negligible(grad.data()), "{}", p.name);
            continue;
        }
        if p.name == "dlg.psi.w" {
            assert!(negligible(&grad.data()[..ce]));
            assert!(!negligible(&grad.data()[ce..]));
            continue;
        }
        assert!(
            grad.data().iter().any(|&v| v != 0.0),
            "{} has an all-zero gradient",
            p.name
        );
    }
}

#[test]
fn skip_connection_affects_output() {
    let (store, m) = build(&small_config(2), 13);
    let s = sample(2, 16, 14);
    let mut g = Graph::new();
    let a = g.input(s.allfocus_batch());
    let f = g.input(s.slices.clone());
    let out = m.forward(&mut g, &store, a, f).unwrap();
    let last = *out.trace.allfocus.last().unwrap();
    let zero_low = g.input(Tensor::zeros(g.shape(out.lowlevel)));
    let no_skip = m
        .decoder
        .forward(&mut g, &store, last, zero_low, (16, 16))
        .unwrap();
    assert!(g.value(out.final_map).l2_distance(g.value(no_skip)) > 0.0);
}

#[test]
fn baselines_run() {
    for fusion in [Fusion::Concat, Fusion::Gru] {
        let mut cfg = small_config(5);
        cfg.fusion = fusion;
        let (store, m) = build(&cfg, 1);
        assert!(m.dlg.is_none());
        let pred = m.predict(&store, &sample(3, 16, 2)).unwrap();
        assert_eq!(pred.final_map.shape(), &[1, 1, 16, 16]);
        assert_eq!(pred.sides.len(), 1);
        assert!(pred.attention.is_empty());
    }
    let mut cfg = small_config(2);
    cfg.fusion = Fusion::Concat;
    let (store, _) = build(&cfg, 1);
    assert!(store.id_of("concat.w").is_some());
    assert_eq!(
        store.value(store.id_of("concat.w").unwrap()).shape()[1],
        13 * 6
    );
}
