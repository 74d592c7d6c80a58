#![cfg_attr(feature = "double", allow(clippy::unnecessary_cast))]

use dlg_core::checks::{
    gradcheck_model_config, gradcheck_options, gradcheck_sample, model_gradcheck, oracle_suite,
};
use dlg_core::model::{Fusion, SaliencyModel};
use dlg_core::reference::{self, resize, Map};
use dlg_core::tensor::gradcheck::{finite_difference_gradcheck, GradcheckOptions};
use dlg_core::{Graph, ParamStore, Scalar, SeededRng};

fn max_diff(a: &[f64], b: &[Scalar]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - *y as f64).abs())
        .fold(0.0, f64::max)
}

#[test]
fn reference_forward_matches_the_graph_model() {
    for fusion in [Fusion::Dlg, Fusion::Concat, Fusion::Gru] {
        for refine in [true, false] {
            let mut cfg = gradcheck_model_config(3);
            cfg.fusion = fusion;
            cfg.refine = refine;
            let mut store = ParamStore::new();
            let model = SaliencyModel::new(&mut store, &cfg, &mut SeededRng::new(4)).unwrap();
            let sample = gradcheck_sample(3, 16, 9).unwrap();
            let pred = model.predict(&store, &sample).unwrap();
            let r = reference::forward(&model, &store, &sample).unwrap();
            assert_eq!(r.sides.len(), pred.sides.len());
            let d = max_diff(&r.final_map.data, pred.final_map.data());
            assert!(d <= 1e-5, "{fusion} refine={refine}: final differs by {d}");
            for (a, b) in r.sides.iter().zip(&pred.sides) {
                assert!(max_diff(&a.data, b.data()) <= 1e-5, "{fusion}: side map");
            }

            let mut g = Graph::new();
            let (_, loss, _) = model.forward_loss(&mut g, &store, &sample).unwrap();
            let l32 = g.value(loss).data()[0] as f64;
            let l64 = reference::loss(&model, &store, &sample).unwrap();
            assert!((l32 - l64).abs() <= 1e-5 * l64.max(1.0), "{l32} vs {l64}");
        }
    }
}

#[test]
fn reference_resize_is_half_pixel_bilinear() {
    let x = Map {
        c: 1,
        h: 1,
        w: 2,
        data: vec![0.0, 4.0],
    };
    let up = resize(&x, 1, 4);
    assert_eq!(up.data, vec![0.0, 1.0, 3.0, 4.0]);
    let back = resize(&up, 1, 2);
    assert_eq!(back.data, vec![0.5, 3.5]);
}

#[test]
fn oracle_suite_agrees_with_fused_kernels() {
    let r = oracle_suite(12, 3).unwrap();
    assert_eq!(r.instances, 12);
    assert!(r.max_abs_diff <= 1e-5, "{r:?}");
    assert!(r.max_border_diff <= r.max_abs_diff);
}

#[test]
fn unrolled_model_gradients_match_finite_differences() {
    let cfg = gradcheck_model_config(2);
    let sample = gradcheck_sample(2, 16, 2).unwrap();
    let opts = GradcheckOptions {
        max_per_group: 24,
        ..gradcheck_options(1)
    };
    let report = model_gradcheck(&cfg, &sample, &opts, 5).unwrap();
    let names: Vec<&str> = report.groups.iter().map(|g| g.name.as_str()).collect();
    for prefix in ["enc_a.", "enc_f.", "dlg.", "fsfa.", "gru.", "side.", "dec."] {
        assert!(
            names.iter().any(|n| n.starts_with(prefix)),
            "no {prefix} group"
        );
    }
    assert!(
        report.max_rel_error <= 1e-3,
        "{} in {}",
        report.max_rel_error,
        report.worst_group
    );
}

#[test]
fn scaled_gradient_is_caught() {
    let cfg = gradcheck_model_config(1);
    let sample = gradcheck_sample(2, 16, 3).unwrap();
    let mut store = ParamStore::new();
    let model = SaliencyModel::new(&mut store, &cfg, &mut SeededRng::new(5)).unwrap();
    let mut g = Graph::new();
    let (_, loss, _) = model.forward_loss(&mut g, &store, &sample).unwrap();
    store.zero_grads();
    g.backward_into(loss, &mut store).unwrap();
    let id = store.id_of("dec.out.b").unwrap();
    let grad = store.get(id).grad.clone().unwrap();
    store.get_mut(id).grad = Some(grad.map(|v| v * 1.01));
    let opts = GradcheckOptions {
        max_per_group: 2,
        ..gradcheck_options(0)
    };
    let report =
        finite_difference_gradcheck(|s| reference::loss(&model, s, &sample), &mut store, &opts)
            .unwrap();
    let bad = report.iter().find(|r| r.name == "dec.out.b").unwrap();
    assert!((bad.max_rel_error - 0.01).abs() < 1e-3, "{bad:?}");
}
