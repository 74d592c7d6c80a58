#![cfg_attr(feature = "double", allow(clippy::unnecessary_cast))]

use dlg_core::tensor::gradcheck::{finite_difference_gradcheck, GradcheckOptions};
use dlg_core::tensor::kernels;
use dlg_core::{Graph, ParamStore, Result, Scalar, SeededRng, Tensor, Var};
use proptest::prelude::*;

/// Six nested loops, accumulated in f64.
fn naive_conv(x: &Tensor, w: &Tensor, b: &[Scalar], stride: usize, pad: usize) -> Tensor {
    let [n, ci, h, wd] = x.dims4().unwrap();
    let [co, _, kh, kw] = w.dims4().unwrap();
    let oh = (h + 2 * pad - kh) / stride + 1;
    let ow = (wd + 2 * pad - kw) / stride + 1;
    let mut out = Tensor::zeros(&[n, co, oh, ow]);
    for bn in 0..n {
        for (o, &bias) in b.iter().enumerate().take(co) {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = bias as f64;
                    for c in 0..ci {
                        for ky in 0..kh {
                            for kx in 0..kw {
                                let iy = (oy * stride + ky) as isize - pad as isize;
                                let ix = (ox * stride + kx) as isize - pad as isize;
                                if iy < 0 || ix < 0 || iy >= h as isize || ix >= wd as isize {
                                    continue;
                                }
                                acc += x.at4(bn, c, iy as usize, ix as usize) as f64
                                    * w.at4(o, c, ky, kx) as f64;
                            }
                        }
                    }
                    out.set4(bn, o, oy, ox, acc as Scalar);
                }
            }
        }
    }
    out
}

fn conv(x: &Tensor, w: &Tensor, b: &Tensor, stride: usize, pad: usize) -> Tensor {
    let mut g = Graph::new();
    let (xv, wv, bv) = (g.input(x.clone()), g.input(w.clone()), g.input(b.clone()));
    let y = g.conv2d(xv, wv, Some(bv), stride, pad).unwrap();
    g.value(y).clone()
}

#[test]
fn conv_1x1_identity_kernel() {
    let mut rng = SeededRng::new(1);
    let x = Tensor::uniform(&[2, 3, 5, 4], 1.0, &mut rng);
    let w = Tensor::from_fn(&[3, 3, 1, 1], |i| if i / 3 == i % 3 { 1.0 } else { 0.0 });
    let y = conv(&x, &w, &Tensor::zeros(&[3]), 1, 0);
    assert_eq!(y, x);
}

#[test]
fn conv_3x3_ones_interior_is_nine() {
    let x = Tensor::full(&[1, 1, 5, 5], 1.0);
    let w = Tensor::full(&[1, 1, 3, 3], 1.0);
    let y = conv(&x, &w, &Tensor::zeros(&[1]), 1, 1);
    assert_eq!(y.at4(0, 0, 2, 2), 9.0);
    assert_eq!(y.at4(0, 0, 0, 0), 4.0);
}

#[test]
fn conv_matches_naive_loops() {
    let mut rng = SeededRng::new(2);
    let x = Tensor::uniform(&[2, 1, 4, 4], 1.0, &mut rng);
    let w = Tensor::uniform(&[3, 1, 3, 3], 1.0, &mut rng);
    let b = Tensor::uniform(&[3], 1.0, &mut rng);
    let y = conv(&x, &w, &b, 1, 1);
    let r = naive_conv(&x, &w, b.data(), 1, 1);
    assert!(y.max_abs_diff(&r) <= 1e-6);
}

#[test]
fn conv_rejects_channel_mismatch() {
    let mut g = Graph::new();
    let x = g.input(Tensor::zeros(&[1, 2, 4, 4]));
    let w = g.input(Tensor::zeros(&[1, 3, 3, 3]));
    assert!(g.conv2d(x, w, None, 1, 1).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn conv_random_shapes(
        n in 1usize..=4, ci in 1usize..=8, co in 1usize..=8,
        h in 3usize..=16, w in 3usize..=16, k in prop::sample::select(vec![1usize, 3]),
        stride in 1usize..=2, seed in any::<u64>(),
    ) {
        let mut rng = SeededRng::new(seed);
        let x = Tensor::uniform(&[n, ci, h, w], 1.0, &mut rng);
        let wt = Tensor::uniform(&[co, ci, k, k], 1.0, &mut rng);
        let b = Tensor::uniform(&[co], 1.0, &mut rng);
        let pad = k / 2;
        let y = conv(&x, &wt, &b, stride, pad);
        let r = naive_conv(&x, &wt, b.data(), stride, pad);
        prop_assert!(y.max_abs_diff(&r) <= 1e-5);
    }

    #[test]
    fn softmax_normalized_for_large_logits(
        v in proptest::collection::vec(-1e4f64..1e4, 1..12),
    ) {
        let len = v.len();
        let x = Tensor::new(&[1, len], v.iter().map(|&a| a as Scalar).collect()).unwrap();
        let mut g = Graph::new();
        let xv = g.input(x);
        let y = g.softmax(xv, 1).unwrap();
        let out = g.value(y).data();
        prop_assert!(out.iter().all(|&p| p >= 0.0));
        let s: f64 = out.iter().map(|&p| p as f64).sum();
        prop_assert!((s - 1.0).abs() <= 1e-6);
    }
}

fn softmax_of(v: &[Scalar]) -> Vec<Scalar> {
    let mut g = Graph::new();
    let x = g.input(Tensor::new(&[v.len()], v.to_vec()).unwrap());
    let y = g.softmax(x, 0).unwrap();
    g.value(y).data().to_vec()
}

#[test]
fn softmax_examples() {
    for p in softmax_of(&[0.3; 4]) {
        assert!((p - 0.25).abs() < 1e-7);
    }
    assert_eq!(softmax_of(&[-7.0]), vec![1.0]);
    let p = softmax_of(&[0.0, (3.0 as Scalar).ln()]);
    assert!((p[0] - 0.25).abs() < 1e-6 && (p[1] - 0.75).abs() < 1e-6);
}

fn resize(x: &Tensor, h: usize, w: usize) -> Tensor {
    let mut g = Graph::new();
    let xv = g.input(x.clone());
    let y = g.resize(xv, h, w).unwrap();
    g.value(y).clone()
}

#[test]
fn bilinear_identity_and_constant() {
    let mut rng = SeededRng::new(3);
    let x = Tensor::uniform(&[1, 2, 5, 7], 1.0, &mut rng);
    assert_eq!(resize(&x, 5, 7), x);
    let c = Tensor::full(&[1, 1, 3, 3], 0.625);
    for (h, w) in [(1, 1), (7, 2), (12, 12)] {
        assert!(resize(&c, h, w).data().iter().all(|&v| v == 0.625));
    }
}

#[test]
fn bilinear_2x2_to_4x4_half_pixel_table() {
    // Half-pixel centers: output index o samples source (o + 0.5) / 2 - 0.5,
    // clamped to [0, 1]: positions 0, 0.25, 0.75, 1. The value at (y, x) is
    // 2 * fy + fx for the grid [[0, 1], [2, 3]].
    let x = Tensor::new(&[1, 1, 2, 2], vec![0.0, 1.0, 2.0, 3.0]).unwrap();
    let f = [0.0, 0.25, 0.75, 1.0];
    let mut expected = Vec::new();
    for fy in f {
        for fx in f {
            expected.push(2.0 * fy + fx);
        }
    }
    let y = resize(&x, 4, 4);
    let want = Tensor::new(&[1, 1, 4, 4], expected).unwrap();
    assert!(y.max_abs_diff(&want) < 1e-7, "{:?}", y.data());
}

#[test]
fn nearest_keeps_binary_values() {
    let x = Tensor::from_fn(&[1, 1, 8, 8], |i| ((i * 7) % 3 == 0) as u8 as Scalar);
    let y = kernels::nearest_forward(1, 8, 8, 2, 2, x.data());
    assert!(y.iter().all(|&v| v == 0.0 || v == 1.0));
}

/// Every op gets a random-input finite-difference check through
/// `loss = sum(op(x) * r)` with a fixed random projection `r`. Piecewise ops
/// use a smaller step so no kink falls inside the difference interval.
fn check_op(
    name: &str,
    eps: f64,
    shapes: &[&[usize]],
    op: impl Fn(&mut Graph, &[Var]) -> Result<Var>,
) {
    let mut rng = SeededRng::new(name.len() as u64 * 31 + 7);
    let mut store = ParamStore::new();
    let ids: Vec<_> = shapes
        .iter()
        .enumerate()
        .map(|(i, s)| {
            store
                .add(format!("in{i}"), Tensor::uniform(s, 1.0, &mut rng))
                .unwrap()
        })
        .collect();
    let build = |store: &ParamStore| -> Result<(Graph, Var)> {
        let mut g = Graph::new();
        let vars: Vec<Var> = ids.iter().map(|&id| g.param(store, id)).collect();
        let y = op(&mut g, &vars)?;
        let mut prng = SeededRng::new(99);
        let r = Tensor::uniform(g.shape(y), 1.0, &mut prng);
        let rv = g.input(r);
        let p = g.mul(y, rv)?;
        let l = g.sum_all(p)?;
        Ok((g, l))
    };
    let (g, l) = build(&store).unwrap();
    g.backward_into(l, &mut store).unwrap();
    let opts = GradcheckOptions {
        eps,
        abs_floor: 1e-1,
        ..GradcheckOptions::default()
    };
    let report = finite_difference_gradcheck(
        |s| {
            let (g, l) = build(s)?;
            Ok(g.value(l).data()[0] as f64)
        },
        &mut store,
        &opts,
    )
    .unwrap();
    for group in report {
        assert!(
            group.max_rel_error <= 1e-3,
            "{name}/{}: rel {} abs {}",
            group.name,
            group.max_rel_error,
            group.max_abs_error
        );
    }
}

#[test]
fn gradcheck_every_op() {
    check_op(
        "conv",
        1e-2,
        &[&[2, 3, 5, 5], &[4, 3, 3, 3], &[4]],
        |g, v| g.conv2d(v[0], v[1], Some(v[2]), 1, 1),
    );
    check_op(
        "conv_strided",
        1e-2,
        &[&[1, 2, 6, 5], &[3, 2, 3, 3], &[3]],
        |g, v| g.conv2d(v[0], v[1], Some(v[2]), 2, 1),
    );
    check_op("maxpool", 1e-3, &[&[2, 2, 4, 6]], |g, v| g.maxpool2(v[0]));
    check_op("relu", 1e-3, &[&[3, 7]], |g, v| g.relu(v[0]));
    check_op("sigmoid", 1e-2, &[&[3, 7]], |g, v| g.sigmoid(v[0]));
    check_op("tanh", 1e-2, &[&[3, 7]], |g, v| g.tanh(v[0]));
    check_op("add", 1e-2, &[&[4], &[4]], |g, v| g.add(v[0], v[1]));
    check_op("sub", 1e-2, &[&[4], &[4]], |g, v| g.sub(v[0], v[1]));
    check_op("mul", 1e-2, &[&[4], &[4]], |g, v| g.mul(v[0], v[1]));
    check_op("affine", 1e-2, &[&[5]], |g, v| g.affine(v[0], -1.5, 0.25));
    check_op("resize_up", 1e-2, &[&[1, 2, 3, 4]], |g, v| {
        g.resize(v[0], 7, 8)
    });
    check_op("resize_down", 1e-2, &[&[1, 1, 8, 6]], |g, v| {
        g.resize(v[0], 3, 4)
    });
    check_op("concat", 1e-2, &[&[2, 1, 3, 3], &[2, 2, 3, 3]], |g, v| {
        g.concat_channels(&[v[0], v[1]])
    });
    check_op("select", 1e-2, &[&[3, 2, 2, 2]], |g, v| {
        g.select_batch(v[0], &[2, 0, 2])
    });
    check_op("softmax0", 1e-2, &[&[4, 1, 2, 3]], |g, v| {
        g.softmax(v[0], 0)
    });
    check_op("softmax1", 1e-2, &[&[2, 5, 3]], |g, v| g.softmax(v[0], 1));
    check_op("bcast", 1e-2, &[&[3, 2, 2, 2], &[3, 1, 2, 2]], |g, v| {
        g.mul_channel_broadcast(v[0], v[1])
    });
    check_op("sum_batch", 1e-2, &[&[3, 2, 2, 2]], |g, v| {
        g.sum_batch(v[0])
    });
    check_op("bce", 1e-2, &[&[1, 1, 3, 3]], |g, v| {
        let p = g.sigmoid(v[0])?;
        let t = Tensor::from_fn(&[1, 1, 3, 3], |i| (i % 2) as Scalar);
        g.bce(p, &t)
    });
}
