#![cfg_attr(feature = "double", allow(clippy::unnecessary_cast))]

use dlg_core::metrics::{
    evaluate_pairs, mae, max_e_measure, max_f_measure, report_csv, report_table, s_measure,
    EvalResult, SaliencyPair,
};
use dlg_core::Tensor;
use proptest::prelude::*;

fn pair(h: usize, w: usize, pred: &[f64], gt: &[f64]) -> SaliencyPair {
    SaliencyPair::from_values(h, w, pred.to_vec(), gt).unwrap()
}

fn grid(rows: &[&str]) -> Vec<f64> {
    rows.iter()
        .flat_map(|r| r.chars().map(|c| if c == '#' { 1.0 } else { 0.0 }))
        .collect()
}

// Straight transcriptions on 2-D arrays, kept apart from the library code.
mod oracle {
    pub fn max_f(pred: &[Vec<f64>], gt: &[Vec<f64>]) -> f64 {
        let mut best: f64 = 0.0;
        for i in 0..=255 {
            let t = i as f64 / 255.0;
            let (mut tp, mut fp, mut fneg) = (0.0, 0.0, 0.0);
            for (pr, gr) in pred.iter().zip(gt) {
                for (&p, &g) in pr.iter().zip(gr) {
                    match (p >= t, g == 1.0) {
                        (true, true) => tp += 1.0,
                        (true, false) => fp += 1.0,
                        (false, true) => fneg += 1.0,
                        _ => {}
                    }
                }
            }
            let prec: f64 = if tp + fp > 0.0 { tp / (tp + fp) } else { 0.0 };
            let rec: f64 = if tp + fneg > 0.0 {
                tp / (tp + fneg)
            } else {
                0.0
            };
            if prec + rec > 0.0 {
                best = best.max(1.3 * prec * rec / (0.3 * prec + rec));
            }
        }
        best
    }

    pub fn max_e(pred: &[Vec<f64>], gt: &[Vec<f64>]) -> f64 {
        let n = (pred.len() * pred[0].len()) as f64;
        let gsum: f64 = gt.iter().flatten().sum();
        let mut best: f64 = 0.0;
        for i in 0..=255 {
            let t = i as f64 / 255.0;
            let fm: Vec<Vec<f64>> = pred
                .iter()
                .map(|r| r.iter().map(|&p| if p >= t { 1.0 } else { 0.0 }).collect())
                .collect();
            let fsum: f64 = fm.iter().flatten().sum();
            let score = if gsum == 0.0 {
                (n - fsum) / n
            } else if gsum == n {
                fsum / n
            } else {
                let mut acc = 0.0;
                for (fr, gr) in fm.iter().zip(gt) {
                    for (&f, &g) in fr.iter().zip(gr) {
                        let a = f - fsum / n;
                        let b = g - gsum / n;
                        let phi = if a == 0.0 && b == 0.0 {
                            0.0
                        } else {
                            2.0 * a * b / (a * a + b * b)
                        };
                        acc += (phi + 1.0) * (phi + 1.0) / 4.0;
                    }
                }
                acc / n
            };
            best = best.max(score);
        }
        best
    }
}

fn rows(v: &[f64], w: usize) -> Vec<Vec<f64>> {
    v.chunks(w).map(|c| c.to_vec()).collect()
}

#[test]
fn mae_examples() {
    let gt = grid(&["#..", ".#."]);
    assert_eq!(mae(&pair(2, 3, &gt, &gt)), 0.0);
    assert_eq!(mae(&pair(2, 3, &[1.0; 6], &[0.0; 6])), 1.0);
    assert_eq!(mae(&pair(2, 3, &[0.25; 6], &[0.0; 6])), 0.25);
}

#[test]
fn max_f_examples() {
    let gt = grid(&["##..", "##..", "....", "...."]);
    assert!((max_f_measure(&pair(4, 4, &gt, &gt)) - 1.0).abs() < 1e-12);
    let half: Vec<f64> = gt.iter().map(|g| 0.5 * g).collect();
    assert!((max_f_measure(&pair(4, 4, &half, &gt)) - 1.0).abs() < 1e-12);
    // 3 true positives, 1 false positive, 1 false negative
    let pred = grid(&["##..", "#...", "...#", "...."]);
    let f = max_f_measure(&pair(4, 4, &pred, &gt));
    assert!((f - 0.75).abs() < 1e-6, "{f}");
}

#[test]
fn max_f_all_background_is_zero() {
    assert_eq!(
        max_f_measure(&pair(2, 2, &[0.3, 0.2, 0.9, 0.0], &[0.0; 4])),
        0.0
    );
}

#[test]
fn s_measure_examples() {
    let gt = grid(&["##..", "#...", "....", "...."]);
    let s = s_measure(&pair(4, 4, &gt, &gt));
    assert!((s - 1.0).abs() < 1e-12, "{s}");

    let comp: Vec<f64> = gt.iter().map(|g| 1.0 - g).collect();
    let s = s_measure(&pair(4, 4, &comp, &gt));
    assert!(s < 0.5, "{s}");
}

#[test]
fn s_measure_constant_mean_prediction() {
    let gt = grid(&["##..", "#...", "....", "...."]);
    let u = 3.0 / 16.0;
    let s = s_measure(&pair(4, 4, &[u; 16], &gt));
    // object term: constant maps have zero spread inside both regions
    let obj =
        u * (2.0 * u / (u * u + 1.0)) + (1.0 - u) * (2.0 * (1.0 - u) / ((1.0 - u).powi(2) + 1.0));
    // centroid (1/3, 1/3) splits at (1, 1): quadrants of 1, 3, 3 and 9
    // pixels; the two uniform-gt quadrants score 1, the mixed ones 0
    let region = 1.0 / 16.0 + 9.0 / 16.0;
    let expected = 0.5 * obj + 0.5 * region;
    assert!((s - expected).abs() < 1e-12, "{s} vs {expected}");
}

#[test]
fn e_measure_examples() {
    let gt = grid(&["#.", "#."]);
    assert!((max_e_measure(&pair(2, 2, &gt, &gt)) - 1.0).abs() < 1e-12);
    let comp: Vec<f64> = gt.iter().map(|g| 1.0 - g).collect();
    let e = max_e_measure(&pair(2, 2, &comp, &gt));
    // complement aligns to -1 everywhere (score 0); only t = 0 gives the
    // all-ones map with zero alignment, (1 + 0)^2 / 4
    assert!((e - 0.25).abs() < 1e-12, "{e}");
    assert!(e < 0.3);
}

#[test]
fn e_measure_single_pixel_corruption_never_increases() {
    let gt = grid(&["#...", "##..", "..#.", "...."]);
    let base = max_e_measure(&pair(4, 4, &gt, &gt));
    for i in 0..16 {
        let mut pred = gt.clone();
        pred[i] = 1.0 - pred[i];
        let e = max_e_measure(&pair(4, 4, &pred, &gt));
        assert!(e <= base, "flip {i}: {e} > {base}");
        // a second corruption on top never helps either
        for j in 0..16 {
            if j == i {
                continue;
            }
            let mut p2 = pred.clone();
            p2[j] = 1.0 - p2[j];
            assert!(
                max_e_measure(&pair(4, 4, &p2, &gt)) <= e + 1e-12,
                "flip {i} then {j}"
            );
        }
    }
}

#[test]
fn dataset_aggregation() {
    let gt = grid(&["##..", "#...", "....", "...."]);
    let pred = vec![
        0.9, 0.7, 0.2, 0.1, 0.6, 0.3, 0.0, 0.0, 0.1, 0.0, 0.4, 0.0, 0.0, 0.2, 0.0, 0.0,
    ];
    let p = pair(4, 4, &pred, &gt);
    let single = evaluate_pairs([&p]).unwrap();
    let per = EvalResult::of(&p);
    assert!((single.mae - per.mae).abs() < 1e-12);
    assert!((single.max_f - per.max_f).abs() < 1e-12);
    assert!((single.s_measure - per.s_measure).abs() < 1e-12);
    assert!((single.max_e - per.max_e).abs() < 1e-12);
    let dup = evaluate_pairs([&p, &p]).unwrap();
    assert!((dup.mae - single.mae).abs() < 1e-12);
    assert!((dup.max_f - single.max_f).abs() < 1e-12);
    assert!((dup.s_measure - single.s_measure).abs() < 1e-12);
    assert!((dup.max_e - single.max_e).abs() < 1e-12);

    let perfect = pair(4, 4, &gt, &gt);
    let r = evaluate_pairs([&perfect, &perfect]).unwrap();
    assert_eq!(r.mae, 0.0);
    assert!(
        (r.max_f - 1.0).abs() < 1e-12
            && (r.s_measure - 1.0).abs() < 1e-12
            && (r.max_e - 1.0).abs() < 1e-12
    );

    assert!(evaluate_pairs(std::iter::empty()).is_err());
}

#[test]
fn pair_validation() {
    let pred = Tensor::zeros(&[1, 1, 4, 4]);
    assert!(SaliencyPair::new(&pred, &Tensor::zeros(&[1, 4, 4])).is_ok());
    assert!(SaliencyPair::new(&pred, &Tensor::zeros(&[1, 4, 3])).is_err());
    assert!(SaliencyPair::new(&pred, &Tensor::full(&[1, 4, 4], 0.5)).is_err());
    assert!(SaliencyPair::new(&Tensor::full(&[1, 4, 4], 1.5), &Tensor::zeros(&[1, 4, 4])).is_err());
    assert!(SaliencyPair::new(&Tensor::zeros(&[2, 4, 4]), &Tensor::zeros(&[2, 4, 4])).is_err());
}

#[test]
fn reports() {
    let r = EvalResult {
        mae: 0.05,
        max_f: 0.9,
        s_measure: 0.85,
        max_e: 0.92,
    };
    let csv = report_csv(&[("train".into(), r)]);
    assert_eq!(
        csv,
        "dataset,mae,max_f,s,max_e\ntrain,0.050000,0.900000,0.850000,0.920000\n"
    );
    let table = report_table(&[("train".into(), r)]);
    let header: Vec<&str> = table.lines().next().unwrap().split_whitespace().collect();
    assert_eq!(header, ["dataset", "S", "F", "E", "MAE"]);
    let row: Vec<&str> = table.lines().nth(1).unwrap().split_whitespace().collect();
    assert_eq!(row, ["train", "0.8500", "0.9000", "0.9200", "0.0500"]);
}

fn arb_pair() -> impl Strategy<Value = (usize, usize, Vec<f64>, Vec<f64>)> {
    (1usize..4, 1usize..4).prop_flat_map(|(hh, hw)| {
        let (h, w) = (2 * hh, 2 * hw);
        (
            Just(h),
            Just(w),
            prop::collection::vec((0u32..128).prop_map(|j| (2 * j) as f64 / 255.0), h * w),
            prop::collection::vec(prop::bool::ANY.prop_map(|b| b as u8 as f64), h * w),
        )
    })
}

fn hflip(v: &[f64], h: usize, w: usize) -> Vec<f64> {
    (0..h * w)
        .map(|i| v[(i / w) * w + (w - 1 - i % w)])
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn matches_oracles((h, w, pred, gt) in arb_pair()) {
        let p = pair(h, w, &pred, &gt);
        let (pr, gr) = (rows(&pred, w), rows(&gt, w));
        if gt.contains(&1.0) {
            prop_assert!((max_f_measure(&p) - oracle::max_f(&pr, &gr)).abs() < 1e-12);
        }
        prop_assert!((max_e_measure(&p) - oracle::max_e(&pr, &gr)).abs() < 1e-12);
    }

    #[test]
    fn horizontal_flip_invariance((h, w, pred, gt) in arb_pair()) {
        let a = EvalResult::of(&pair(h, w, &pred, &gt));
        let b = EvalResult::of(&pair(h, w, &hflip(&pred, h, w), &hflip(&gt, h, w)));
        prop_assert!((a.mae - b.mae).abs() < 1e-12);
        prop_assert!((a.max_f - b.max_f).abs() < 1e-12);
        prop_assert!((a.s_measure - b.s_measure).abs() < 1e-12, "{} vs {}", a.s_measure, b.s_measure);
        prop_assert!((a.max_e - b.max_e).abs() < 1e-12);
    }

    #[test]
    fn mae_complement_symmetry((h, w, pred, gt) in arb_pair()) {
        let inv = |v: &[f64]| v.iter().map(|x| 1.0 - x).collect::<Vec<_>>();
        let a = mae(&pair(h, w, &pred, &gt));
        let b = mae(&pair(h, w, &inv(&pred), &inv(&gt)));
        prop_assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn half_scaling_keeps_max_f_and_max_e((h, w, pred, gt) in arb_pair()) {
        let half: Vec<f64> = pred.iter().map(|v| v * 0.5).collect();
        let (a, b) = (pair(h, w, &pred, &gt), pair(h, w, &half, &gt));
        prop_assert!((max_f_measure(&a) - max_f_measure(&b)).abs() < 1e-12);
        prop_assert!((max_e_measure(&a) - max_e_measure(&b)).abs() < 1e-12);
    }

    #[test]
    fn measures_in_unit_interval((h, w, pred, gt) in arb_pair()) {
        let r = EvalResult::of(&pair(h, w, &pred, &gt));
        for v in [r.mae, r.max_f, r.s_measure, r.max_e] {
            prop_assert!((0.0..=1.0).contains(&v));
        }
    }
}
