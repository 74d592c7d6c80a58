#![cfg_attr(feature = "double", allow(clippy::unnecessary_cast))]

use dlg_core::ablation::{changes, run_suite, variants, RunCache, Suite, ABLATION_HEADER};
use dlg_core::config::RunConfig;
use dlg_core::data::{gen_synthetic_sample, LightFieldSample, SceneSpec};
use dlg_core::model::Fusion;
use dlg_core::SeededRng;

fn tiny_base() -> RunConfig {
    let mut c = RunConfig::default();
    for (k, v) in [
        ("encoder.channels", "4,6,6,8"),
        ("model.c", "6"),
        ("recip.t", "2"),
        ("train.steps", "3"),
        ("train.lr", "0.001"),
        ("ablate.seeds", "2"),
    ] {
        c.set(k, v).unwrap();
    }
    c
}

fn samples(count: usize, seed: u64) -> Vec<LightFieldSample> {
    let mut rng = SeededRng::new(seed);
    (0..count)
        .map(|_| {
            gen_synthetic_sample(&SceneSpec::random(16, 16, 3, 4.0, &mut rng), &mut rng).unwrap()
        })
        .collect()
}

#[test]
fn suite_names_round_trip() {
    for s in Suite::ALL {
        assert_eq!(s.to_string().parse::<Suite>().unwrap(), s);
    }
    assert!("tables".parse::<Suite>().is_err());
}

#[test]
fn every_row_changes_exactly_one_factor() {
    let base = RunConfig::default();
    for suite in Suite::ALL {
        let v = variants(suite, &base).unwrap();
        let ch = changes(&v, &base);
        for (var, c) in v.iter().zip(&ch).filter(|(var, _)| var.reference.is_some()) {
            assert_eq!(c.len(), 1, "{suite} {}: {c:?}", var.name);
        }
    }
}

#[test]
fn suites_contain_the_table_rows() {
    let base = RunConfig::default();
    let names = |s| {
        variants(s, &base)
            .unwrap()
            .into_iter()
            .map(|v| v.name)
            .collect::<Vec<_>>()
    };
    assert_eq!(
        names(Suite::Components),
        [
            "enc_concat",
            "enc_gru",
            "enc_dlg",
            "enc_dlg_r",
            "enc_dlg_r_r"
        ]
    );
    assert_eq!(
        names(Suite::DlgSettings),
        [
            "k1_d1",
            "k3_d1",
            "k3_d1-3",
            "k3_d1-3-5",
            "ff_only",
            "fa_only"
        ]
    );
    assert_eq!(names(Suite::RecipSteps), ["t1", "t3", "t5"]);

    let comp = variants(Suite::Components, &base).unwrap();
    assert_eq!(comp[0].config.model.fusion, Fusion::Concat);
    assert_eq!(comp[2].config.model.steps, 1);
    assert_eq!(comp[3].config.model.steps, 5);
    assert!(comp[4].config.model.refine && !comp[3].config.model.refine);

    let dlg = variants(Suite::DlgSettings, &base).unwrap();
    assert!(dlg[4].config.model.dlg.use_ff && !dlg[4].config.model.dlg.use_fa);
    assert!(!dlg[5].config.model.dlg.use_ff && dlg[5].config.model.dlg.use_fa);
    assert_eq!(changes(&dlg, &base)[4], ["dlg.fa=false"]);
    assert_eq!(changes(&dlg, &base)[3], ["dlg.dilations=1,3,5"]);

    // Rows shared between suites have the same effective configuration.
    let rec = variants(Suite::RecipSteps, &base).unwrap();
    assert_eq!(rec[2].config, dlg[2].config);
    assert_eq!(rec[2].config, comp[3].config);
    assert_eq!(rec[0].config, comp[2].config);
}

#[test]
fn run_suite_reports_every_seed_and_reuses_runs() {
    let base = tiny_base();
    let (train, test) = (samples(2, 1), samples(2, 2));
    let mut cache = RunCache::new();
    let rep = run_suite(Suite::RecipSteps, &base, &train, &test, &mut cache).unwrap();
    assert_eq!(rep.rows.len(), 6);
    assert_eq!(cache.len(), 6);
    assert_eq!(
        rep.rows.iter().map(|r| r.seed).collect::<Vec<_>>(),
        [0, 1, 0, 1, 0, 1]
    );

    let csv = rep.to_csv();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], ABLATION_HEADER);
    assert_eq!(lines.len(), 1 + 3 * 3);
    assert!(lines[3].starts_with("t1,mean,"));
    assert!(lines[6].ends_with(",recip.t=3"));

    let m = rep.mean("t3").unwrap();
    let seeds = rep.seeds_of("t3");
    assert!((m.max_f - (seeds[0].result.max_f + seeds[1].result.max_f) / 2.0).abs() < 1e-12);

    // A second suite reuses the shared T=1 rows without training them again.
    let again = run_suite(Suite::RecipSteps, &base, &train, &test, &mut cache).unwrap();
    assert_eq!(cache.len(), 6);
    assert_eq!(again.rows, rep.rows);
}

#[test]
fn changes_with_commas_are_quoted() {
    let base = tiny_base();
    let (train, test) = (samples(1, 3), samples(1, 4));
    let mut b = base.clone();
    b.ablate_seeds = 1;
    b.train.steps = 1;
    let mut cache = RunCache::new();
    let rep = run_suite(Suite::DlgSettings, &b, &train, &test, &mut cache).unwrap();
    let csv = rep.to_csv();
    assert!(csv.contains("\"dlg.dilations=1,3\""), "{csv}");
}
