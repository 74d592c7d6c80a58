//! Ablation suites: train variants that differ from a reference row in one
//! factor, under the same seeds, data and step budget.

use std::collections::HashMap;
use std::fmt::{self, Write as _};
use std::str::FromStr;

use crate::config::RunConfig;
use crate::data::LightFieldSample;
use crate::error::{DlgError, Result};
use crate::metrics::EvalResult;
use crate::model::Fusion;
use crate::trainer::Trainer;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Suite {
    Components,
    DlgSettings,
    RecipSteps,
}

impl Suite {
    pub const ALL: [Suite; 3] = [Suite::Components, Suite::DlgSettings, Suite::RecipSteps];
}

impl fmt::Display for Suite {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Suite::Components => "components",
            Suite::DlgSettings => "dlg_settings",
            Suite::RecipSteps => "recip_steps",
        })
    }
}

impl FromStr for Suite {
    type Err = DlgError;

    fn from_str(s: &str) -> Result<Self> {
        Suite::ALL
            .into_iter()
            .find(|v| v.to_string() == s)
            .ok_or_else(|| {
                DlgError::Config(format!(
                    "unknown suite '{s}' (components, dlg_settings, recip_steps)"
                ))
            })
    }
}

#[derive(Clone, Debug)]
pub struct Variant {
    pub name: String,
    pub config: RunConfig,
    /// Row this variant is compared against; `None` compares with the base.
    pub reference: Option<usize>,
}

impl Variant {
    fn new(name: &str, config: RunConfig, reference: Option<usize>) -> Self {
        Self {
            name: name.to_string(),
            config,
            reference,
        }
    }
}

fn with(base: &RunConfig, pairs: &[(&str, &str)]) -> Result<RunConfig> {
    let mut c = base.clone();
    for (k, v) in pairs {
        c.set(k, v)?;
    }
    c.validate()?;
    Ok(c)
}

/// Rows of `suite` in table order.
pub fn variants(suite: Suite, base: &RunConfig) -> Result<Vec<Variant>> {
    let t = base.model.steps.to_string();
    let t = t.as_str();
    let v = match suite {
        Suite::Components => {
            let plain = [("model.refine", "false"), ("recip.t", "1")];
            let mut concat = with(base, &plain)?;
            concat.model.fusion = Fusion::Concat;
            let mut gru = concat.clone();
            gru.model.fusion = Fusion::Gru;
            let dlg = with(base, &plain)?;
            let recip = with(&dlg, &[("recip.t", t)])?;
            let refine = with(&recip, &[("model.refine", "true")])?;
            vec![
                Variant::new("enc_concat", concat, None),
                Variant::new("enc_gru", gru, Some(0)),
                Variant::new("enc_dlg", dlg, Some(1)),
                Variant::new("enc_dlg_r", recip, Some(2)),
                Variant::new("enc_dlg_r_r", refine, Some(3)),
            ]
        }
        Suite::DlgSettings => {
            let r = with(
                base,
                &[
                    ("model.refine", "false"),
                    ("dlg.ff", "true"),
                    ("dlg.fa", "true"),
                ],
            )?;
            vec![
                Variant::new(
                    "k1_d1",
                    with(&r, &[("dlg.k", "1"), ("dlg.dilations", "1")])?,
                    None,
                ),
                Variant::new(
                    "k3_d1",
                    with(&r, &[("dlg.k", "3"), ("dlg.dilations", "1")])?,
                    Some(0),
                ),
                Variant::new(
                    "k3_d1-3",
                    with(&r, &[("dlg.k", "3"), ("dlg.dilations", "1,3")])?,
                    Some(1),
                ),
                Variant::new(
                    "k3_d1-3-5",
                    with(&r, &[("dlg.k", "3"), ("dlg.dilations", "1,3,5")])?,
                    Some(2),
                ),
                Variant::new(
                    "ff_only",
                    with(
                        &r,
                        &[
                            ("dlg.k", "3"),
                            ("dlg.dilations", "1,3"),
                            ("dlg.fa", "false"),
                        ],
                    )?,
                    Some(2),
                ),
                Variant::new(
                    "fa_only",
                    with(
                        &r,
                        &[
                            ("dlg.k", "3"),
                            ("dlg.dilations", "1,3"),
                            ("dlg.ff", "false"),
                        ],
                    )?,
                    Some(2),
                ),
            ]
        }
        Suite::RecipSteps => {
            let r = with(base, &[("model.refine", "false")])?;
            vec![
                Variant::new("t1", with(&r, &[("recip.t", "1")])?, None),
                Variant::new("t3", with(&r, &[("recip.t", "3")])?, Some(0)),
                Variant::new("t5", with(&r, &[("recip.t", "5")])?, Some(1)),
            ]
        }
    };
    Ok(v)
}

/// Config keys in which each row differs from its reference row.
pub fn changes(variants: &[Variant], base: &RunConfig) -> Vec<Vec<String>> {
    variants
        .iter()
        .map(|v| {
            v.config
                .diff(v.reference.map_or(base, |r| &variants[r].config))
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct AblationRow {
    pub variant: String,
    pub seed: u64,
    pub result: EvalResult,
}

#[derive(Clone, Debug)]
pub struct AblationReport {
    pub suite: Suite,
    pub variants: Vec<String>,
    pub changes: Vec<Vec<String>>,
    pub rows: Vec<AblationRow>,
}

pub const ABLATION_HEADER: &str = "variant,seed,s,max_f,max_e,mae,changes";

fn quote(field: &str) -> String {
    if field.contains(',') || field.contains('"') {
        format!("\"{}\"", field.replace('"', "\"\""))
    } else {
        field.to_string()
    }
}

impl AblationReport {
    pub fn seeds_of(&self, variant: &str) -> Vec<&AblationRow> {
        self.rows.iter().filter(|r| r.variant == variant).collect()
    }

    /// Mean over seeds of one variant.
    pub fn mean(&self, variant: &str) -> Option<EvalResult> {
        let rows = self.seeds_of(variant);
        if rows.is_empty() {
            return None;
        }
        let n = rows.len() as f64;
        let sum = |f: fn(&EvalResult) -> f64| rows.iter().map(|r| f(&r.result)).sum::<f64>() / n;
        Some(EvalResult {
            mae: sum(|e| e.mae),
            max_f: sum(|e| e.max_f),
            s_measure: sum(|e| e.s_measure),
            max_e: sum(|e| e.max_e),
        })
    }

    /// One row per variant and seed followed by the variant's mean row.
    pub fn to_csv(&self) -> String {
        let mut out = format!("{ABLATION_HEADER}\n");
        let line = |out: &mut String, name: &str, seed: &str, e: &EvalResult, ch: &str| {
            let _ = writeln!(
                out,
                "{name},{seed},{:.4},{:.4},{:.4},{:.4},{}",
                e.s_measure,
                e.max_f,
                e.max_e,
                e.mae,
                quote(ch)
            );
        };
        for (name, ch) in self.variants.iter().zip(&self.changes) {
            let ch = ch.join(";");
            for r in self.seeds_of(name) {
                line(&mut out, name, &r.seed.to_string(), &r.result, &ch);
            }
            if let Some(m) = self.mean(name) {
                line(&mut out, name, "mean", &m, &ch);
            }
        }
        out
    }
}

/// Results of finished runs keyed by their effective configuration, so
/// rows shared between suites are trained once.
#[derive(Debug, Default)]
pub struct RunCache {
    runs: HashMap<String, EvalResult>,
}

impl RunCache {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.runs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.runs.is_empty()
    }

    /// Train `config` on `train` and evaluate on `test`, reusing a cached result.
    pub fn run(
        &mut self,
        config: &RunConfig,
        train: &[LightFieldSample],
        test: &[LightFieldSample],
    ) -> Result<EvalResult> {
        let key = config.to_text();
        if let Some(r) = self.runs.get(&key) {
            return Ok(*r);
        }
        let mut t = Trainer::new(&config.model, &config.train, config.seed)?;
        t.train(train, None)?;
        let r = t.evaluate(test)?.finish()?;
        self.runs.insert(key, r);
        Ok(r)
    }
}

/// Train every variant of `suite` for seeds `base.seed + i`, `i < base.ablate_seeds`.
pub fn run_suite(
    suite: Suite,
    base: &RunConfig,
    train: &[LightFieldSample],
    test: &[LightFieldSample],
    cache: &mut RunCache,
) -> Result<AblationReport> {
    let vars = variants(suite, base)?;
    let mut rows = Vec::new();
    for v in &vars {
        for i in 0..base.ablate_seeds as u64 {
            let mut cfg = v.config.clone();
            cfg.seed = base.seed + i;
            let result = cache.run(&cfg, train, test)?;
            log::info!(
                "{suite} {} seed {}: max_f {:.4} mae {:.4}",
                v.name,
                cfg.seed,
                result.max_f,
                result.mae
            );
            rows.push(AblationRow {
                variant: v.name.clone(),
                seed: cfg.seed,
                result,
            });
        }
    }
    Ok(AblationReport {
        suite,
        variants: vars.iter().map(|v| v.name.clone()).collect(),
        changes: changes(&vars, base),
        rows,
    })
}
