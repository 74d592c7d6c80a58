//! Plain-text `key=value` run configuration covering every tunable of the
//! data generator, model, trainer, benchmark and ablation runner.

use std::path::{Path, PathBuf};

use crate::data::{GenOptions, Split};
use crate::dlg::WindowSpec;
use crate::error::{DlgError, Result};
use crate::model::ModelConfig;
use crate::trainer::TrainConfig;

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub data_root: PathBuf,
    pub data: GenOptions,
    /// Square side the samples are resized to before use; 0 keeps them.
    pub resize: usize,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub eval_split: Split,
    pub bench_slices: usize,
    pub bench_sizes: Vec<(usize, usize)>,
    pub bench_repeats: usize,
    pub ablate_seeds: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            data_root: PathBuf::from("data"),
            data: GenOptions {
                count: 80,
                height: 32,
                width: 32,
                min_slices: 2,
                max_slices: 6,
                blur_gain: 4.0,
                n_train: 64,
                n_test: 16,
            },
            resize: 0,
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            eval_split: Split::Test,
            bench_slices: 4,
            bench_sizes: vec![(16, 16), (16, 32), (32, 32), (32, 64), (64, 64)],
            bench_repeats: 7,
            ablate_seeds: 3,
        }
    }
}

/// Every accepted key, in echo order.
pub const KEYS: &[&str] = &[
    "seed",
    "data.root",
    "data.count",
    "data.height",
    "data.width",
    "data.min_slices",
    "data.max_slices",
    "data.blur_gain",
    "data.n_train",
    "data.n_test",
    "data.resize",
    "encoder.channels",
    "model.c",
    "model.edge_c",
    "model.fusion",
    "model.refine",
    "dlg.k",
    "dlg.dilations",
    "dlg.ff",
    "dlg.fa",
    "dlg.zero_init_phi",
    "recip.t",
    "gru.kernel",
    "train.steps",
    "train.lr",
    "train.milestones",
    "train.lr_factor",
    "train.log_every",
    "train.ckpt_every",
    "train.augment",
    "eval.split",
    "bench.slices",
    "bench.sizes",
    "bench.repeats",
    "ablate.seeds",
];

fn bad(key: &str, value: &str, expect: &str) -> DlgError {
    DlgError::Config(format!("{key}: cannot parse '{value}' as {expect}"))
}

fn num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| bad(key, value, std::any::type_name::<T>()))
}

fn flag(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "1" | "yes" | "on" => Ok(true),
        "false" | "0" | "no" | "off" => Ok(false),
        _ => Err(bad(key, value, "a boolean")),
    }
}

fn list<T: std::str::FromStr>(key: &str, value: &str) -> Result<Vec<T>> {
    if value.trim().is_empty() {
        return Ok(Vec::new());
    }
    value.split(',').map(|v| num(key, v.trim())).collect()
}

fn join<T: ToString>(v: &[T]) -> String {
    v.iter()
        .map(|x| x.to_string())
        .collect::<Vec<_>>()
        .join(",")
}

fn sizes(key: &str, value: &str) -> Result<Vec<(usize, usize)>> {
    value
        .split(',')
        .map(|s| {
            let (h, w) = s.trim().split_once('x').ok_or_else(|| bad(key, s, "HxW"))?;
            Ok((num(key, h)?, num(key, w)?))
        })
        .collect()
}

impl RunConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        let m = &mut self.model;
        match key {
            "seed" => self.seed = num(key, v)?,
            "data.root" => self.data_root = PathBuf::from(v),
            "data.count" => self.data.count = num(key, v)?,
            "data.height" => self.data.height = num(key, v)?,
            "data.width" => self.data.width = num(key, v)?,
            "data.min_slices" => self.data.min_slices = num(key, v)?,
            "data.max_slices" => self.data.max_slices = num(key, v)?,
            "data.blur_gain" => self.data.blur_gain = num(key, v)?,
            "data.n_train" => self.data.n_train = num(key, v)?,
            "data.n_test" => self.data.n_test = num(key, v)?,
            "data.resize" => self.resize = num(key, v)?,
            "encoder.channels" => m.encoder.stage_channels = list(key, v)?,
            "model.c" => {
                let c = num(key, v)?;
                let edge_follows = m.dlg.edge_channels == m.dlg.channels;
                m.encoder.out_channels = c;
                m.dlg.channels = c;
                if edge_follows {
                    m.dlg.edge_channels = c;
                }
            }
            "model.edge_c" => m.dlg.edge_channels = num(key, v)?,
            "model.fusion" => m.fusion = v.parse()?,
            "model.refine" => m.refine = flag(key, v)?,
            "dlg.k" => m.dlg.window.k = num(key, v)?,
            "dlg.dilations" => m.dlg.window.dilations = list(key, v)?,
            "dlg.ff" => m.dlg.use_ff = flag(key, v)?,
            "dlg.fa" => m.dlg.use_fa = flag(key, v)?,
            "dlg.zero_init_phi" => m.dlg.zero_init_phi = flag(key, v)?,
            "recip.t" => m.steps = num(key, v)?,
            "gru.kernel" => m.gru_kernel = num(key, v)?,
            "train.steps" => self.train.steps = num(key, v)?,
            "train.lr" => self.train.lr = num(key, v)?,
            "train.milestones" => self.train.milestones = list(key, v)?,
            "train.lr_factor" => self.train.lr_factor = num(key, v)?,
            "train.log_every" => self.train.log_every = num(key, v)?,
            "train.ckpt_every" => self.train.ckpt_every = num(key, v)?,
            "train.augment" => self.train.augment = flag(key, v)?,
            "eval.split" => self.eval_split = v.parse()?,
            "bench.slices" => self.bench_slices = num(key, v)?,
            "bench.sizes" => self.bench_sizes = sizes(key, v)?,
            "bench.repeats" => self.bench_repeats = num(key, v)?,
            "ablate.seeds" => self.ablate_seeds = num(key, v)?,
            _ => return Err(DlgError::Config(format!("unknown config key '{key}'"))),
        }
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<String> {
        let m = &self.model;
        Some(match key {
            "seed" => self.seed.to_string(),
            "data.root" => self.data_root.display().to_string(),
            "data.count" => self.data.count.to_string(),
            "data.height" => self.data.height.to_string(),
            "data.width" => self.data.width.to_string(),
            "data.min_slices" => self.data.min_slices.to_string(),
            "data.max_slices" => self.data.max_slices.to_string(),
            "data.blur_gain" => self.data.blur_gain.to_string(),
            "data.n_train" => self.data.n_train.to_string(),
            "data.n_test" => self.data.n_test.to_string(),
            "data.resize" => self.resize.to_string(),
            "encoder.channels" => join(&m.encoder.stage_channels),
            "model.c" => m.encoder.out_channels.to_string(),
            "model.edge_c" => m.dlg.edge_channels.to_string(),
            "model.fusion" => m.fusion.to_string(),
            "model.refine" => m.refine.to_string(),
            "dlg.k" => m.dlg.window.k.to_string(),
            "dlg.dilations" => join(&m.dlg.window.dilations),
            "dlg.ff" => m.dlg.use_ff.to_string(),
            "dlg.fa" => m.dlg.use_fa.to_string(),
            "dlg.zero_init_phi" => m.dlg.zero_init_phi.to_string(),
            "recip.t" => m.steps.to_string(),
            "gru.kernel" => m.gru_kernel.to_string(),
            "train.steps" => self.train.steps.to_string(),
            "train.lr" => self.train.lr.to_string(),
            "train.milestones" => join(&self.train.milestones),
            "train.lr_factor" => self.train.lr_factor.to_string(),
            "train.log_every" => self.train.log_every.to_string(),
            "train.ckpt_every" => self.train.ckpt_every.to_string(),
            "train.augment" => self.train.augment.to_string(),
            "eval.split" => self.eval_split.to_string(),
            "bench.slices" => self.bench_slices.to_string(),
            "bench.sizes" => self
                .bench_sizes
                .iter()
                .map(|(h, w)| format!("{h}x{w}"))
                .collect::<Vec<_>>()
                .join(","),
            "bench.repeats" => self.bench_repeats.to_string(),
            "ablate.seeds" => self.ablate_seeds.to_string(),
            _ => return None,
        })
    }

    /// Apply `key=value` lines; `#` starts a comment.
    pub fn apply_text(&mut self, text: &str, source: &str) -> Result<()> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                DlgError::Config(format!(
                    "{source}:{}: expected key=value, got '{line}'",
                    i + 1
                ))
            })?;
            self.set(k.trim(), v)
                .map_err(|e| DlgError::Config(format!("{source}:{}: {e}", i + 1)))?;
        }
        Ok(())
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        cfg.apply_text(text, "<config>")?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| DlgError::io(path, e))?;
        let mut cfg = Self::default();
        cfg.apply_text(&text, &path.display().to_string())?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Apply a `key=value` override.
    pub fn set_override(&mut self, kv: &str) -> Result<()> {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| DlgError::Config(format!("override '{kv}' is not key=value")))?;
        self.set(k.trim(), v)
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train.validate()?;
        WindowSpec::new(
            self.model.dlg.window.k,
            self.model.dlg.window.dilations.clone(),
        )?;
        if self.bench_slices == 0 || self.bench_repeats == 0 {
            return Err(DlgError::Config(
                "bench.slices and bench.repeats must be positive".into(),
            ));
        }
        if self.ablate_seeds == 0 {
            return Err(DlgError::Config("ablate.seeds must be positive".into()));
        }
        if self.resize > 0 {
            self.model.encoder.check_input(self.resize, self.resize)?;
        }
        Ok(())
    }

    /// Effective configuration, one `key=value` per line for every key.
    pub fn to_text(&self) -> String {
        KEYS.iter()
            .map(|k| {
                format!(
                    "{k}={}\n",
                    self.get(k).expect("every listed key is readable")
                )
            })
            .collect()
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| DlgError::io(path, e))
    }

    /// Keys whose values differ from `base`, as `key=value` pairs.
    pub fn diff(&self, base: &RunConfig) -> Vec<String> {
        KEYS.iter()
            .filter_map(|k| {
                let (a, b) = (self.get(k)?, base.get(k)?);
                (a != b).then(|| format!("{k}={a}"))
            })
            .collect()
    }
}
