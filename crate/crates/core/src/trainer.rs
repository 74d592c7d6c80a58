//! Training loop, checkpoints and dataset evaluation.
//!
//! Every random choice of step `s` (sample index and augmentation) comes
//! from a generator derived from `(seed, s)`, so a run resumed from a
//! checkpoint continues exactly as the uninterrupted run would.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::data::{augment, resize_sample, LightFieldSample};
use crate::error::{DlgError, Result};
use crate::metrics::{MetricAccumulator, SaliencyPair};
use crate::model::{ModelConfig, Prediction, SaliencyModel};
use crate::tensor::container::{decode_entries, encode_entries, Container};
use crate::tensor::{Adam, AdamConfig, Graph, ParamStore, SeededRng};

const INIT_LABEL: u64 = 0x1417;
const STEP_LABEL: u64 = 1 << 40;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub steps: usize,
    pub lr: f64,
    /// Fractions of `steps` after which the rate is multiplied by `lr_factor`.
    pub milestones: Vec<f64>,
    pub lr_factor: f64,
    pub log_every: usize,
    /// Write an intermediate checkpoint every this many steps; 0 disables.
    pub ckpt_every: usize,
    pub augment: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 2000,
            lr: 1e-4,
            milestones: vec![0.75, 0.9],
            lr_factor: 0.1,
            log_every: 50,
            ckpt_every: 0,
            augment: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(DlgError::Config("train.steps must be positive".into()));
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(DlgError::Config(format!(
                "train.lr must be a finite rate >= 0, got {}",
                self.lr
            )));
        }
        if self.milestones.windows(2).any(|w| w[0] >= w[1]) {
            return Err(DlgError::Config(
                "train.milestones must be strictly ascending".into(),
            ));
        }
        if self.milestones.iter().any(|m| !(0.0..=1.0).contains(m)) {
            return Err(DlgError::Config(
                "train.milestones are fractions in [0,1]".into(),
            ));
        }
        if self.lr_factor.is_nan() || self.lr_factor <= 0.0 || self.log_every == 0 {
            return Err(DlgError::Config(
                "train.lr_factor and train.log_every must be positive".into(),
            ));
        }
        Ok(())
    }

    /// Learning rate for the update made at 0-based step `step`.
    pub fn lr_at(&self, step: usize) -> f64 {
        let mut lr = self.lr;
        for m in &self.milestones {
            if step >= (m * self.steps as f64).round() as usize {
                lr *= self.lr_factor;
            }
        }
        lr
    }
}

/// Losses of one update. `terms` is `[final, side_1, ..]`.
#[derive(Clone, Debug, PartialEq)]
pub struct StepLoss {
    /// Updates applied so far, including this one.
    pub step: usize,
    pub sample: usize,
    pub lr: f64,
    pub total: f64,
    pub terms: Vec<f64>,
}

pub fn loss_curve_csv(curve: &[StepLoss]) -> String {
    let sides = curve.first().map_or(0, |r| r.terms.len().saturating_sub(1));
    let mut out = String::from("step,lr,total,final");
    for t in 1..=sides {
        let _ = write!(out, ",side_{t}");
    }
    out.push('\n');
    for r in curve {
        let _ = write!(out, "{},{},{:.6}", r.step, r.lr, r.total);
        for t in &r.terms {
            let _ = write!(out, ",{t:.6}");
        }
        out.push('\n');
    }
    out
}

/// Resize every sample to `size x size` (0 keeps them as they are).
pub fn prepare(samples: Vec<LightFieldSample>, size: usize) -> Result<Vec<LightFieldSample>> {
    if size == 0 {
        return Ok(samples);
    }
    samples
        .iter()
        .map(|s| resize_sample(s, size, size))
        .collect()
}

#[derive(Clone, Debug)]
pub struct Trainer {
    pub model: SaliencyModel,
    pub store: ParamStore,
    pub adam: Adam,
    pub config: TrainConfig,
    pub seed: u64,
}

impl Trainer {
    pub fn new(model: &ModelConfig, config: &TrainConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut store = ParamStore::new();
        let mut rng = SeededRng::derive(seed, INIT_LABEL);
        let model = SaliencyModel::new(&mut store, model, &mut rng)?;
        let adam = Adam::new(
            &store,
            AdamConfig {
                lr: config.lr,
                ..AdamConfig::default()
            },
        );
        Ok(Self {
            model,
            store,
            adam,
            config: config.clone(),
            seed,
        })
    }

    pub fn step(&self) -> usize {
        self.adam.step as usize
    }

    /// One Adam update on a sample picked (and augmented) by the step RNG.
    pub fn train_step(&mut self, samples: &[LightFieldSample]) -> Result<StepLoss> {
        if samples.is_empty() {
            return Err(DlgError::invalid("training needs at least one sample"));
        }
        let step = self.step();
        let mut rng = SeededRng::derive(self.seed, STEP_LABEL + step as u64);
        let index = rng.below(samples.len());
        let sample = if self.config.augment {
            augment(&samples[index], &mut rng)?
        } else {
            samples[index].clone()
        };
        let mut g = Graph::new();
        let (_, loss, terms) = self
            .model
            .forward_loss(&mut g, &self.store, &sample)
            .map_err(|e| match e {
                DlgError::NonFinite(msg) => {
                    DlgError::NonFinite(format!("{msg} at step {} (sample {index})", step + 1))
                }
                e => e,
            })?;
        let total = g.value(loss).data()[0] as f64;
        if !total.is_finite() {
            return Err(DlgError::NonFinite(format!(
                "loss became {total} at step {} (sample {index})",
                step + 1
            )));
        }
        let terms = terms.iter().map(|&t| g.value(t).data()[0] as f64).collect();
        self.store.zero_grads();
        g.backward_into(loss, &mut self.store)?;
        let lr = self.config.lr_at(step);
        self.adam.step(&mut self.store, lr)?;
        Ok(StepLoss {
            step: step + 1,
            sample: index,
            lr,
            total,
            terms,
        })
    }

    /// Train up to `config.steps` updates, logging every `log_every` steps
    /// and the last one. With `out`, writes `loss_curve.csv`, periodic
    /// `ckpt_<step>.dlgt` files and `checkpoint.dlgt`.
    pub fn train(
        &mut self,
        samples: &[LightFieldSample],
        out: Option<&Path>,
    ) -> Result<Vec<StepLoss>> {
        let mut curve = Vec::new();
        while self.step() < self.config.steps {
            let rec = self.train_step(samples)?;
            let s = rec.step;
            if s % self.config.log_every == 0 || s == self.config.steps {
                log::info!("step {s} lr {:.2e} loss {:.5}", rec.lr, rec.total);
                curve.push(rec);
            }
            if let Some(dir) = out {
                if self.config.ckpt_every > 0
                    && s % self.config.ckpt_every == 0
                    && s < self.config.steps
                {
                    self.save(&dir.join(format!("ckpt_{s:06}.dlgt")))?;
                }
            }
        }
        if let Some(dir) = out {
            let path = dir.join("loss_curve.csv");
            std::fs::write(&path, loss_curve_csv(&curve)).map_err(|e| DlgError::io(&path, e))?;
            self.save(&dir.join("checkpoint.dlgt"))?;
        }
        Ok(curve)
    }

    pub fn checkpoint_bytes(&self) -> Vec<u8> {
        let mut entries = Vec::with_capacity(3 * self.store.len() + 1);
        for p in self.store.iter() {
            entries.push((
                format!("param/{}", p.name),
                Container::from_tensor(&p.value),
            ));
        }
        for (p, m) in self.store.iter().zip(&self.adam.m) {
            entries.push((format!("adam_m/{}", p.name), Container::from_tensor(m)));
        }
        for (p, v) in self.store.iter().zip(&self.adam.v) {
            entries.push((format!("adam_v/{}", p.name), Container::from_tensor(v)));
        }
        entries.push((
            "step".into(),
            Container::f64_values(&[1], vec![self.adam.step as f64]),
        ));
        encode_entries(&entries)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.checkpoint_bytes()).map_err(|e| DlgError::io(path, e))
    }

    /// Rebuild a trainer and restore parameters, optimizer state and step.
    pub fn from_checkpoint_bytes(
        model: &ModelConfig,
        config: &TrainConfig,
        seed: u64,
        bytes: &[u8],
    ) -> Result<Self> {
        let mut t = Self::new(model, config, seed)?;
        let mut entries: BTreeMap<String, Container> = decode_entries(bytes)?.into_iter().collect();
        let step = entries
            .remove("step")
            .ok_or_else(|| DlgError::invalid("checkpoint has no step entry"))?
            .as_f64();
        t.adam.step = *step
            .first()
            .ok_or_else(|| DlgError::invalid("empty step entry"))? as u64;
        let ids: Vec<_> = t.store.ids().collect();
        for (i, id) in ids.into_iter().enumerate() {
            let name = t.store.get(id).name.clone();
            let mut take = |kind: &str| {
                entries
                    .remove(&format!("{kind}/{name}"))
                    .ok_or_else(|| DlgError::invalid(format!("checkpoint lacks {kind}/{name}")))?
                    .to_tensor()
            };
            let (value, m, v) = (take("param")?, take("adam_m")?, take("adam_v")?);
            if m.shape() != value.shape() || v.shape() != value.shape() {
                return Err(DlgError::shape(format!(
                    "optimizer state of {name} has the wrong shape"
                )));
            }
            t.store.set_value(id, value)?;
            t.adam.m[i] = m;
            t.adam.v[i] = v;
        }
        if let Some(extra) = entries.keys().next() {
            return Err(DlgError::invalid(format!(
                "checkpoint entry {extra} does not belong to this model configuration"
            )));
        }
        Ok(t)
    }

    pub fn load(model: &ModelConfig, config: &TrainConfig, seed: u64, path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| DlgError::io(path, e))?;
        Self::from_checkpoint_bytes(model, config, seed, &bytes)
    }

    pub fn predict(&self, sample: &LightFieldSample) -> Result<Prediction> {
        self.model.predict(&self.store, sample)
    }

    pub fn evaluate(&self, samples: &[LightFieldSample]) -> Result<MetricAccumulator> {
        evaluate(&self.model, &self.store, samples)
    }

    /// Mean final-map BCE over `samples` without augmentation.
    pub fn mean_final_bce(&self, samples: &[LightFieldSample]) -> Result<f64> {
        let mut acc = 0.0;
        for s in samples {
            let mut g = Graph::new();
            let (_, _, terms) = self.model.forward_loss(&mut g, &self.store, s)?;
            acc += g.value(terms[0]).data()[0] as f64;
        }
        Ok(acc / samples.len().max(1) as f64)
    }
}

pub fn evaluate(
    model: &SaliencyModel,
    store: &ParamStore,
    samples: &[LightFieldSample],
) -> Result<MetricAccumulator> {
    if samples.is_empty() {
        return Err(DlgError::invalid("cannot evaluate an empty sample set"));
    }
    let mut acc = MetricAccumulator::new();
    for s in samples {
        let pred = model.predict(store, s)?;
        acc.add(&SaliencyPair::new(&pred.final_map, &s.gt)?);
    }
    Ok(acc)
}
