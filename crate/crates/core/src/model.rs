//! Full saliency network: dual encoder, focal-stack fusion (DLG with
//! reciprocative guidance, or one of the baselines), side heads and the
//! refinement decoder.

use std::fmt;
use std::str::FromStr;

use crate::data::LightFieldSample;
use crate::dlg::{DlgConfig, DlgLayer};
use crate::encoder::{DualEncoder, EncoderConfig};
use crate::error::{DlgError, Result};
use crate::head::{total_loss, ConvGru, Decoder, Fsfa, SideHead};
use crate::nn::{Conv, Init};
use crate::tensor::{Graph, ParamStore, SeededRng, Tensor, Var};

/// Slice count the concat baseline replicates the stack to.
pub const CONCAT_SLICES: usize = 12;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Fusion {
    /// DLG + FSFA + ConvGRU, iterated `steps` times.
    Dlg,
    /// Stack replicated to 12 slices, concatenated with `F_a`, 3x3 conv.
    Concat,
    /// ConvGRU run over the slices in order, starting from `F_a`.
    Gru,
}

impl fmt::Display for Fusion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Fusion::Dlg => "dlg",
            Fusion::Concat => "concat",
            Fusion::Gru => "gru",
        })
    }
}

impl FromStr for Fusion {
    type Err = DlgError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dlg" => Ok(Fusion::Dlg),
            "concat" => Ok(Fusion::Concat),
            "gru" => Ok(Fusion::Gru),
            other => Err(DlgError::Config(format!(
                "unknown fusion '{other}' (expected dlg, concat or gru)"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub encoder: EncoderConfig,
    pub dlg: DlgConfig,
    /// Reciprocative steps `T`.
    pub steps: usize,
    pub gru_kernel: usize,
    pub fusion: Fusion,
    /// Low-level skip in the decoder.
    pub refine: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        let encoder = EncoderConfig::default();
        let dlg = DlgConfig::new(encoder.out_channels);
        Self {
            encoder,
            dlg,
            steps: 5,
            gru_kernel: 3,
            fusion: Fusion::Dlg,
            refine: true,
        }
    }
}

impl ModelConfig {
    pub fn channels(&self) -> usize {
        self.encoder.out_channels
    }

    /// Set `C` for both the encoder output and the graph nodes.
    pub fn set_channels(&mut self, c: usize) {
        self.encoder.out_channels = c;
        self.dlg.channels = c;
        self.dlg.edge_channels = c;
    }

    pub fn validate(&self) -> Result<()> {
        self.encoder.validate()?;
        self.dlg.window.validate()?;
        if self.dlg.channels != self.encoder.out_channels {
            return Err(DlgError::Config(format!(
                "graph width {} differs from encoder output width {}",
                self.dlg.channels, self.encoder.out_channels
            )));
        }
        if self.steps == 0 {
            return Err(DlgError::Config("recip.t must be at least 1".into()));
        }
        if self.gru_kernel.is_multiple_of(2) {
            return Err(DlgError::Config(format!(
                "gru.kernel must be odd, got {}",
                self.gru_kernel
            )));
        }
        Ok(())
    }

    /// Steps that produce a side map.
    pub fn effective_steps(&self) -> usize {
        match self.fusion {
            Fusion::Dlg => self.steps,
            Fusion::Concat | Fusion::Gru => 1,
        }
    }
}

/// States of the fusion loop. Index `t` of `focal` and `allfocus` is
/// step `t`, with `t = 0` straight from the encoders; `fused`,
/// `attention` and `sides` start at `t = 1`.
#[derive(Clone, Debug, Default)]
pub struct StepTrace {
    pub focal: Vec<Var>,
    pub allfocus: Vec<Var>,
    pub fused: Vec<Var>,
    pub attention: Vec<Var>,
    pub sides: Vec<Var>,
}

impl StepTrace {
    pub fn steps(&self) -> usize {
        self.sides.len()
    }
}

#[derive(Clone, Debug)]
pub struct ModelOutput {
    pub trace: StepTrace,
    pub lowlevel: Var,
    pub final_map: Var,
}

/// Maps produced by one inference pass.
#[derive(Clone, Debug)]
pub struct Prediction {
    /// `[1,1,H,W]`.
    pub final_map: Tensor,
    /// Side maps `S^1 .. S^T` at the fused-feature scale.
    pub sides: Vec<Tensor>,
    /// FSFA weights `[N,1,h,w]` of every step (empty for the baselines).
    pub attention: Vec<Tensor>,
}

#[derive(Clone, Debug)]
pub struct SaliencyModel {
    pub config: ModelConfig,
    pub encoders: DualEncoder,
    pub dlg: Option<DlgLayer>,
    pub fsfa: Fsfa,
    pub gru: ConvGru,
    pub side: SideHead,
    pub concat: Option<Conv>,
    pub decoder: Decoder,
}

impl SaliencyModel {
    pub fn new(store: &mut ParamStore, config: &ModelConfig, rng: &mut SeededRng) -> Result<Self> {
        config.validate()?;
        let c = config.channels();
        let encoders = DualEncoder::new(store, &config.encoder, rng)?;
        let dlg = match config.fusion {
            Fusion::Dlg => Some(DlgLayer::new(store, "dlg", &config.dlg, rng)?),
            _ => None,
        };
        let fsfa = Fsfa::new(store, "fsfa", c, rng)?;
        let gru = ConvGru::new(store, "gru", c, config.gru_kernel, rng)?;
        let side = SideHead::new(store, "side", c, rng)?;
        let concat = match config.fusion {
            Fusion::Concat => Some(Conv::new(
                store,
                "concat",
                (CONCAT_SLICES + 1) * c,
                c,
                3,
                Init::Relu,
                rng,
            )?),
            _ => None,
        };
        let low = config.refine.then_some(config.encoder.stage_channels[0]);
        let decoder = Decoder::new(store, "dec", c, low, rng)?;
        Ok(Self {
            config: config.clone(),
            encoders,
            dlg,
            fsfa,
            gru,
            side,
            concat,
            decoder,
        })
    }

    /// One reciprocative step: `F_f' = DLG(F_f, F_a)`, `O = FSFA(F_f')`,
    /// `F_a' = GRU(O, F_a)`. Returns `(F_f', O, A, F_a')`.
    pub fn recip_step(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        f_f: Var,
        f_a: Var,
    ) -> Result<(Var, Var, Var, Var)> {
        let dlg = self.dlg.as_ref().ok_or_else(|| {
            DlgError::Config(format!(
                "model with {} fusion has no graph layer",
                self.config.fusion
            ))
        })?;
        let f_f1 = dlg.forward(g, store, f_f, f_a)?;
        let (o, a) = self.fsfa.forward(g, store, f_f1)?;
        let f_a1 = self.gru.forward(g, store, o, f_a)?;
        Ok((f_f1, o, a, f_a1))
    }

    /// Run `steps` reciprocative steps from the encoder features.
    pub fn reciprocative_forward(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        f_f0: Var,
        f_a0: Var,
        steps: usize,
    ) -> Result<StepTrace> {
        if steps == 0 {
            return Err(DlgError::invalid("reciprocative loop needs T >= 1"));
        }
        let mut tr = StepTrace {
            focal: vec![f_f0],
            allfocus: vec![f_a0],
            ..StepTrace::default()
        };
        let (mut f_f, mut f_a) = (f_f0, f_a0);
        for _ in 0..steps {
            let (nf, o, a, na) = self.recip_step(g, store, f_f, f_a)?;
            (f_f, f_a) = (nf, na);
            let s = self.side.forward(g, store, f_a)?;
            tr.focal.push(f_f);
            tr.allfocus.push(f_a);
            tr.fused.push(o);
            tr.attention.push(a);
            tr.sides.push(s);
        }
        Ok(tr)
    }

    fn baseline_forward(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        f_f0: Var,
        f_a0: Var,
    ) -> Result<StepTrace> {
        let n = g.value(f_f0).dims4()?[0];
        let fused = match self.config.fusion {
            Fusion::Concat => {
                let conv = self
                    .concat
                    .as_ref()
                    .expect("concat conv exists for concat fusion");
                let mut parts = Vec::with_capacity(CONCAT_SLICES + 1);
                for i in 0..CONCAT_SLICES {
                    parts.push(g.select_batch(f_f0, &[i * n / CONCAT_SLICES])?);
                }
                parts.push(f_a0);
                let cat = g.concat_channels(&parts)?;
                conv.forward_relu(g, store, cat)?
            }
            Fusion::Gru => {
                let mut h = f_a0;
                for i in 0..n {
                    let x = g.select_batch(f_f0, &[i])?;
                    h = self.gru.forward(g, store, x, h)?;
                }
                h
            }
            Fusion::Dlg => unreachable!("handled by reciprocative_forward"),
        };
        let s = self.side.forward(g, store, fused)?;
        Ok(StepTrace {
            focal: vec![f_f0],
            allfocus: vec![f_a0, fused],
            fused: vec![fused],
            attention: Vec::new(),
            sides: vec![s],
        })
    }

    /// `allfocus [1,3,H,W]`, `slices [N,3,H,W]`.
    pub fn forward(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        allfocus: Var,
        slices: Var,
    ) -> Result<ModelOutput> {
        let [_, _, h, w] = g.value(allfocus).dims4()?;
        let [_, _, hs, ws] = g.value(slices).dims4()?;
        if (h, w) != (hs, ws) {
            return Err(DlgError::shape(format!(
                "all-focus image {h}x{w} and focal slices {hs}x{ws} differ"
            )));
        }
        let pa = self.encoders.encode_allfocus(g, store, allfocus)?;
        let pf = self.encoders.encode_focalstack(g, store, slices)?;
        let trace = match self.config.fusion {
            Fusion::Dlg => {
                self.reciprocative_forward(g, store, pf.fused, pa.fused, self.config.steps)?
            }
            _ => self.baseline_forward(g, store, pf.fused, pa.fused)?,
        };
        let last = *trace
            .allfocus
            .last()
            .expect("trace holds at least one state");
        let final_map = self.decoder.forward(g, store, last, pa.lowlevel, (h, w))?;
        Ok(ModelOutput {
            trace,
            lowlevel: pa.lowlevel,
            final_map,
        })
    }

    /// Forward a sample, returning the output and the total loss. The loss
    /// terms are `[final, side_1, ..., side_T]`.
    pub fn forward_loss(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        sample: &LightFieldSample,
    ) -> Result<(ModelOutput, Var, Vec<Var>)> {
        let a = g.input(sample.allfocus_batch());
        let s = g.input(sample.slices.clone());
        let out = self.forward(g, store, a, s)?;
        let (loss, terms) = total_loss(g, out.final_map, &out.trace.sides, &sample.gt_batch())?;
        Ok((out, loss, terms))
    }

    pub fn predict(&self, store: &ParamStore, sample: &LightFieldSample) -> Result<Prediction> {
        let mut g = Graph::new();
        let a = g.input(sample.allfocus_batch());
        let s = g.input(sample.slices.clone());
        let out = self.forward(&mut g, store, a, s)?;
        Ok(Prediction {
            final_map: g.value(out.final_map).clone(),
            sides: out
                .trace
                .sides
                .iter()
                .map(|&v| g.value(v).clone())
                .collect(),
            attention: out
                .trace
                .attention
                .iter()
                .map(|&v| g.value(v).clone())
                .collect(),
        })
    }
}
