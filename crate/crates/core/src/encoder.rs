//! Tiny convolutional backbones with top-down multiscale fusion.
//!
//! Each stage is two 3x3 conv + ReLU followed by a 2x2 max-pool, so stage
//! `k` (from 0) emits features at scale `1 / 2^(k+1)`. The last three stages
//! are fused top-down: every stage is projected to `C` channels by a 1x1
//! conv, the running sum is upsampled x2 and added to the next shallower
//! projection, and a 3x3 conv smooths the result.

use crate::error::{DlgError, Result};
use crate::nn::{Conv, Init};
use crate::tensor::{Graph, ParamStore, SeededRng, Var};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EncoderConfig {
    pub stage_channels: Vec<usize>,
    pub out_channels: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            stage_channels: vec![16, 32, 32, 32],
            out_channels: 16,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.stage_channels.len() < 4 {
            return Err(DlgError::Config(format!(
                "encoder needs at least 4 stages, got {}",
                self.stage_channels.len()
            )));
        }
        if self.out_channels == 0 || self.stage_channels.contains(&0) {
            return Err(DlgError::Config(
                "encoder channel counts must be positive".into(),
            ));
        }
        Ok(())
    }

    /// Input sides must be multiples of this.
    pub fn divisor(&self) -> usize {
        1 << self.stage_channels.len()
    }

    /// Downsampling factor of the fused feature.
    pub fn fused_stride(&self) -> usize {
        1 << (self.stage_channels.len() - 2)
    }

    pub fn check_input(&self, h: usize, w: usize) -> Result<()> {
        let d = self.divisor();
        if h == 0 || w == 0 || !h.is_multiple_of(d) || !w.is_multiple_of(d) {
            return Err(DlgError::shape(format!(
                "input {h}x{w} is not divisible by {d}; resize it to a multiple of {d} first"
            )));
        }
        Ok(())
    }
}

/// Graph variables produced by one encoder pass.
#[derive(Clone, Debug)]
pub struct FeaturePyramid {
    /// Post-pool output of every stage.
    pub stages: Vec<Var>,
    pub fused: Var,
    /// First-stage output at 1/2 scale.
    pub lowlevel: Var,
}

#[derive(Clone, Debug)]
pub struct Encoder {
    pub config: EncoderConfig,
    pub(crate) convs: Vec<[Conv; 2]>,
    pub(crate) laterals: [Conv; 3],
    pub(crate) smooth: Conv,
}

impl Encoder {
    pub fn new(
        store: &mut ParamStore,
        prefix: &str,
        config: &EncoderConfig,
        rng: &mut SeededRng,
    ) -> Result<Self> {
        config.validate()?;
        let mut convs = Vec::new();
        let mut cin = 3;
        for (k, &c) in config.stage_channels.iter().enumerate() {
            convs.push([
                Conv::new(
                    store,
                    &format!("{prefix}.s{k}.conv0"),
                    cin,
                    c,
                    3,
                    Init::Relu,
                    rng,
                )?,
                Conv::new(
                    store,
                    &format!("{prefix}.s{k}.conv1"),
                    c,
                    c,
                    3,
                    Init::Relu,
                    rng,
                )?,
            ]);
            cin = c;
        }
        let s = config.stage_channels.len();
        let c = config.out_channels;
        let lat = |store: &mut ParamStore, rng: &mut SeededRng, i: usize| {
            Conv::new(
                store,
                &format!("{prefix}.lat{i}"),
                config.stage_channels[s - 3 + i],
                c,
                1,
                Init::Linear,
                rng,
            )
        };
        let laterals = [
            lat(store, rng, 0)?,
            lat(store, rng, 1)?,
            lat(store, rng, 2)?,
        ];
        let smooth = Conv::new(
            store,
            &format!("{prefix}.smooth"),
            c,
            c,
            3,
            Init::Linear,
            rng,
        )?;
        Ok(Self {
            config: config.clone(),
            convs,
            laterals,
            smooth,
        })
    }

    /// Run the backbone on `x: [B,3,H,W]`; every batch row is independent.
    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<FeaturePyramid> {
        let [_, c, h, w] = g.value(x).dims4()?;
        if c != 3 {
            return Err(DlgError::shape(format!(
                "encoder input needs 3 channels, got {c}"
            )));
        }
        self.config.check_input(h, w)?;
        let mut stages = Vec::with_capacity(self.convs.len());
        let mut cur = x;
        for [a, b] in &self.convs {
            cur = a.forward_relu(g, store, cur)?;
            cur = b.forward_relu(g, store, cur)?;
            cur = g.maxpool2(cur)?;
            stages.push(cur);
        }
        let s = stages.len();
        let fused = self.topdown_fuse(g, store, &stages[s - 3..])?;
        Ok(FeaturePyramid {
            lowlevel: stages[0],
            stages,
            fused,
        })
    }

    /// Fuse three features ordered shallow to deep, each half the size of
    /// the previous one.
    pub fn topdown_fuse(&self, g: &mut Graph, store: &ParamStore, feats: &[Var]) -> Result<Var> {
        if feats.len() != 3 {
            return Err(DlgError::shape(format!(
                "topdown_fuse needs 3 features, got {}",
                feats.len()
            )));
        }
        for pair in feats.windows(2) {
            let [_, _, h0, w0] = g.value(pair[0]).dims4()?;
            let [_, _, h1, w1] = g.value(pair[1]).dims4()?;
            if (h0, w0) != (2 * h1, 2 * w1) {
                return Err(DlgError::shape(format!(
                    "scale mismatch in top-down fusion: {h0}x{w0} is not twice {h1}x{w1}"
                )));
            }
        }
        let mut acc = self.laterals[2].forward(g, store, feats[2])?;
        for i in (0..2).rev() {
            let [_, _, h, w] = g.value(feats[i]).dims4()?;
            let up = g.resize(acc, h, w)?;
            let lat = self.laterals[i].forward(g, store, feats[i])?;
            acc = g.add(lat, up)?;
        }
        self.smooth.forward(g, store, acc)
    }
}

/// The two unshared streams.
#[derive(Clone, Debug)]
pub struct DualEncoder {
    pub allfocus: Encoder,
    pub focal: Encoder,
}

impl DualEncoder {
    pub fn new(
        store: &mut ParamStore,
        config: &EncoderConfig,
        rng: &mut SeededRng,
    ) -> Result<Self> {
        Ok(Self {
            allfocus: Encoder::new(store, "enc_a", config, rng)?,
            focal: Encoder::new(store, "enc_f", config, rng)?,
        })
    }

    /// `I_a: [1,3,H,W]`.
    pub fn encode_allfocus(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        image: Var,
    ) -> Result<FeaturePyramid> {
        let n = g.value(image).dims4()?[0];
        if n != 1 {
            return Err(DlgError::shape(format!(
                "all-focus input must have batch 1, got {n}"
            )));
        }
        self.allfocus.forward(g, store, image)
    }

    /// `I_f: [N,3,H,W]`; the slices share the focal-stream weights.
    pub fn encode_focalstack(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        slices: Var,
    ) -> Result<FeaturePyramid> {
        self.focal.forward(g, store, slices)
    }
}
