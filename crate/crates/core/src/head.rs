//! Stack aggregation, the recurrent all-focus update, side heads, the
//! refinement decoder and the deep-supervision loss.

use crate::error::{DlgError, Result};
use crate::nn::{Conv, Init};
use crate::tensor::{kernels, Graph, ParamStore, SeededRng, Tensor, Var};

/// Focal stack feature aggregation: a shared 1x1 reduction to one logit
/// per slice and pixel, softmax over slices, weighted sum.
#[derive(Clone, Debug)]
pub struct Fsfa {
    pub reduce: Conv,
}

impl Fsfa {
    pub fn new(
        store: &mut ParamStore,
        prefix: &str,
        channels: usize,
        rng: &mut SeededRng,
    ) -> Result<Self> {
        Ok(Self {
            reduce: Conv::new(
                store,
                &format!("{prefix}.reduce"),
                channels,
                1,
                1,
                Init::Linear,
                rng,
            )?,
        })
    }

    /// `F_f' [N,C,H,W]` to `(O [1,C,H,W], A [N,1,H,W])`.
    pub fn forward(&self, g: &mut Graph, store: &ParamStore, f: Var) -> Result<(Var, Var)> {
        let logits = self.reduce.forward(g, store, f)?;
        let attn = g.softmax(logits, 0)?;
        let weighted = g.mul_channel_broadcast(f, attn)?;
        Ok((g.sum_batch(weighted)?, attn))
    }
}

/// Convolutional GRU over `[1,C,H,W]` maps.
#[derive(Clone, Debug)]
pub struct ConvGru {
    pub update: Conv,
    pub reset: Conv,
    pub candidate: Conv,
}

impl ConvGru {
    pub fn new(
        store: &mut ParamStore,
        prefix: &str,
        channels: usize,
        kernel: usize,
        rng: &mut SeededRng,
    ) -> Result<Self> {
        if kernel.is_multiple_of(2) {
            return Err(DlgError::Config(format!(
                "GRU kernel must be odd, got {kernel}"
            )));
        }
        let c2 = 2 * channels;
        Ok(Self {
            update: Conv::new(
                store,
                &format!("{prefix}.z"),
                c2,
                channels,
                kernel,
                Init::Linear,
                rng,
            )?,
            reset: Conv::new(
                store,
                &format!("{prefix}.r"),
                c2,
                channels,
                kernel,
                Init::Linear,
                rng,
            )?,
            candidate: Conv::new(
                store,
                &format!("{prefix}.h"),
                c2,
                channels,
                kernel,
                Init::Linear,
                rng,
            )?,
        })
    }

    /// `z = s(W_z [x, h])`, `r = s(W_r [x, h])`, `c = tanh(W_h [x, r*h])`,
    /// `h' = (1 - z) h + z c`.
    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var, h: Var) -> Result<Var> {
        if g.shape(x) != g.shape(h) {
            return Err(DlgError::shape(format!(
                "GRU input {:?} and state {:?} differ",
                g.shape(x),
                g.shape(h)
            )));
        }
        let xh = g.concat_channels(&[x, h])?;
        let z = self.update.forward(g, store, xh)?;
        let z = g.sigmoid(z)?;
        let r = self.reset.forward(g, store, xh)?;
        let r = g.sigmoid(r)?;
        let rh = g.mul(r, h)?;
        let xrh = g.concat_channels(&[x, rh])?;
        let c = self.candidate.forward(g, store, xrh)?;
        let c = g.tanh(c)?;
        // h + z (c - h)
        let diff = g.sub(c, h)?;
        let step = g.mul(z, diff)?;
        g.add(h, step)
    }
}

/// Shared 1x1 conv + sigmoid producing a side saliency map.
#[derive(Clone, Debug)]
pub struct SideHead {
    pub conv: Conv,
}

impl SideHead {
    pub fn new(
        store: &mut ParamStore,
        prefix: &str,
        channels: usize,
        rng: &mut SeededRng,
    ) -> Result<Self> {
        Ok(Self {
            conv: Conv::new(
                store,
                &format!("{prefix}.conv"),
                channels,
                1,
                1,
                Init::Linear,
                rng,
            )?,
        })
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, f: Var) -> Result<Var> {
        let logit = self.conv.forward(g, store, f)?;
        g.sigmoid(logit)
    }
}

/// Upsample to 1/2 scale, optionally add the projected low-level feature,
/// three 3x3 conv + ReLU, 3x3 conv + sigmoid, upsample to full size.
#[derive(Clone, Debug)]
pub struct Decoder {
    pub skip: Option<Conv>,
    pub convs: [Conv; 3],
    pub out: Conv,
}

impl Decoder {
    pub fn new(
        store: &mut ParamStore,
        prefix: &str,
        channels: usize,
        lowlevel_channels: Option<usize>,
        rng: &mut SeededRng,
    ) -> Result<Self> {
        let skip = match lowlevel_channels {
            Some(cl) => Some(Conv::new(
                store,
                &format!("{prefix}.skip"),
                cl,
                channels,
                1,
                Init::Linear,
                rng,
            )?),
            None => None,
        };
        let mut conv = |i: usize| {
            Conv::new(
                store,
                &format!("{prefix}.conv{i}"),
                channels,
                channels,
                3,
                Init::Relu,
                rng,
            )
        };
        let convs = [conv(0)?, conv(1)?, conv(2)?];
        let out = Conv::new(
            store,
            &format!("{prefix}.out"),
            channels,
            1,
            3,
            Init::Linear,
            rng,
        )?;
        Ok(Self { skip, convs, out })
    }

    /// `feature [1,C,h,w]` and `lowlevel [1,C1,H/2,W/2]` to `[1,1,H,W]`.
    pub fn forward(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        feature: Var,
        lowlevel: Var,
        (h, w): (usize, usize),
    ) -> Result<Var> {
        let [_, _, lh, lw] = g.value(lowlevel).dims4()?;
        if (2 * lh, 2 * lw) != (h, w) {
            return Err(DlgError::shape(format!(
                "low-level feature {lh}x{lw} is not at half of {h}x{w}"
            )));
        }
        let mut x = g.resize(feature, lh, lw)?;
        if let Some(skip) = &self.skip {
            let s = skip.forward(g, store, lowlevel)?;
            x = g.add(x, s)?;
        }
        for c in &self.convs {
            x = c.forward_relu(g, store, x)?;
        }
        let logit = self.out.forward(g, store, x)?;
        let logit = g.resize(logit, h, w)?;
        g.sigmoid(logit)
    }
}

/// Nearest-neighbor resize of a binary mask `[1,1,H,W]`.
pub fn downsample_mask(gt: &Tensor, oh: usize, ow: usize) -> Result<Tensor> {
    let [n, c, h, w] = gt.dims4()?;
    Tensor::new(
        &[n, c, oh, ow],
        kernels::nearest_forward(n * c, h, w, oh, ow, gt.data()),
    )
}

/// `BCE(final, gt) + sum_t BCE(side_t, gt downsampled)`, each mean-reduced.
/// Returns the total and the individual terms (final first).
pub fn total_loss(
    g: &mut Graph,
    final_map: Var,
    sides: &[Var],
    gt: &Tensor,
) -> Result<(Var, Vec<Var>)> {
    if !gt.data().iter().all(|&v| v == 0.0 || v == 1.0) {
        return Err(DlgError::invalid("ground truth must be binary"));
    }
    let mut terms = vec![g.bce(final_map, gt)?];
    for &s in sides {
        let [_, _, sh, sw] = g.value(s).dims4()?;
        let target = downsample_mask(gt, sh, sw)?;
        terms.push(g.bce(s, &target)?);
    }
    let mut total = terms[0];
    for &t in &terms[1..] {
        total = g.add(total, t)?;
    }
    Ok((total, terms))
}
