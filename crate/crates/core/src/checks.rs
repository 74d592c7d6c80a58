//! Self-checks run by `dlgsal check` and the acceptance suite: the fused
//! DLG kernels against the edge-by-edge oracle, and analytic gradients of
//! the whole unrolled model against central differences.

use crate::data::LightFieldSample;
use crate::dlg::{dense_oracle, DlgConfig, DlgLayer, WindowSpec};
use crate::encoder::EncoderConfig;
use crate::error::Result;
use crate::model::{ModelConfig, SaliencyModel};
use crate::reference;
use crate::tensor::gradcheck::{finite_difference_gradcheck, GradcheckOptions, GroupError};
use crate::tensor::{Graph, ParamStore, Scalar, SeededRng, Tensor};

#[derive(Clone, Debug)]
pub struct OracleReport {
    pub instances: usize,
    pub max_abs_diff: f64,
    /// Largest difference at locations on the image border.
    pub max_border_diff: f64,
}

/// Random layer (every parameter uniform in `[-0.6, 0.6]`) and features.
pub fn random_instance(
    n: usize,
    c: usize,
    (h, w): (usize, usize),
    window: WindowSpec,
    rng: &mut SeededRng,
) -> Result<(DlgLayer, ParamStore, Tensor, Tensor)> {
    let mut store = ParamStore::new();
    let cfg = DlgConfig {
        window,
        zero_init_phi: false,
        ..DlgConfig::new(c)
    };
    let layer = DlgLayer::new(&mut store, "dlg", &cfg, rng)?;
    for p in store.iter_mut() {
        for v in p.value.data_mut() {
            *v = rng.uniform(-0.6, 0.6) as Scalar;
        }
    }
    let f = Tensor::uniform(&[n, c, h, w], 1.0, rng);
    let a = Tensor::uniform(&[1, c, h, w], 1.0, rng);
    Ok((layer, store, f, a))
}

/// Fused kernels vs the dense oracle on `instances` random problems with
/// `N in 1..=4`, `H, W in 3..=8`, `C in 2..=8`, `k = 3`, `d in {[1], [1,3]}`.
pub fn oracle_suite(instances: usize, seed: u64) -> Result<OracleReport> {
    let mut rng = SeededRng::new(seed);
    let mut report = OracleReport {
        instances,
        max_abs_diff: 0.0,
        max_border_diff: 0.0,
    };
    for i in 0..instances {
        let n = 1 + rng.below(4);
        let c = 2 + rng.below(7);
        let (h, w) = (3 + rng.below(6), 3 + rng.below(6));
        let dil = if i % 2 == 0 { vec![1] } else { vec![1, 3] };
        let (layer, store, f, a) =
            random_instance(n, c, (h, w), WindowSpec::new(3, dil)?, &mut rng)?;
        let fast = layer.apply(&store, &f, &a)?;
        let oracle = dense_oracle(&layer, &store, &f, &a)?;
        for (j, (x, y)) in fast.data().iter().zip(oracle.out.data()).enumerate() {
            let d = (*x as f64 - *y as f64).abs();
            let (py, px) = ((j / w) % h, j % w);
            if py == 0 || px == 0 || py == h - 1 || px == w - 1 {
                report.max_border_diff = report.max_border_diff.max(d);
            }
            report.max_abs_diff = report.max_abs_diff.max(d);
        }
    }
    Ok(report)
}

#[derive(Clone, Debug)]
pub struct GradcheckReport {
    pub groups: Vec<GroupError>,
    /// Worst `max_rel_error` over all groups.
    pub max_rel_error: f64,
    pub worst_group: String,
}

/// Central-difference step of the end-to-end check.
pub const GRADCHECK_EPS: f64 = 1e-6;
/// Gradients smaller than this are judged on absolute error; below it the
/// `f32` backward pass carries accumulation noise of about `1e-9`.
pub const GRADCHECK_ABS_FLOOR: f64 = 1e-5;

/// Exhaustive options for [`model_gradcheck`].
pub fn gradcheck_options(seed: u64) -> GradcheckOptions {
    GradcheckOptions {
        eps: GRADCHECK_EPS,
        abs_floor: GRADCHECK_ABS_FLOOR,
        max_per_group: usize::MAX,
        seed,
    }
}

/// Small model used for the end-to-end gradient check.
pub fn gradcheck_model_config(steps: usize) -> ModelConfig {
    let mut cfg = ModelConfig {
        encoder: EncoderConfig {
            stage_channels: vec![4, 4, 4, 4],
            out_channels: 4,
        },
        steps,
        ..ModelConfig::default()
    };
    cfg.set_channels(4);
    cfg.dlg.zero_init_phi = false;
    cfg
}

/// Two-slice `hw x hw` sample with a disc of foreground.
pub fn gradcheck_sample(n: usize, hw: usize, seed: u64) -> Result<LightFieldSample> {
    let mut rng = SeededRng::new(seed);
    let allfocus = Tensor::uniform(&[3, hw, hw], 1.0, &mut rng).map(|v| v.abs());
    let slices = Tensor::uniform(&[n, 3, hw, hw], 1.0, &mut rng).map(|v| v.abs());
    let r2 = (hw * hw / 9) as isize;
    let c = hw as isize / 2;
    let gt = Tensor::from_fn(&[1, hw, hw], |i| {
        let (y, x) = ((i / hw) as isize, (i % hw) as isize);
        ((y - c).pow(2) + (x - c).pow(2) < r2) as u8 as Scalar
    });
    LightFieldSample::new(allfocus, slices, gt)
}

/// Backpropagated `Scalar` gradients of the full training loss (encoders,
/// DLG, FSFA, ConvGRU, side heads, decoder, BCE) against central
/// differences of the `f64` reference evaluation, for every parameter group.
pub fn model_gradcheck(
    config: &ModelConfig,
    sample: &LightFieldSample,
    opts: &GradcheckOptions,
    seed: u64,
) -> Result<GradcheckReport> {
    let mut store = ParamStore::new();
    let model = SaliencyModel::new(&mut store, config, &mut SeededRng::new(seed))?;
    let mut g = Graph::new();
    let (_, loss, _) = model.forward_loss(&mut g, &store, sample)?;
    store.zero_grads();
    g.backward_into(loss, &mut store)?;
    drop(g);
    let groups =
        finite_difference_gradcheck(|s| reference::loss(&model, s, sample), &mut store, opts)?;
    let worst = groups
        .iter()
        .max_by(|a, b| a.max_rel_error.total_cmp(&b.max_rel_error))
        .cloned();
    Ok(GradcheckReport {
        max_rel_error: worst.as_ref().map_or(0.0, |w| w.max_rel_error),
        worst_group: worst.map(|w| w.name).unwrap_or_default(),
        groups,
    })
}
