//! Dual local graph: windowed message passing from neighboring focal nodes
//! (focal-focal graph) and from the aligned all-focus neighborhood
//! (focal-all graph) into the `N` focal target nodes of every pixel.
//!
//! For a target `u` with state `h_u`:
//!
//! ```text
//! e_uv  = <theta_f(h_u), phi_f(h_v)>           v in V^f  (all slices, center + window)
//! e_uq  = psi([theta_a(h_u), phi_a(h_q)])      q in V_S' (all-focus, center + window)
//! m^f_u = sum_v softmax_v(e_uv) g_f(h_v)
//! m^a_u = sum_q softmax_q(e_uq) g_a(h_q)
//! h'_u  = h_u + vphi_f(m^f_u) + vphi_a(m^a_u)
//! ```
//!
//! Window positions outside the image are dropped from the softmax.

mod attention;
mod audit;
mod edges;
mod oracle;
mod window;

use std::sync::Arc;

pub use attention::{
    allfocus_attention_forward, allfocus_attention_sums, focal_attention_forward,
    focal_attention_sums, AllFocusAttentionOp, FocalAttentionOp,
};
pub use audit::{audit_complexity, fitted_slope, write_audit_csv, AuditRow, AUDIT_HEADER};
pub use edges::{edge_fa, edge_ff, node_update};
pub use oracle::{dense_oracle, dense_oracle_f64, OracleOutput, ORACLE_MAX_NODES};
pub use window::{
    dense_edge_count, neighbor_sets, surrounding_offsets, EdgeCounts, NeighborIndex, NeighborSets,
    NodeId, Offset, WindowSpec,
};

use crate::error::{DlgError, Result};
use crate::nn::{Conv, Init};
use crate::tensor::{Graph, ParamId, ParamStore, Scalar, SeededRng, Tensor, Var};

#[derive(Clone, Debug, PartialEq)]
pub struct DlgConfig {
    pub window: WindowSpec,
    /// Node embedding width `C`.
    pub channels: usize,
    /// Edge embedding width `C'`.
    pub edge_channels: usize,
    pub use_ff: bool,
    pub use_fa: bool,
    /// Start the message projections at zero so the layer is the identity.
    pub zero_init_phi: bool,
}

impl DlgConfig {
    pub fn new(channels: usize) -> Self {
        Self {
            window: WindowSpec::default(),
            channels,
            edge_channels: channels,
            use_ff: true,
            use_fa: true,
            zero_init_phi: true,
        }
    }
}

/// Parameters grouped by role. Every linear map is a 1x1 convolution with
/// bias; `psi` maps the concatenated `2C'` edge features to one logit.
#[derive(Clone, Debug)]
pub struct DlgParams {
    pub theta_f: Conv,
    pub phi_f: Conv,
    pub g_f: Conv,
    pub vphi_f: Conv,
    pub theta_a: Conv,
    pub phi_a: Conv,
    pub psi_w: ParamId,
    pub psi_b: ParamId,
    pub g_a: Conv,
    pub vphi_a: Conv,
}

impl DlgParams {
    pub fn new(
        store: &mut ParamStore,
        prefix: &str,
        cfg: &DlgConfig,
        rng: &mut SeededRng,
    ) -> Result<Self> {
        let (c, ce) = (cfg.channels, cfg.edge_channels);
        if c == 0 || ce == 0 {
            return Err(DlgError::Config(
                "DLG channel counts must be positive".into(),
            ));
        }
        let phi_init = if cfg.zero_init_phi {
            Init::Zero
        } else {
            Init::Linear
        };
        let mut lin = |name: &str, cin, cout, init| {
            Conv::new(store, &format!("{prefix}.{name}"), cin, cout, 1, init, rng)
        };
        let theta_f = lin("theta_f", c, ce, Init::Linear)?;
        let phi_f = lin("phi_f", c, ce, Init::Linear)?;
        let g_f = lin("g_f", c, c, Init::Linear)?;
        let vphi_f = lin("vphi_f", c, c, phi_init)?;
        let theta_a = lin("theta_a", c, ce, Init::Linear)?;
        let phi_a = lin("phi_a", c, ce, Init::Linear)?;
        let g_a = lin("g_a", c, c, Init::Linear)?;
        let vphi_a = lin("vphi_a", c, c, phi_init)?;
        let bound = 1.0 / ((2 * ce) as f64).sqrt();
        let psi_w = store.add(
            format!("{prefix}.psi.w"),
            Tensor::uniform(&[2 * ce], bound as Scalar, rng),
        )?;
        let psi_b = store.add_zeros(format!("{prefix}.psi.b"), &[1])?;
        Ok(Self {
            theta_f,
            phi_f,
            g_f,
            vphi_f,
            theta_a,
            phi_a,
            psi_w,
            psi_b,
            g_a,
            vphi_a,
        })
    }
}

/// Intermediate graph values of one application, for inspection.
#[derive(Clone, Copy, Debug)]
pub struct DlgTrace {
    pub out: Var,
    pub m_f: Option<Var>,
    pub m_a: Option<Var>,
    pub theta_f: Option<Var>,
    pub phi_f: Option<Var>,
    pub theta_a: Option<Var>,
    pub phi_a: Option<Var>,
}

#[derive(Clone, Debug)]
pub struct DlgLayer {
    pub config: DlgConfig,
    pub index: NeighborIndex,
    pub params: DlgParams,
    support: Arc<Vec<Offset>>,
}

impl DlgLayer {
    pub fn new(
        store: &mut ParamStore,
        prefix: &str,
        config: &DlgConfig,
        rng: &mut SeededRng,
    ) -> Result<Self> {
        let index = NeighborIndex::new(&config.window)?;
        let params = DlgParams::new(store, prefix, config, rng)?;
        Ok(Self {
            config: config.clone(),
            support: Arc::new(index.support.clone()),
            index,
            params,
        })
    }

    fn check(&self, g: &Graph, f_f: Var, f_a: Var) -> Result<()> {
        let [n, c, h, w] = g.value(f_f).dims4()?;
        let [na, ca, ha, wa] = g.value(f_a).dims4()?;
        if n == 0 || na != 1 {
            return Err(DlgError::shape(format!(
                "DLG needs F_f [N>=1,C,H,W] and F_a [1,C,H,W], got {:?} and {:?}",
                g.shape(f_f),
                g.shape(f_a)
            )));
        }
        if (h, w) != (ha, wa) {
            return Err(DlgError::shape(format!(
                "focal and all-focus features are not spatially aligned: {h}x{w} vs {ha}x{wa}"
            )));
        }
        if c != self.config.channels || ca != self.config.channels {
            return Err(DlgError::shape(format!(
                "DLG built for C={}, got {c} and {ca}",
                self.config.channels
            )));
        }
        Ok(())
    }

    /// `F_f [N,C,H,W]`, `F_a [1,C,H,W]` to the updated `F_f'`.
    pub fn forward(&self, g: &mut Graph, store: &ParamStore, f_f: Var, f_a: Var) -> Result<Var> {
        Ok(self.forward_traced(g, store, f_f, f_a)?.out)
    }

    pub fn forward_traced(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        f_f: Var,
        f_a: Var,
    ) -> Result<DlgTrace> {
        self.check(g, f_f, f_a)?;
        let p = &self.params;
        let mut trace = DlgTrace {
            out: f_f,
            m_f: None,
            m_a: None,
            theta_f: None,
            phi_f: None,
            theta_a: None,
            phi_a: None,
        };
        let mut update: Option<Var> = None;
        if self.config.use_ff {
            let tf = p.theta_f.forward(g, store, f_f)?;
            let pf = p.phi_f.forward(g, store, f_f)?;
            let vf = p.g_f.forward(g, store, f_f)?;
            let m = focal_attention_forward(&self.support, g.value(tf), g.value(pf), g.value(vf));
            let m_f = g.custom(
                &[tf, pf, vf],
                m,
                Box::new(FocalAttentionOp {
                    support: self.support.clone(),
                }),
            )?;
            update = Some(p.vphi_f.forward(g, store, m_f)?);
            trace.m_f = Some(m_f);
            trace.theta_f = Some(tf);
            trace.phi_f = Some(pf);
        }
        if self.config.use_fa {
            let ta = p.theta_a.forward(g, store, f_f)?;
            let pa = p.phi_a.forward(g, store, f_a)?;
            let va = p.g_a.forward(g, store, f_a)?;
            let psi_w = g.param(store, p.psi_w);
            let psi_b = g.param(store, p.psi_b);
            let m = allfocus_attention_forward(
                &self.support,
                g.value(ta),
                g.value(pa),
                g.value(va),
                g.value(psi_w),
                g.value(psi_b),
            );
            let m_a = g.custom(
                &[ta, pa, va, psi_w, psi_b],
                m,
                Box::new(AllFocusAttentionOp {
                    support: self.support.clone(),
                }),
            )?;
            let u = p.vphi_a.forward(g, store, m_a)?;
            update = Some(match update {
                Some(prev) => g.add(prev, u)?,
                None => u,
            });
            trace.m_a = Some(m_a);
            trace.theta_a = Some(ta);
            trace.phi_a = Some(pa);
        }
        if let Some(u) = update {
            trace.out = g.add(f_f, u)?;
        }
        Ok(trace)
    }

    /// Run on plain tensors and return `F_f'`.
    pub fn apply(&self, store: &ParamStore, f_f: &Tensor, f_a: &Tensor) -> Result<Tensor> {
        let mut g = Graph::new();
        let (a, b) = (g.input(f_f.clone()), g.input(f_a.clone()));
        let out = self.forward(&mut g, store, a, b)?;
        Ok(g.value(out).clone())
    }

    /// Per-target sums of the focal-focal and focal-all attention weights.
    pub fn attention_sums(
        &self,
        store: &ParamStore,
        f_f: &Tensor,
        f_a: &Tensor,
    ) -> Result<(Vec<f64>, Vec<f64>)> {
        let mut g = Graph::new();
        let (a, b) = (g.input(f_f.clone()), g.input(f_a.clone()));
        let t = self.forward_traced(&mut g, store, a, b)?;
        let ff = match (t.theta_f, t.phi_f) {
            (Some(tf), Some(pf)) => focal_attention_sums(&self.support, g.value(tf), g.value(pf)),
            _ => Vec::new(),
        };
        let fa = match (t.theta_a, t.phi_a) {
            (Some(ta), Some(pa)) => allfocus_attention_sums(
                &self.support,
                g.value(ta),
                g.value(pa),
                store.value(self.params.psi_w),
                store.value(self.params.psi_b),
            ),
            _ => Vec::new(),
        };
        Ok((ff, fa))
    }
}
