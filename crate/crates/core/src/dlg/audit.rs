//! Edge counts and wall time of the local graphs across input sizes.

use std::io::Write;
use std::path::Path;
use std::time::Instant;

use super::{dense_edge_count, DlgConfig, DlgLayer, EdgeCounts, NeighborIndex};
use crate::error::{DlgError, Result};
use crate::tensor::{ParamStore, SeededRng, Tensor};

pub const AUDIT_HEADER: &str = "n,h,w,k,dilations,edges_local,edges_dense_formula,ms";

#[derive(Clone, Debug)]
pub struct AuditRow {
    pub n: usize,
    pub h: usize,
    pub w: usize,
    pub k: usize,
    pub dilations: String,
    /// `N (N + 1) H W (1 + S)`, ignoring the border.
    pub edges_local: usize,
    /// Edges the kernels visit after border masking, counted by enumeration.
    pub edges_visited: usize,
    /// Closed form of `edges_visited`.
    pub edges_masked_formula: usize,
    pub edges_dense_formula: u128,
    /// Fastest of the timed forward passes.
    pub ms: f64,
}

impl AuditRow {
    pub fn csv(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{:.4}",
            self.n,
            self.h,
            self.w,
            self.k,
            self.dilations,
            self.edges_local,
            self.edges_dense_formula,
            self.ms
        )
    }
}

fn count_visited(index: &NeighborIndex, n: usize, h: usize, w: usize) -> usize {
    let mut per_slice_target = 0;
    for y in 0..h {
        for x in 0..w {
            per_slice_target += index.valid_mask(y, x, h, w).iter().filter(|&&v| v).count();
        }
    }
    // each valid position holds N focal sources and one all-focus source
    n * per_slice_target * (n + 1)
}

/// Time one DLG forward pass at every `(n, h, w)`, keeping the fastest of
/// `repeats` runs.
pub fn audit_complexity(
    sizes: &[(usize, usize, usize)],
    config: &DlgConfig,
    repeats: usize,
    seed: u64,
) -> Result<Vec<AuditRow>> {
    let mut rows = Vec::with_capacity(sizes.len());
    let mut store = ParamStore::new();
    let mut rng = SeededRng::new(seed);
    let mut cfg = config.clone();
    // random message projections so the timed path is the trained one
    cfg.zero_init_phi = false;
    let layer = DlgLayer::new(&mut store, "audit", &cfg, &mut rng)?;
    let c = cfg.channels;
    let mut inputs = Vec::with_capacity(sizes.len());
    for &(n, h, w) in sizes {
        if n == 0 || h == 0 || w == 0 {
            return Err(DlgError::invalid("audit sizes must be positive"));
        }
        inputs.push((
            Tensor::uniform(&[n, c, h, w], 1.0, &mut rng),
            Tensor::uniform(&[1, c, h, w], 1.0, &mut rng),
        ));
    }
    // round-robin over sizes so slow phases of the machine hit all of them
    let mut best = vec![f64::INFINITY; sizes.len()];
    for _ in 0..repeats.max(1) {
        for ((f_f, f_a), b) in inputs.iter().zip(best.iter_mut()) {
            let t0 = Instant::now();
            let out = layer.apply(&store, f_f, f_a)?;
            *b = b.min(t0.elapsed().as_secs_f64() * 1e3);
            std::hint::black_box(out);
        }
    }
    let index = &layer.index;
    for (&(n, h, w), &ms) in sizes.iter().zip(&best) {
        rows.push(AuditRow {
            n,
            h,
            w,
            k: cfg.window.k,
            dilations: cfg.window.dilations_label(),
            edges_local: EdgeCounts::nominal(n, h, w, index).total(),
            edges_visited: count_visited(index, n, h, w),
            edges_masked_formula: EdgeCounts::masked(n, h, w, index).total(),
            edges_dense_formula: dense_edge_count(n, h, w),
            ms,
        });
    }
    Ok(rows)
}

/// Least-squares slope of `ms` against `N H W`.
pub fn fitted_slope(rows: &[AuditRow]) -> f64 {
    let xs: Vec<f64> = rows.iter().map(|r| (r.n * r.h * r.w) as f64).collect();
    let ys: Vec<f64> = rows.iter().map(|r| r.ms).collect();
    let k = xs.len() as f64;
    let (mx, my) = (xs.iter().sum::<f64>() / k, ys.iter().sum::<f64>() / k);
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    if sxx == 0.0 {
        0.0
    } else {
        sxy / sxx
    }
}

pub fn write_audit_csv(path: &Path, rows: &[AuditRow]) -> Result<()> {
    let mut f = std::fs::File::create(path).map_err(|e| DlgError::io(path, e))?;
    let mut text = format!("{AUDIT_HEADER}\n");
    for r in rows {
        text.push_str(&r.csv());
        text.push('\n');
    }
    f.write_all(text.as_bytes())
        .map_err(|e| DlgError::io(path, e))
}
