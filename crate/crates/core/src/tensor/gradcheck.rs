//! Central finite-difference verification of analytic gradients.

use super::{ParamStore, Scalar, SeededRng};
use crate::error::{DlgError, Result};

#[derive(Clone, Debug)]
pub struct GradcheckOptions {
    /// Half-width of the central difference.
    pub eps: f64,
    /// Coordinates checked per parameter; larger tensors are sub-sampled.
    pub max_per_group: usize,
    /// Denominator floor of the relative error, so entries whose true
    /// gradient is zero are judged on absolute error instead.
    pub abs_floor: f64,
    pub seed: u64,
}

impl Default for GradcheckOptions {
    fn default() -> Self {
        Self {
            eps: 1e-3,
            max_per_group: usize::MAX,
            abs_floor: 1e-8,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct GroupError {
    pub name: String,
    pub checked: usize,
    /// Largest `|a - n| / max(|n|, abs_floor)` over checked entries, with
    /// `a` analytic and `n` numeric.
    pub max_rel_error: f64,
    pub max_abs_error: f64,
    pub max_abs_grad: f64,
}

/// Error of `analytic` relative to the finite-difference reference, with a
/// denominator floor.
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / numeric.abs().max(floor)
}

/// Compare the gradients already stored in `store` against central
/// differences of `loss`. Each parameter is one group.
///
/// `loss` must be a deterministic function of the parameter values; two
/// unperturbed evaluations that differ in any bit are rejected.
pub fn finite_difference_gradcheck<F>(
    mut loss: F,
    store: &mut ParamStore,
    opts: &GradcheckOptions,
) -> Result<Vec<GroupError>>
where
    F: FnMut(&ParamStore) -> Result<f64>,
{
    let base = loss(store)?;
    let again = loss(store)?;
    if base.to_bits() != again.to_bits() {
        return Err(DlgError::NonDeterministic(format!(
            "two evaluations at the same point gave {base} and {again}"
        )));
    }
    let mut rng = SeededRng::new(opts.seed);
    let ids: Vec<_> = store.ids().collect();
    let mut report = Vec::with_capacity(ids.len());
    for id in ids {
        let numel = store.get(id).value.numel();
        let analytic: Vec<Scalar> = match &store.get(id).grad {
            Some(g) => g.data().to_vec(),
            None => vec![0.0; numel],
        };
        let mut coords: Vec<usize> = (0..numel).collect();
        if numel > opts.max_per_group {
            rng.shuffle(&mut coords);
            coords.truncate(opts.max_per_group);
            coords.sort_unstable();
        }
        let mut group = GroupError {
            name: store.get(id).name.clone(),
            checked: coords.len(),
            max_rel_error: 0.0,
            max_abs_error: 0.0,
            max_abs_grad: 0.0,
        };
        for &i in &coords {
            let orig = store.get(id).value.data()[i];
            let plus = (orig as f64 + opts.eps) as Scalar;
            let minus = (orig as f64 - opts.eps) as Scalar;
            store.get_mut(id).value.data_mut()[i] = plus;
            let f_plus = loss(store);
            store.get_mut(id).value.data_mut()[i] = minus;
            let f_minus = loss(store);
            store.get_mut(id).value.data_mut()[i] = orig;
            // divide by the step actually taken after rounding
            let numeric = (f_plus? - f_minus?) / (plus as f64 - minus as f64);
            let a = analytic[i] as f64;
            group.max_rel_error =
                group
                    .max_rel_error
                    .max(relative_error(a, numeric, opts.abs_floor));
            group.max_abs_error = group.max_abs_error.max((a - numeric).abs());
            group.max_abs_grad = group.max_abs_grad.max(a.abs()).max(numeric.abs());
        }
        report.push(group);
    }
    Ok(report)
}
