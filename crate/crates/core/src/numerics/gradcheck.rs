//! Central finite-difference gradient checking.

use super::graph::{Graph, Var};
use super::params::{ParamId, ParamStore};
use crate::error::Result;

/// Magnitudes below this are compared absolutely rather than relatively.
pub const REL_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub checked: usize,
    pub max_rel_err: f64,
    /// (parameter name, flat index, analytic, numeric) at the worst entry.
    pub worst: Option<(String, usize, f64, f64)>,
}

pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

/// Compares analytic gradients of `loss_fn` w.r.t. `ids` against the
/// five-point central difference with step `h` (error O(h⁴)). `loss_fn` must build a fresh graph and return
/// a scalar. `stride` > 1 samples every stride-th entry of each parameter.
pub fn check_params<F>(store: &mut ParamStore, ids: &[ParamId], h: f64, stride: usize, loss_fn: F) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph, &ParamStore) -> Result<Var>,
{
    store.zero_grad();
    let mut g = Graph::new();
    let loss = loss_fn(&mut g, store)?;
    store.backward(&g, loss)?;

    let eval = |store: &ParamStore| -> Result<f64> {
        let mut g = Graph::new();
        let loss = loss_fn(&mut g, store)?;
        Ok(g.value(loss)[0])
    };

    let mut report = GradCheckReport { checked: 0, max_rel_err: 0.0, worst: None };
    for &id in ids {
        let analytic = store.get(id).tensor.grad().map(|g| g.to_vec()).unwrap_or_else(|| vec![0.0; store.get(id).tensor.numel()]);
        for i in (0..analytic.len()).step_by(stride.max(1)) {
            let orig = store.get(id).tensor.data()[i];
            let mut at = |dx: f64| -> Result<f64> {
                store.get_mut(id).tensor.data_mut()[i] = orig + dx;
                eval(store)
            };
            let (p1, m1, p2, m2) = (at(h)?, at(-h)?, at(2.0 * h)?, at(-2.0 * h)?);
            store.get_mut(id).tensor.data_mut()[i] = orig;
            let numeric = (8.0 * (p1 - m1) - (p2 - m2)) / (12.0 * h);
            let err = rel_err(analytic[i], numeric);
            report.checked += 1;
            if err > report.max_rel_err || report.worst.is_none() {
                report.max_rel_err = report.max_rel_err.max(err);
                if err >= report.max_rel_err {
                    report.worst = Some((store.get(id).name.clone(), i, analytic[i], numeric));
                }
            }
        }
    }
    store.zero_grad();
    Ok(report)
}
