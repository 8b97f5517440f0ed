//! Central finite-difference gradient checking.

use crate::error::Result;

use super::params::{Gradients, ParamId, ParamStore};

/// Relative error used throughout gradient checks:
/// `|a - n| / max(|a|, |n|, floor)`.
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    pub worst_param: String,
    pub worst_index: usize,
    pub entries_checked: usize,
}

/// Compares analytic gradients with central differences
/// `(f(θ+h) - f(θ-h)) / 2h` for every entry of every parameter in `ids`.
pub fn check_gradients(
    store: &mut ParamStore,
    ids: &[ParamId],
    step: f64,
    floor: f64,
    mut loss: impl FnMut(&ParamStore) -> Result<f64>,
    analytic: &Gradients,
) -> Result<GradCheckReport> {
    let mut report = GradCheckReport {
        max_relative_error: 0.0,
        worst_param: String::new(),
        worst_index: 0,
        entries_checked: 0,
    };
    for &id in ids {
        for k in 0..store.get(id).len() {
            let original = store.get(id).data()[k];
            store.get_mut(id).data_mut()[k] = original + step;
            let plus = loss(store)?;
            store.get_mut(id).data_mut()[k] = original - step;
            let minus = loss(store)?;
            store.get_mut(id).data_mut()[k] = original;

            let numeric = (plus - minus) / (2.0 * step);
            let a = analytic.get(id).map_or(0.0, |g| g.data()[k]);
            let err = relative_error(a, numeric, floor);
            report.entries_checked += 1;
            if report.entries_checked == 1 || err > report.max_relative_error {
                report.max_relative_error = err;
                report.worst_param = store.name(id).to_string();
                report.worst_index = k;
            }
        }
    }
    Ok(report)
}
