//! Central finite-difference gradient checking.
//!
//! Inputs that are not parameters can be checked by registering them in the
//! store as parameters.

use crate::params::{Gradients, ParamId, ParamStore};

#[derive(Clone, Debug, Default)]
pub struct GradCheckReport {
    pub checked: usize,
    pub max_rel_err: f64,
    /// `(tensor name, element, analytic, numeric)` of the worst element.
    pub worst: Option<(String, usize, f64, f64)>,
}

impl GradCheckReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.checked > 0 && self.max_rel_err <= tol
    }
}

/// `|a - n| / max(|a|, |n|, floor)`. The floor keeps near-zero gradients
/// from turning round-off into large relative error.
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Central difference `(f(p + h) - f(p - h)) / 2h` for one scalar.
pub fn numeric_partial<F>(store: &mut ParamStore, id: ParamId, index: usize, h: f64, f: &mut F) -> f64
where
    F: FnMut(&ParamStore) -> f64,
{
    let orig = store.value(id)[index];
    store.value_mut(id)[index] = orig + h;
    let plus = f(store);
    store.value_mut(id)[index] = orig - h;
    let minus = f(store);
    store.value_mut(id)[index] = orig;
    (plus - minus) / (2.0 * h)
}

/// Compares `analytic` against central differences of `f` for every element
/// of every parameter (or the first `max_per_tensor` elements of each).
pub fn gradcheck<F>(
    store: &mut ParamStore,
    analytic: &Gradients,
    h: f64,
    max_per_tensor: Option<usize>,
    mut f: F,
) -> GradCheckReport
where
    F: FnMut(&ParamStore) -> f64,
{
    let mut report = GradCheckReport::default();
    let ids: Vec<ParamId> = store.ids().collect();
    for id in ids {
        let n = store.value(id).len();
        let limit = max_per_tensor.map_or(n, |m| m.min(n));
        for index in 0..limit {
            let a = analytic.get(id).map_or(0.0, |g| g[index]);
            let num = numeric_partial(store, id, index, h, &mut f);
            let err = relative_error(a, num, 1e-6);
            report.checked += 1;
            if err > report.max_rel_err || report.worst.is_none() {
                report.max_rel_err = report.max_rel_err.max(err);
                if err >= report.max_rel_err {
                    report.worst = Some((store.name(id).to_string(), index, a, num));
                }
            }
        }
    }
    report
}
