//! Central finite-difference verification of tape gradients.

use super::params::{ParamId, ParamStore};
use super::tape::{Tape, Var};

/// Outcome of comparing analytic and numeric gradients for every parameter entry.
#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub checked: usize,
    /// Worst `|analytic - numeric| / max(|analytic|, |numeric|)` among entries
    /// whose absolute error exceeds the floor.
    pub max_rel_error: f64,
    pub max_abs_error: f64,
    /// Entries failing both the relative tolerance and the absolute floor.
    pub failures: Vec<GradFailure>,
}

#[derive(Clone, Debug)]
pub struct GradFailure {
    pub param: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }
}

/// Compares tape gradients of `build` against central differences with step `h`.
///
/// An entry passes when its relative error is at most `rel_tol` or its absolute
/// error is at most `abs_floor`.
pub fn check_gradients<F>(
    params: &mut ParamStore,
    h: f64,
    rel_tol: f64,
    abs_floor: f64,
    build: F,
) -> GradCheckReport
where
    F: Fn(&mut Tape, &ParamStore) -> Var,
{
    params.zero_grads();
    let mut tape = Tape::new();
    let loss = build(&mut tape, params);
    tape.backward(loss, params);
    let analytic: Vec<(ParamId, Vec<f64>)> = params
        .ids()
        .map(|id| (id, params.grad(id).data().to_vec()))
        .collect();
    params.zero_grads();

    let eval = |params: &ParamStore| {
        let mut tape = Tape::new();
        let loss = build(&mut tape, params);
        tape.value(loss).get(0, 0)
    };

    let mut report = GradCheckReport {
        checked: 0,
        max_rel_error: 0.0,
        max_abs_error: 0.0,
        failures: Vec::new(),
    };
    for (id, grads) in analytic {
        for (k, &a) in grads.iter().enumerate() {
            let original = params.value(id).data()[k];
            params.value_mut(id).data_mut()[k] = original + h;
            let plus = eval(params);
            params.value_mut(id).data_mut()[k] = original - h;
            let minus = eval(params);
            params.value_mut(id).data_mut()[k] = original;
            let numeric = (plus - minus) / (2.0 * h);

            let abs = (a - numeric).abs();
            let scale = a.abs().max(numeric.abs());
            let rel = if scale > 0.0 { abs / scale } else { 0.0 };
            report.checked += 1;
            report.max_abs_error = report.max_abs_error.max(abs);
            if abs > abs_floor {
                report.max_rel_error = report.max_rel_error.max(rel);
                if rel > rel_tol {
                    report.failures.push(GradFailure {
                        param: params.name(id).to_string(),
                        index: k,
                        analytic: a,
                        numeric,
                    });
                }
            }
        }
    }
    report
}
