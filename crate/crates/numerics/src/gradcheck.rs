//! Central finite-difference verification of analytic gradients.

use crate::params::{Gradients, ParamId, ParameterStore};

#[derive(Debug, Clone)]
pub struct ParamCheck {
    pub name: String,
    /// `||analytic - numeric|| / max(||analytic||, ||numeric||, floor)` over checked entries.
    pub rel_error: f64,
    pub max_abs_error: f64,
    pub checked: usize,
}

#[derive(Debug, Clone, Default)]
pub struct GradCheckReport {
    pub params: Vec<ParamCheck>,
}

impl GradCheckReport {
    pub fn worst(&self) -> Option<&ParamCheck> {
        self.params
            .iter()
            .max_by(|a, b| a.rel_error.total_cmp(&b.rel_error))
    }

    pub fn passes(&self, tol: f64) -> bool {
        self.params.iter().all(|p| p.rel_error < tol)
    }
}

#[derive(Debug, Clone)]
pub struct GradCheckOptions {
    pub step: f64,
    /// Denominator floor so that vanishing gradients are judged absolutely.
    pub floor: f64,
    /// Evaluate at most this many entries per parameter, evenly strided.
    pub max_entries: usize,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            step: 1e-5,
            floor: 1e-6,
            max_entries: usize::MAX,
        }
    }
}

/// Compares `loss_and_grads` against central differences for the selected parameters.
pub fn check_gradients<F, E>(
    store: &ParameterStore,
    select: impl Fn(&str) -> bool,
    opts: &GradCheckOptions,
    loss_and_grads: F,
) -> Result<GradCheckReport, E>
where
    F: Fn(&ParameterStore) -> Result<(f64, Gradients), E>,
{
    let (_, analytic) = loss_and_grads(store)?;
    let mut probe = store.clone();
    let mut report = GradCheckReport::default();
    let ids: Vec<ParamId> = store.ids().filter(|&id| select(store.name(id))).collect();
    for id in ids {
        let a = analytic.dense(store, id);
        let n = a.len();
        let stride = (n / opts.max_entries.max(1)).max(1);
        let (mut diff2, mut a2, mut n2, mut max_abs, mut checked) = (0.0, 0.0, 0.0, 0.0f64, 0);
        for i in (0..n).step_by(stride) {
            let orig = probe.value(id).data()[i];
            probe.values_mut(id)[i] = orig + opts.step;
            let (plus, _) = loss_and_grads(&probe)?;
            probe.values_mut(id)[i] = orig - opts.step;
            let (minus, _) = loss_and_grads(&probe)?;
            probe.values_mut(id)[i] = orig;
            let numeric = (plus - minus) / (2.0 * opts.step);
            let d = a[i] - numeric;
            diff2 += d * d;
            a2 += a[i] * a[i];
            n2 += numeric * numeric;
            max_abs = max_abs.max(d.abs());
            checked += 1;
        }
        let denom = a2.sqrt().max(n2.sqrt()).max(opts.floor);
        report.params.push(ParamCheck {
            name: store.name(id).to_string(),
            rel_error: diff2.sqrt() / denom,
            max_abs_error: max_abs,
            checked,
        });
    }
    Ok(report)
}
