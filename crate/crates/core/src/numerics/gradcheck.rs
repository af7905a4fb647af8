//! Central finite-difference check of tape gradients.

use std::collections::BTreeMap;

use super::graph::{Graph, ParamId, Var};
use super::optim::ParamStore;
use super::NumericsError;

#[derive(Clone, Copy, Debug)]
pub struct GradCheckConfig {
    /// Finite-difference step. Layer norm over near-constant rows has large
    /// third derivatives, so the truncation error of a wider step can exceed
    /// the tolerance there.
    pub step: f64,
    /// Largest tolerated relative error.
    pub rel_tolerance: f64,
    /// Magnitude below which errors are measured absolutely.
    pub abs_floor: f64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self {
            step: 1e-5,
            rel_tolerance: 1e-3,
            abs_floor: 1e-4,
        }
    }
}

#[derive(Clone, Debug, Default)]
pub struct GradCheckReport {
    pub entries_checked: usize,
    pub max_rel_error: f64,
    /// `(param, flat index, analytic, numeric)` of the worst entry.
    pub worst: Option<(ParamId, usize, f64, f64)>,
}

impl GradCheckReport {
    pub fn passed(&self, cfg: &GradCheckConfig) -> bool {
        self.max_rel_error < cfg.rel_tolerance
    }
}

/// Compares reverse-mode gradients of `loss_fn` against central differences
/// for every entry of every parameter in `params`.
///
/// `loss_fn` receives a fresh tape with all parameters registered as
/// trainable and must return a scalar node.
pub fn check_gradients<F>(
    params: &ParamStore,
    loss_fn: F,
    cfg: &GradCheckConfig,
) -> Result<GradCheckReport, NumericsError>
where
    F: Fn(&mut Graph, &BTreeMap<ParamId, Var>) -> Result<Var, NumericsError>,
{
    let eval = |store: &ParamStore, with_grad: bool| {
        let mut g = Graph::new();
        let vars: BTreeMap<ParamId, Var> = store
            .iter()
            .map(|(id, t)| (id.clone(), g.param(id, t.clone(), true)))
            .collect();
        let loss = loss_fn(&mut g, &vars)?;
        let value = g.value(loss).item();
        let grads = if with_grad { Some(g.backward(loss)?) } else { None };
        Ok::<_, NumericsError>((value, grads))
    };

    let (_, grads) = eval(params, true)?;
    let grads = grads.expect("requested");
    let mut report = GradCheckReport::default();
    for (id, value) in params.iter() {
        let analytic = &grads[id];
        for i in 0..value.len() {
            let mut plus = params.clone();
            plus.get_mut(id).expect("present").data_mut()[i] += cfg.step;
            let mut minus = params.clone();
            minus.get_mut(id).expect("present").data_mut()[i] -= cfg.step;
            let (fp, _) = eval(&plus, false)?;
            let (fm, _) = eval(&minus, false)?;
            let numeric = (fp - fm) / (2.0 * cfg.step);
            let a = analytic.data()[i];
            let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(cfg.abs_floor);
            report.entries_checked += 1;
            if err > report.max_rel_error || report.worst.is_none() {
                report.max_rel_error = report.max_rel_error.max(err);
                if err >= report.max_rel_error {
                    report.worst = Some((id.clone(), i, a, numeric));
                }
            }
        }
    }
    Ok(report)
}
