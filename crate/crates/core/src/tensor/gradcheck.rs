//! Central finite-difference gradient checking.
//!
//! The numeric side only ever evaluates forward passes, so it shares no code
//! with the backward rules it verifies.

use super::{Graph, ParamId, ParamStore, Var};
use crate::error::Result;

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub worst_param: Option<String>,
    pub checked: usize,
}

impl GradCheckReport {
    pub fn passed(&self, tol: f64) -> bool {
        self.max_rel_error < tol
    }
}

/// Relative error with a floor of 1e-4 on the denominator so that gradients that
/// are numerically zero compare on an absolute scale.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-4)
}

/// Compares analytic gradients of `loss` with central differences of step `h`.
///
/// At most `max_per_param` entries of each parameter are probed, spread evenly
/// over the tensor.
pub fn check<F>(
    store: &ParamStore<f64>,
    loss: F,
    h: f64,
    max_per_param: usize,
) -> Result<GradCheckReport>
where
    F: for<'g> Fn(&mut Graph<'g, f64>) -> Result<Var>,
{
    let analytic = {
        let mut g = Graph::new(store);
        let l = loss(&mut g)?;
        g.backward(l)?
    };
    let mut probe = store.clone();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst_param: None,
        checked: 0,
    };
    let ids: Vec<ParamId> = store.ids().filter(|&id| store.requires_grad(id)).collect();
    for id in ids {
        let n = store.get(id).numel();
        let stride = (n / max_per_param.max(1)).max(1);
        let grad = analytic
            .get(id)
            .expect("trainable parameter has a gradient");
        for j in (0..n).step_by(stride) {
            let orig = store.get(id).data()[j];
            probe.get_mut(id).data_mut()[j] = orig + h;
            let up = eval(&probe, &loss)?;
            probe.get_mut(id).data_mut()[j] = orig - h;
            let down = eval(&probe, &loss)?;
            probe.get_mut(id).data_mut()[j] = orig;
            let numeric = (up - down) / (2.0 * h);
            let err = relative_error(grad[j], numeric);
            report.checked += 1;
            if err > report.max_rel_error {
                report.max_rel_error = err;
                report.worst_param = Some(format!("{}[{j}]", store.name(id)));
            }
        }
    }
    Ok(report)
}

fn eval<F>(store: &ParamStore<f64>, loss: &F) -> Result<f64>
where
    F: for<'g> Fn(&mut Graph<'g, f64>) -> Result<Var>,
{
    let mut g = Graph::new(store);
    let l = loss(&mut g)?;
    Ok(g.scalar_value(l))
}
