//! Central-difference verification of reverse-mode gradients.

use serde::Serialize;

use super::graph::{Graph, Var};
use super::params::ParameterStore;
use crate::error::Result;

/// Gradients smaller than this are compared on an absolute scale.
pub const MAGNITUDE_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, Serialize)]
pub struct GradCheckReport {
    pub entries_checked: usize,
    pub max_relative_error: f64,
    pub worst_parameter: String,
    pub worst_index: usize,
    pub tolerance: f64,
    pub passed: bool,
}

/// Compares `backward()` against `(f(w + h) - f(w - h)) / 2h` for every
/// entry of every parameter. The error of one entry is
/// `|analytic - numeric| / max(|analytic|, |numeric|, MAGNITUDE_FLOOR)`.
pub fn gradient_check<F>(params: &ParameterStore, loss_fn: F, h: f64, tol: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph, &ParameterStore) -> Result<Var>,
{
    let mut g = Graph::new();
    let loss = loss_fn(&mut g, params)?;
    let grads = g.backward(loss)?.aligned(params);

    let eval = |p: &ParameterStore| -> Result<f64> {
        let mut g = Graph::new();
        let l = loss_fn(&mut g, p)?;
        Ok(g.value(l).item())
    };

    let mut probe = params.clone();
    let mut report = GradCheckReport {
        entries_checked: 0,
        max_relative_error: 0.0,
        worst_parameter: String::new(),
        worst_index: 0,
        tolerance: tol,
        passed: true,
    };
    let names: Vec<String> = params.names().map(str::to_string).collect();
    for name in names {
        let n = params.get(&name).map_or(0, |a| a.len());
        for i in 0..n {
            let orig = params.get(&name).expect("present").data()[i];
            probe.get_mut(&name).expect("present").data_mut()[i] = orig + h;
            let up = eval(&probe)?;
            probe.get_mut(&name).expect("present").data_mut()[i] = orig - h;
            let down = eval(&probe)?;
            probe.get_mut(&name).expect("present").data_mut()[i] = orig;
            let numeric = (up - down) / (2.0 * h);
            let analytic = grads.get(&name).expect("aligned").data()[i];
            let scale = analytic.abs().max(numeric.abs()).max(MAGNITUDE_FLOOR);
            let err = (analytic - numeric).abs() / scale;
            report.entries_checked += 1;
            if err > report.max_relative_error {
                report.max_relative_error = err;
                report.worst_parameter = name.clone();
                report.worst_index = i;
            }
        }
    }
    report.passed = report.max_relative_error < tol;
    Ok(report)
}
