//! Central finite-difference gradient checker.

use super::{Real, Tensor};
use crate::error::{Error, Result};
use crate::nn::Module;

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    /// Max over all parameter entries of `|a - n| / (|a| + |n| + 1e-12)`.
    pub max_rel_error: f64,
    /// Parameter name and flat index where the max was reached.
    pub worst: Option<(String, usize)>,
    pub analytic: f64,
    pub numeric: f64,
    pub entries: usize,
}

/// Compares backprop gradients of the scalar `f(module)` against central
/// differences with step `h`, entry by entry over every parameter.
///
/// `f` must be deterministic. Meaningful tolerances assume 64-bit storage.
pub fn grad_check<M, F>(module: &mut M, f: F, h: Real) -> Result<GradCheckReport>
where
    M: Module,
    F: Fn(&M) -> Result<Tensor>,
{
    let eval = |m: &M| -> Result<f64> {
        let out = f(m)?;
        if out.numel() != 1 {
            return Err(Error::Contract(format!(
                "grad_check needs a scalar function, got shape {:?}",
                out.shape()
            )));
        }
        Ok(out.item()? as f64)
    };

    module.zero_grad();
    let out = f(module)?;
    if out.numel() != 1 {
        return Err(Error::Contract(format!(
            "grad_check needs a scalar function, got shape {:?}",
            out.shape()
        )));
    }
    out.backward()?;
    let analytic: Vec<Vec<Real>> = module
        .parameters()
        .iter()
        .map(|p| p.grad().unwrap_or_else(|| vec![0.0; p.numel()]))
        .collect();
    drop(out);

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: None,
        analytic: 0.0,
        numeric: 0.0,
        entries: 0,
    };
    let count = analytic.len();
    for pi in 0..count {
        let original = module.parameters()[pi].data().to_vec();
        for i in 0..original.len() {
            let mut probe = original.clone();
            probe[i] = original[i] + h;
            module.parameters_mut()[pi].set_data(probe.clone())?;
            let plus = eval(module)?;
            probe[i] = original[i] - h;
            module.parameters_mut()[pi].set_data(probe)?;
            let minus = eval(module)?;
            let numeric = (plus - minus) / (2.0 * h as f64);
            let a = analytic[pi][i] as f64;
            let rel = (a - numeric).abs() / (a.abs() + numeric.abs() + 1e-12);
            report.entries += 1;
            if report.worst.is_none() || rel > report.max_rel_error {
                report.max_rel_error = rel;
                report.worst = Some((module.parameters()[pi].name().to_string(), i));
                report.analytic = a;
                report.numeric = numeric;
            }
        }
        module.parameters_mut()[pi].set_data(original)?;
    }
    Ok(report)
}
