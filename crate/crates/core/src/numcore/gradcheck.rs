use super::ParamTensor;
use crate::error::{PrismError, Result};

/// Outcome of a central-difference comparison.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Parameter name and flat index of the worst entry.
    pub worst: Option<(String, usize)>,
    pub entries_checked: usize,
}

/// Compare analytic gradients with central differences.
///
/// `loss_and_grad` must evaluate the loss at the current parameter values and
/// overwrite every `grad` with the analytic gradient. It is called once at the
/// unperturbed point and twice per parameter entry. Parameter values are
/// restored bit-for-bit before returning.
///
/// The error per entry is `|analytic - numeric| / max(1, |numeric|)`.
pub fn finite_diff_check<F>(
    params: &mut [ParamTensor],
    eps: f64,
    mut loss_and_grad: F,
) -> Result<GradCheckReport>
where
    F: FnMut(&mut [ParamTensor]) -> Result<f64>,
{
    let base = loss_and_grad(params)?;
    if !base.is_finite() {
        return Err(PrismError::numeric("loss is not finite at the check point"));
    }
    let analytic: Vec<Vec<f64>> = params.iter().map(|p| p.grad.data().to_vec()).collect();

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: None,
        entries_checked: 0,
    };
    for pi in 0..params.len() {
        for k in 0..params[pi].value.len() {
            let orig = params[pi].value.data()[k];
            params[pi].value.data_mut()[k] = orig + eps;
            let plus = loss_and_grad(params);
            params[pi].value.data_mut()[k] = orig - eps;
            let minus = loss_and_grad(params);
            params[pi].value.data_mut()[k] = orig;
            let (plus, minus) = (plus?, minus?);
            if !plus.is_finite() || !minus.is_finite() {
                return Err(PrismError::numeric(format!(
                    "loss not finite when perturbing '{}'[{k}]",
                    params[pi].name
                )));
            }
            let numeric = (plus - minus) / (2.0 * eps);
            let err = (analytic[pi][k] - numeric).abs() / numeric.abs().max(1.0);
            report.entries_checked += 1;
            if report.worst.is_none() || err > report.max_rel_error {
                report.max_rel_error = err;
                report.worst = Some((params[pi].name.clone(), k));
            }
        }
    }
    // leave the gradients consistent with the restored point
    loss_and_grad(params)?;
    Ok(report)
}
