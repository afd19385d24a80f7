//! Central finite-difference gradient checking.

use crate::tensor::Tensor;

/// Largest relative error a parameter group may show and still pass.
pub const TOLERANCE: f64 = 1e-4;

/// Outcome for one input tensor (parameter group).
#[derive(Clone, Debug)]
pub struct GroupCheck {
    pub index: usize,
    pub relative_error: f64,
    pub max_abs_error: f64,
}

/// Norm-wise relative error `‖a − n‖ / max(‖a‖, ‖n‖)`, zero when both vanish.
pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let diff: f64 = analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n) * (a - n))
        .sum::<f64>()
        .sqrt();
    let na = analytic.iter().map(|a| a * a).sum::<f64>().sqrt();
    let nn = numeric.iter().map(|a| a * a).sum::<f64>().sqrt();
    let scale = na.max(nn);
    if scale == 0.0 {
        0.0
    } else {
        diff / scale
    }
}

/// Compare analytic gradients against central differences.
///
/// `f` evaluates the scalar objective at the given inputs and returns it
/// together with the analytic gradient of every input.
pub fn check_gradients<F>(inputs: &[Tensor], eps: f64, mut f: F) -> Vec<GroupCheck>
where
    F: FnMut(&[Tensor]) -> (f64, Vec<Vec<f64>>),
{
    let (_, analytic) = f(inputs);
    let mut work = inputs.to_vec();
    let mut reports = Vec::with_capacity(inputs.len());
    for (index, grad) in analytic.iter().enumerate() {
        let mut numeric = vec![0.0; grad.len()];
        for (j, slot) in numeric.iter_mut().enumerate() {
            let orig = work[index].data()[j];
            work[index].data_mut()[j] = orig + eps;
            let (plus, _) = f(&work);
            work[index].data_mut()[j] = orig - eps;
            let (minus, _) = f(&work);
            work[index].data_mut()[j] = orig;
            *slot = (plus - minus) / (2.0 * eps);
        }
        let max_abs_error = grad
            .iter()
            .zip(&numeric)
            .map(|(a, n)| (a - n).abs())
            .fold(0.0, f64::max);
        reports.push(GroupCheck {
            index,
            relative_error: relative_error(grad, &numeric),
            max_abs_error,
        });
    }
    reports
}
