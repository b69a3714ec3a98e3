use crate::error::{Error, Result};

use super::Parameterized;

/// Outcome of a finite-difference comparison.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Parameter name and flat index of the worst element.
    pub worst: Option<(String, usize)>,
    pub analytic: f64,
    pub numeric: f64,
    pub checked: usize,
}

/// Compares analytic gradients against central differences.
///
/// `objective` must return the scalar value and accumulate its analytic
/// gradient into the parameters' gradient buffers; buffers are zeroed
/// before every call. The relative error of one element is
/// `|a - n| / max(|a|, |n|, 1e-12)` and the maximum over all elements is
/// reported.
///
/// ```
/// use synsel::numkit::{grad_check, Matrix, ParamTensor};
/// let mut w = vec![ParamTensor::new("w", Matrix::row_vector(&[3.0]))];
/// let report = grad_check(&mut w, |p| {
///     let x = p[0].value[(0, 0)];
///     p[0].grad[(0, 0)] += 2.0 * x;
///     Ok(x * x)
/// }, 1e-5).unwrap();
/// assert!(report.max_rel_error < 1e-9);
/// ```
pub fn grad_check<M, F>(model: &mut M, mut objective: F, epsilon: f64) -> Result<GradCheckReport>
where
    M: Parameterized,
    F: FnMut(&mut M) -> Result<f64>,
{
    if !(1e-7..=1e-3).contains(&epsilon) {
        return Err(Error::Config(format!(
            "grad_check epsilon {epsilon} outside [1e-7, 1e-3]"
        )));
    }
    model.zero_grads();
    let base = objective(model)?;
    if !base.is_finite() {
        return Err(Error::Numeric("objective is not finite".into()));
    }
    let analytic: Vec<Vec<f64>> = model
        .params()
        .iter()
        .map(|p| p.grad.data().to_vec())
        .collect();

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: None,
        analytic: 0.0,
        numeric: 0.0,
        checked: 0,
    };
    let count = analytic.len();
    for pi in 0..count {
        for ei in 0..analytic[pi].len() {
            let original = model.params()[pi].value.data()[ei];
            let mut eval = |model: &mut M, x: f64| -> Result<f64> {
                model.params_mut()[pi].value.data_mut()[ei] = x;
                model.zero_grads();
                let v = objective(model)?;
                if !v.is_finite() {
                    return Err(Error::Numeric(format!(
                        "objective not finite while perturbing {}[{ei}]",
                        model.params()[pi].name
                    )));
                }
                Ok(v)
            };
            let plus = eval(model, original + epsilon)?;
            let minus = eval(model, original - epsilon)?;
            model.params_mut()[pi].value.data_mut()[ei] = original;

            let numeric = (plus - minus) / (2.0 * epsilon);
            let a = analytic[pi][ei];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-12);
            report.checked += 1;
            if rel > report.max_rel_error || report.worst.is_none() {
                report.max_rel_error = rel;
                report.worst = Some((model.params()[pi].name.clone(), ei));
                report.analytic = a;
                report.numeric = numeric;
            }
        }
    }
    // leave the analytic gradient in place for the caller
    model.zero_grads();
    for (p, g) in model.params_mut().into_iter().zip(&analytic) {
        p.grad.data_mut().copy_from_slice(g);
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numkit::{Matrix, ParamTensor};

    #[test]
    fn square_is_exact() {
        let mut w = vec![ParamTensor::new("w", Matrix::row_vector(&[3.0]))];
        let r = grad_check(
            &mut w,
            |p| {
                let x = p[0].value[(0, 0)];
                p[0].grad[(0, 0)] += 2.0 * x;
                Ok(x * x)
            },
            1e-5,
        )
        .unwrap();
        assert!(r.max_rel_error < 1e-9, "{r:?}");
        assert_eq!(w[0].grad[(0, 0)], 6.0);
    }

    #[test]
    fn constant_function_has_zero_error() {
        let mut w = vec![ParamTensor::new("w", Matrix::row_vector(&[1.0, -2.0]))];
        let r = grad_check(&mut w, |_| Ok(4.0), 1e-5).unwrap();
        assert_eq!(r.max_rel_error, 0.0);
        assert_eq!(r.checked, 2);
    }

    #[test]
    fn wrong_gradient_is_detected() {
        let mut w = vec![ParamTensor::new("w", Matrix::row_vector(&[2.0]))];
        let r = grad_check(
            &mut w,
            |p| {
                let x = p[0].value[(0, 0)];
                p[0].grad[(0, 0)] += x; // should be 3x^2
                Ok(x * x * x)
            },
            1e-5,
        )
        .unwrap();
        assert!(r.max_rel_error > 0.5);
        assert_eq!(r.worst, Some(("w".to_string(), 0)));
    }

    #[test]
    fn non_finite_objective_is_an_error() {
        let mut w = vec![ParamTensor::new("w", Matrix::row_vector(&[0.0]))];
        let err = grad_check(&mut w, |p| Ok(1.0 / p[0].value[(0, 0)]), 1e-5).unwrap_err();
        assert!(matches!(err, Error::Numeric(_)));
    }

    #[test]
    fn epsilon_range_enforced() {
        let mut w = vec![ParamTensor::zeros("w", 1, 1)];
        assert!(matches!(
            grad_check(&mut w, |_| Ok(0.0), 1e-2),
            Err(Error::Config(_))
        ));
    }
}
