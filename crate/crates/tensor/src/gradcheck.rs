//! Finite-difference verification of reverse-mode gradients.

use crate::error::{Result, TensorError};
use crate::graph::{Graph, Var};
use crate::tensor::Tensor;

/// Outcome of comparing autodiff gradients with central differences.
///
/// Errors are `|g_ad - g_fd| / max(|g_ad|, |g_fd|, 1e-8)` per element.
#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    /// Worst element error for each checked input.
    pub per_parameter_errors: Vec<f64>,
    /// Number of scalar derivatives compared.
    pub evaluated: usize,
}

impl GradCheckReport {
    pub fn passes(&self, tolerance: f64) -> bool {
        self.max_relative_error < tolerance
    }
}

pub fn relative_error(ad: f64, fd: f64) -> f64 {
    (ad - fd).abs() / ad.abs().max(fd.abs()).max(1e-8)
}

/// Checks a scalar function of one tensor at `point`.
pub fn gradient_check<F>(f: F, point: &Tensor<f64>, epsilon: f64) -> Result<GradCheckReport>
where
    F: for<'g> Fn(&'g Graph<f64>, Var<'g, f64>) -> Result<Var<'g, f64>>,
{
    gradient_check_many(|g, vars| f(g, vars[0]), std::slice::from_ref(point), epsilon)
}

/// Checks a scalar function of several tensors; every input is perturbed.
pub fn gradient_check_many<F>(f: F, points: &[Tensor<f64>], epsilon: f64) -> Result<GradCheckReport>
where
    F: for<'g> Fn(&'g Graph<f64>, &[Var<'g, f64>]) -> Result<Var<'g, f64>>,
{
    if !(epsilon > 0.0 && epsilon <= 1e-2) {
        return Err(TensorError::arg("gradient_check", format!("epsilon {epsilon} outside (0, 1e-2]")));
    }
    let eval = |pts: &[Tensor<f64>]| -> Result<f64> {
        let g = Graph::new();
        let vars: Vec<_> = pts.iter().map(|p| g.constant(p.clone())).collect();
        let out = f(&g, &vars)?;
        let v = out.value();
        if v.len() != 1 {
            return Err(TensorError::Contract(format!(
                "gradient check needs a scalar function, got shape {:?}",
                v.shape()
            )));
        }
        Ok(v.data()[0])
    };

    let g = Graph::new();
    let vars: Vec<_> = points.iter().map(|p| g.param(p.clone())).collect();
    let out = f(&g, &vars)?;
    if out.len() != 1 {
        return Err(TensorError::Contract(format!(
            "gradient check needs a scalar function, got shape {:?}",
            out.shape()
        )));
    }
    let grads = g.backward(out)?;

    let mut per_parameter_errors = Vec::with_capacity(points.len());
    let mut evaluated = 0;
    let mut work: Vec<Tensor<f64>> = points.to_vec();
    for (pi, var) in vars.iter().enumerate() {
        let analytic = grads.wrt(*var).cloned().unwrap_or_else(|| Tensor::zeros(points[pi].shape()));
        let mut worst = 0.0f64;
        for k in 0..points[pi].len() {
            let orig = points[pi].data()[k];
            work[pi].data_mut()[k] = orig + epsilon;
            let plus = eval(&work)?;
            work[pi].data_mut()[k] = orig - epsilon;
            let minus = eval(&work)?;
            work[pi].data_mut()[k] = orig;
            let fd = (plus - minus) / (2.0 * epsilon);
            worst = worst.max(relative_error(analytic.data()[k], fd));
            evaluated += 1;
        }
        per_parameter_errors.push(worst);
    }
    let max_relative_error = per_parameter_errors.iter().copied().fold(0.0, f64::max);
    Ok(GradCheckReport { max_relative_error, per_parameter_errors, evaluated })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_of_squares() {
        let x = Tensor::from_f64(&[2], &[1.0, 2.0]).unwrap();
        let report = gradient_check(|_, x| Ok(x.square().sum()), &x, 1e-5).unwrap();
        assert!(report.max_relative_error < 1e-4, "{report:?}");
        assert_eq!(report.evaluated, 2);
    }

    #[test]
    fn constant_function_has_zero_error() {
        let x = Tensor::from_f64(&[3], &[0.3, -1.0, 4.0]).unwrap();
        let report = gradient_check(|g, _| Ok(g.scalar(7.0)), &x, 1e-4).unwrap();
        assert_eq!(report.max_relative_error, 0.0);
    }

    #[test]
    fn non_scalar_output_is_contract_error() {
        let x = Tensor::from_f64(&[2], &[1.0, 2.0]).unwrap();
        let err = gradient_check(|_, x| Ok(x.square()), &x, 1e-4).unwrap_err();
        assert!(matches!(err, TensorError::Contract(_)));
    }

    #[test]
    fn epsilon_range_enforced() {
        let x = Tensor::from_f64(&[1], &[1.0]).unwrap();
        assert!(gradient_check(|_, x| Ok(x.sum()), &x, 0.0).is_err());
        assert!(gradient_check(|_, x| Ok(x.sum()), &x, 0.1).is_err());
    }
}
