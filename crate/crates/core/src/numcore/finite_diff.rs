use super::Tensor;
use crate::Scalar;

/// Default central-difference step.
pub const DEFAULT_STEP: f64 = 1e-5;

/// Denominator floor used by [`relative_error`]; below it errors are
/// measured in absolute terms.
pub const REL_ERR_FLOOR: f64 = 1e-4;

/// Central-difference gradient `(f(x + h e_i) - f(x - h e_i)) / 2h` for every
/// coordinate of `x`.
pub fn finite_diff_grad<S: Scalar>(mut f: impl FnMut(&Tensor<S>) -> S, x: &Tensor<S>, h: S) -> Tensor<S> {
    let mut probe = x.clone();
    let mut grad = Tensor::zeros_like(x);
    let two_h = h + h;
    for i in 0..x.len() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + h;
        let up = f(&probe);
        probe.data_mut()[i] = orig - h;
        let down = f(&probe);
        probe.data_mut()[i] = orig;
        grad.data_mut()[i] = (up - down) / two_h;
    }
    grad
}

/// `|a - b| / max(|a|, |b|, REL_ERR_FLOOR)`.
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(REL_ERR_FLOOR)
}

/// Largest [`relative_error`] over corresponding entries.
pub fn max_relative_error<S: Scalar>(analytic: &Tensor<S>, numeric: &Tensor<S>) -> f64 {
    analytic
        .data()
        .iter()
        .zip(numeric.data())
        .map(|(&a, &b)| relative_error(a.as_f64(), b.as_f64()))
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numcore::sigmoid;

    #[test]
    fn sum_of_squares() {
        let x = Tensor::vector(vec![1.0, 2.0]);
        let g = finite_diff_grad(|t| t.data().iter().map(|v| v * v).sum(), &x, DEFAULT_STEP);
        assert!((g.data()[0] - 2.0).abs() < 1e-8);
        assert!((g.data()[1] - 4.0).abs() < 1e-8);
    }

    #[test]
    fn constant_function() {
        let x = Tensor::vector(vec![0.3, -0.7, 5.0]);
        let g = finite_diff_grad(|_| 3.5, &x, DEFAULT_STEP);
        assert!(g.max_abs() < 1e-10);
    }

    #[test]
    fn sigmoid_slope_at_zero() {
        let x = Tensor::vector(vec![0.0]);
        let g = finite_diff_grad(|t| sigmoid(t.data()[0]), &x, DEFAULT_STEP);
        assert!((g.data()[0] - 0.25).abs() < 1e-8);
    }
}
