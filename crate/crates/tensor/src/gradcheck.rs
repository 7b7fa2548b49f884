//! Central finite-difference gradient checking.
//!
//! The check only evaluates the forward function; it never touches the
//! backward pass it is used to validate.

use crate::tensor::Tensor;

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    /// Largest `|analytic - numeric| / max(|analytic| + |numeric|, floor)`.
    pub max_rel_err: f64,
    pub max_abs_err: f64,
    pub checked: usize,
}

impl GradCheckReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.max_rel_err < tol
    }
}

/// Numerical gradient of `f` at `x` by central differences with step `h`.
pub fn numeric_gradient(x: &Tensor, h: f64, mut f: impl FnMut(&Tensor) -> f64) -> Tensor {
    let mut probe = x.clone();
    let mut grad = Tensor::zeros(x.shape());
    for i in 0..x.numel() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + h;
        let up = f(&probe);
        probe.data_mut()[i] = orig - h;
        let down = f(&probe);
        probe.data_mut()[i] = orig;
        grad.data_mut()[i] = (up - down) / (2.0 * h);
    }
    grad
}

/// Compares an analytic gradient against central differences.
///
/// The relative error uses `|a| + |n|` in the denominator with a floor of
/// `1e-6`, so entries whose true gradient is near zero are judged by an
/// absolute error of roughly `1e-10`.
pub fn compare(analytic: &Tensor, numeric: &Tensor) -> GradCheckReport {
    let mut max_rel: f64 = 0.0;
    let mut max_abs: f64 = 0.0;
    for (&a, &n) in analytic.data().iter().zip(numeric.data()) {
        let abs = (a - n).abs();
        let rel = abs / (a.abs() + n.abs()).max(1e-6);
        max_abs = max_abs.max(abs);
        max_rel = max_rel.max(rel);
    }
    GradCheckReport {
        max_rel_err: max_rel,
        max_abs_err: max_abs,
        checked: analytic.numel(),
    }
}

pub fn check(
    x: &Tensor,
    analytic: &Tensor,
    h: f64,
    f: impl FnMut(&Tensor) -> f64,
) -> GradCheckReport {
    let numeric = numeric_gradient(x, h, f);
    compare(analytic, &numeric)
}
