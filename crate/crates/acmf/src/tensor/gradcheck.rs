//! Central-finite-difference gradient estimation, the independent oracle for
//! every backward rule in this crate.

use super::{Scalar, Tensor};

/// Central-difference gradient of a scalar-valued `f` at `x`:
/// `(f(x + eps*e_i) - f(x - eps*e_i)) / (2*eps)` per coordinate.
///
/// `f` must be deterministic and `eps` strictly positive. Meant to run in
/// `f64`; central differences are too noisy in `f32`.
pub fn finite_diff_grad<E, F>(f: F, x: &Tensor<E>, eps: E) -> Tensor<E>
where
    E: Scalar,
    F: Fn(&Tensor<E>) -> E,
{
    assert!(eps > E::zero(), "finite_diff_grad requires eps > 0");
    let two_eps = eps + eps;
    let base = x.data().to_vec();
    let mut grad = Vec::with_capacity(base.len());
    let mut probe = base.clone();
    for i in 0..base.len() {
        probe[i] = base[i] + eps;
        let plus = f(&Tensor::new(x.shape(), probe.clone()).expect("same shape"));
        probe[i] = base[i] - eps;
        let minus = f(&Tensor::new(x.shape(), probe.clone()).expect("same shape"));
        probe[i] = base[i];
        grad.push((plus - minus) / two_eps);
    }
    Tensor::new(x.shape(), grad).expect("same shape")
}

/// Relative error with a unit floor: `|a - b| / max(1, |a|, |b|)`.
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / 1.0f64.max(a.abs()).max(b.abs())
}

/// Largest per-coordinate [`rel_err`] between two same-shape tensors.
pub fn max_rel_err(a: &Tensor<f64>, b: &Tensor<f64>) -> f64 {
    assert_eq!(a.shape(), b.shape());
    a.data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| rel_err(x, y))
        .fold(0.0, f64::max)
}
