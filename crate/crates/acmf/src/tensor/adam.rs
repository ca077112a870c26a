//! Adam optimizer with bias correction.

use super::{Scalar, Tensor, TensorError};

/// Hyperparameters. Defaults: lr 0.001, betas (0.9, 0.995), epsilon 1e-8.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamHyper {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamHyper {
    fn default() -> Self {
        Self { lr: 0.001, beta1: 0.9, beta2: 0.995, epsilon: 1e-8 }
    }
}

impl AdamHyper {
    pub fn with_lr(lr: f64) -> Self {
        Self { lr, ..Self::default() }
    }
}

/// First/second-moment accumulators for a fixed list of parameter tensors.
#[derive(Debug, Clone)]
pub struct AdamState<E: Scalar> {
    pub hyper: AdamHyper,
    step: u64,
    m: Vec<Tensor<E>>,
    v: Vec<Tensor<E>>,
}

impl<E: Scalar> AdamState<E> {
    /// Fresh state with zeroed moments mirroring `params` shapes.
    pub fn new(hyper: AdamHyper, params: &[Tensor<E>]) -> Self {
        let m = params.iter().map(|p| Tensor::zeros(p.shape())).collect();
        let v = params.iter().map(|p| Tensor::zeros(p.shape())).collect();
        Self { hyper, step: 0, m, v }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }
}

/// One Adam update. `grads[i]` of `None` is treated as a zero gradient, which
/// leaves a freshly initialized parameter untouched. Returns the updated
/// parameter list; the state is advanced in place.
pub fn adam_step<E: Scalar>(
    params: &[Tensor<E>],
    grads: &[Option<&Tensor<E>>],
    state: &mut AdamState<E>,
) -> Result<Vec<Tensor<E>>, TensorError> {
    if params.len() != state.m.len() || params.len() != grads.len() {
        return Err(TensorError::InvalidShape {
            op: "adam-step",
            shape: format!("{} params", params.len()),
            reason: format!("state holds {} tensors, {} grads given", state.m.len(), grads.len()),
        });
    }
    state.step += 1;
    let t = state.step as i32;
    let h = state.hyper;
    let b1 = E::from_f64(h.beta1);
    let b2 = E::from_f64(h.beta2);
    let one = E::one();
    let lr = E::from_f64(h.lr);
    let eps = E::from_f64(h.epsilon);
    let bc1 = E::from_f64(1.0 - h.beta1.powi(t));
    let bc2 = E::from_f64(1.0 - h.beta2.powi(t));

    let mut updated = Vec::with_capacity(params.len());
    for (i, param) in params.iter().enumerate() {
        if let Some(g) = grads[i] {
            if g.shape() != param.shape() {
                return Err(TensorError::ShapeMismatch {
                    op: "adam-step",
                    lhs: super::format_shape(param.shape()),
                    rhs: super::format_shape(g.shape()),
                });
            }
        }
        let zero = E::zero();
        let n = param.numel();
        let mut m_new = Vec::with_capacity(n);
        let mut v_new = Vec::with_capacity(n);
        let mut p_new = Vec::with_capacity(n);
        for j in 0..n {
            let gj = grads[i].map_or(zero, |g| g.data()[j]);
            let mj = b1 * state.m[i].data()[j] + (one - b1) * gj;
            let vj = b2 * state.v[i].data()[j] + (one - b2) * gj * gj;
            let m_hat = mj / bc1;
            let v_hat = vj / bc2;
            p_new.push(param.data()[j] - lr * m_hat / (v_hat.sqrt() + eps));
            m_new.push(mj);
            v_new.push(vj);
        }
        state.m[i] = Tensor::new(param.shape(), m_new)?;
        state.v[i] = Tensor::new(param.shape(), v_new)?;
        updated.push(Tensor::new(param.shape(), p_new)?);
    }
    Ok(updated)
}
