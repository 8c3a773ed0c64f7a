use super::tensor::{Scalar, Tensor};
use crate::error::{contract, Result};

/// SGD with momentum and coupled weight decay.
#[derive(Clone, Debug)]
pub struct OptimizerState<T: Scalar> {
    velocity: Vec<Vec<T>>,
    pub momentum: T,
    pub weight_decay: T,
    pub current_lr: T,
}

impl<T: Scalar> OptimizerState<T> {
    /// Zero velocities shaped like `params`.
    pub fn new(params: &[Tensor<T>], momentum: T, weight_decay: T, lr: T) -> Self {
        Self {
            velocity: params.iter().map(|p| vec![T::ZERO; p.numel()]).collect(),
            momentum,
            weight_decay,
            current_lr: lr,
        }
    }

    pub fn velocity(&self) -> &[Vec<T>] {
        &self.velocity
    }
}

/// One update: `v ← μ·v + g + wd·p`, then `p ← p − lr·v`.
pub fn sgd_step<T: Scalar>(
    params: &mut [Tensor<T>],
    grads: &[Tensor<T>],
    state: &mut OptimizerState<T>,
) -> Result<()> {
    contract!(
        params.len() == grads.len() && params.len() == state.velocity.len(),
        "sgd_step: {} params, {} grads, {} velocity buffers",
        params.len(),
        grads.len(),
        state.velocity.len()
    );
    contract!(
        state.current_lr >= T::ZERO,
        "sgd_step: negative learning rate"
    );
    for (i, (p, g)) in params.iter().zip(grads).enumerate() {
        contract!(
            p.shape() == g.shape() && state.velocity[i].len() == p.numel(),
            "sgd_step: parameter {i} shape {:?} vs gradient {:?}",
            p.shape(),
            g.shape()
        );
    }
    let (mu, wd, lr) = (state.momentum, state.weight_decay, state.current_lr);
    for ((p, g), v) in params.iter_mut().zip(grads).zip(state.velocity.iter_mut()) {
        for ((pi, &gi), vi) in p.data_mut().iter_mut().zip(g.data()).zip(v.iter_mut()) {
            *vi = mu * *vi + gi + wd * *pi;
        }
        // lr == 0 must leave parameters bit-identical, including signed zeros.
        if lr != T::ZERO {
            for (pi, &vi) in p.data_mut().iter_mut().zip(v.iter()) {
                *pi -= lr * vi;
            }
        }
    }
    Ok(())
}
