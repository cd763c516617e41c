use super::Tensor;
use crate::{Error, Result, Scalar};

/// Hyperparameters shared by every parameter tensor of an optimizer.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// L2 penalty coefficient added to the gradient before the moment update.
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            weight_decay: 0.0,
        }
    }
}

/// Moment estimates for one parameter tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<S> {
    pub step: u64,
    pub first_moment: Tensor<S>,
    pub second_moment: Tensor<S>,
    pub beta1: S,
    pub beta2: S,
    pub epsilon: S,
    pub learning_rate: S,
}

impl<S: Scalar> AdamState<S> {
    pub fn new(param: &Tensor<S>, config: &AdamConfig) -> Self {
        Self {
            step: 0,
            first_moment: Tensor::zeros_like(param),
            second_moment: Tensor::zeros_like(param),
            beta1: S::of(config.beta1),
            beta2: S::of(config.beta2),
            epsilon: S::of(config.epsilon),
            learning_rate: S::of(config.learning_rate),
        }
    }
}

/// One bias-corrected Adam update of `param` in place.
pub fn adam_step<S: Scalar>(param: &mut Tensor<S>, grad: &Tensor<S>, state: &mut AdamState<S>) -> Result<()> {
    if param.shape() != grad.shape() {
        return Err(Error::shape("adam_step", param.shape(), grad.shape()));
    }
    if state.first_moment.shape() != param.shape() {
        return Err(Error::shape("adam_step state", state.first_moment.shape(), param.shape()));
    }
    state.step += 1;
    let t = state.step as i32;
    let (b1, b2) = (state.beta1, state.beta2);
    let bias1 = S::one() - b1.powi(t);
    let bias2 = S::one() - b2.powi(t);
    let step_size = state.learning_rate / bias1;
    let m = state.first_moment.data_mut();
    let v = state.second_moment.data_mut();
    for (((p, &g), m), v) in param.data_mut().iter_mut().zip(grad.data()).zip(m).zip(v) {
        *m = b1 * *m + (S::one() - b1) * g;
        *v = b2 * *v + (S::one() - b2) * g * g;
        let denom = (*v / bias2).sqrt() + state.epsilon;
        *p = *p - step_size * *m / denom;
    }
    Ok(())
}

/// Adam over an ordered list of parameter tensors.
#[derive(Clone, Debug)]
pub struct Adam<S> {
    pub config: AdamConfig,
    states: Vec<AdamState<S>>,
}

impl<S: Scalar> Adam<S> {
    pub fn new<'a>(params: impl IntoIterator<Item = &'a Tensor<S>>, config: AdamConfig) -> Self {
        let states = params.into_iter().map(|p| AdamState::new(p, &config)).collect();
        Self { config, states }
    }

    /// Updates every parameter with its gradient, applying weight decay first.
    pub fn step<'a>(
        &mut self,
        params: impl IntoIterator<Item = &'a mut Tensor<S>>,
        grads: impl IntoIterator<Item = &'a Tensor<S>>,
    ) -> Result<()> {
        let decay = S::of(self.config.weight_decay);
        let mut count = 0;
        for ((param, grad), state) in params.into_iter().zip(grads).zip(&mut self.states) {
            if self.config.weight_decay != 0.0 {
                let mut g = grad.clone();
                g.axpy(decay, param)?;
                adam_step(param, &g, state)?;
            } else {
                adam_step(param, grad, state)?;
            }
            count += 1;
        }
        if count != self.states.len() {
            return Err(Error::param(format!(
                "optimizer tracks {} tensors, got {count}",
                self.states.len()
            )));
        }
        Ok(())
    }

    pub fn states(&self) -> &[AdamState<S>] {
        &self.states
    }
}
