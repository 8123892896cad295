//! Named trainable parameters, plain SGD and the step-decay schedule.

use serde::{Deserialize, Serialize};

use super::tensor::Tensor;

/// A value tensor with its gradient accumulator.
#[derive(Debug, Clone)]
pub struct Parameter {
    pub name: String,
    pub value: Tensor,
    pub grad: Tensor,
}

impl Parameter {
    pub fn new(name: impl Into<String>, value: Tensor) -> Self {
        let grad = Tensor::zeros(value.shape());
        Self { name: name.into(), value, grad }
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(0.0);
    }
}

/// Training hyperparameters with the reference defaults: initial learning
/// rate 0.001 decayed by 0.1 every 5 epochs, batch size 4.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainHyperparams {
    pub learning_rate: f64,
    pub decay_factor: f64,
    pub decay_every_epochs: usize,
    pub batch_size: usize,
}

impl Default for TrainHyperparams {
    fn default() -> Self {
        Self {
            learning_rate: 0.001,
            decay_factor: 0.1,
            decay_every_epochs: 5,
            batch_size: 4,
        }
    }
}

impl TrainHyperparams {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.learning_rate > 0.0) {
            return Err("learning_rate must be positive".into());
        }
        if !(self.decay_factor > 0.0 && self.decay_factor <= 1.0) {
            return Err("decay_factor must lie in (0, 1]".into());
        }
        if self.decay_every_epochs == 0 {
            return Err("decay_every_epochs must be positive".into());
        }
        if self.batch_size == 0 {
            return Err("batch_size must be at least 1".into());
        }
        Ok(())
    }
}

/// value <- value - lr * grad for every parameter, then zero the grads.
pub fn sgd_step(params: &mut [&mut Parameter], lr: f64) {
    for p in params.iter_mut() {
        assert_eq!(p.value.shape(), p.grad.shape(), "param/grad shape drift");
        for (v, g) in p.value.data_mut().iter_mut().zip(p.grad.data()) {
            *v -= lr * g;
        }
        p.zero_grad();
    }
}

/// lr = initial * decay^floor(epoch / decay_every).
pub fn lr_schedule(hp: &TrainHyperparams, epoch: usize) -> f64 {
    hp.learning_rate * hp.decay_factor.powi((epoch / hp.decay_every_epochs) as i32)
}
