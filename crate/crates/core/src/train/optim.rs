use crate::scalar::Scalar;

use super::TrainConfig;

/// Adam with bias correction.
#[derive(Debug, Clone)]
pub struct Adam<T> {
    m: Vec<T>,
    v: Vec<T>,
    t: i32,
    lr: T,
    beta1: T,
    beta2: T,
    eps: T,
}

impl<T: Scalar> Adam<T> {
    pub fn new(params: usize, cfg: &TrainConfig) -> Self {
        Self {
            m: vec![T::zero(); params],
            v: vec![T::zero(); params],
            t: 0,
            lr: T::of(cfg.learning_rate),
            beta1: T::of(cfg.adam_beta1),
            beta2: T::of(cfg.adam_beta2),
            eps: T::of(cfg.adam_eps),
        }
    }

    pub fn step(&mut self, params: &mut [T], grad: &[T]) {
        self.t += 1;
        let one = T::one();
        let c1 = one - self.beta1.powi(self.t);
        let c2 = one - self.beta2.powi(self.t);
        for (((p, &g), m), v) in params.iter_mut().zip(grad).zip(&mut self.m).zip(&mut self.v) {
            *m = self.beta1 * *m + (one - self.beta1) * g;
            *v = self.beta2 * *v + (one - self.beta2) * g * g;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *p -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
        }
    }
}
