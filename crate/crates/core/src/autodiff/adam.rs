use serde::{Deserialize, Serialize};

use crate::autodiff::tensor::Tensor;
use crate::error::{Error, Result};

pub const DEFAULT_LEARNING_RATE: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Default for AdamState {
    fn default() -> Self {
        Self::new(DEFAULT_LEARNING_RATE)
    }
}

impl AdamState {
    pub fn new(lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            step: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    /// One update of every parameter in place. Moments are created lazily on
    /// the first call and must keep their shapes afterwards.
    pub fn step(&mut self, params: &mut [&mut Tensor], grads: &[Tensor]) -> Result<()> {
        if params.len() != grads.len() {
            return Err(Error::shape("adam_step", &[params.len()], &[grads.len()]));
        }
        if self.m.is_empty() {
            self.m = params.iter().map(|p| vec![0.0; p.len()]).collect();
            self.v = self.m.clone();
        }
        if self.m.len() != params.len() {
            return Err(Error::shape("adam_step", &[self.m.len()], &[params.len()]));
        }
        for ((p, g), m) in params.iter().zip(grads).zip(&self.m) {
            if p.shape() != g.shape() || m.len() != p.len() {
                return Err(Error::shape("adam_step", &p.shape(), &g.shape()));
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for (k, (w, &gk)) in p.data_mut().iter_mut().zip(g.data()).enumerate() {
                m[k] = self.beta1 * m[k] + (1.0 - self.beta1) * gk;
                v[k] = self.beta2 * v[k] + (1.0 - self.beta2) * gk * gk;
                let mh = m[k] / c1;
                let vh = v[k] / c2;
                *w -= self.lr * mh / (vh.sqrt() + self.epsilon);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_lr() {
        let mut s = AdamState::default();
        assert_eq!(s.lr, 1e-4);
        let mut p = Tensor::scalar(0.0);
        s.step(&mut [&mut p], &[Tensor::scalar(1.0)]).unwrap();
        assert!((p.item() + 1e-4).abs() < 1e-6);
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let mut s = AdamState::default();
        let mut p = Tensor::from_fn(2, 3, |i, j| (i + j) as f64);
        let before = p.clone();
        for _ in 0..10 {
            s.step(&mut [&mut p], &[Tensor::zeros(2, 3)]).unwrap();
        }
        for (a, b) in p.data().iter().zip(before.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn shape_mismatch() {
        let mut s = AdamState::default();
        let mut p = Tensor::zeros(2, 2);
        assert!(s.step(&mut [&mut p], &[Tensor::zeros(1, 2)]).is_err());
        assert!(s.step(&mut [&mut p], &[]).is_err());
    }
}
