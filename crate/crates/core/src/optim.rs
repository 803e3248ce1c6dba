//! Adam with bias correction.

use serde::{Deserialize, Serialize};

use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
    pub t: u64,
}

impl AdamState {
    pub fn new(shapes: &[[usize; 4]]) -> Self {
        AdamState {
            m: shapes.iter().map(|&s| Tensor::zeros(s)).collect(),
            v: shapes.iter().map(|&s| Tensor::zeros(s)).collect(),
            t: 0,
        }
    }
}

impl Adam {
    pub fn new(lr: f64, beta1: f64, beta2: f64) -> Self {
        Adam {
            lr,
            beta1,
            beta2,
            eps: 1e-8,
        }
    }

    pub fn step(&self, state: &mut AdamState, params: &mut [Tensor], grads: &[Tensor]) {
        assert_eq!(params.len(), grads.len());
        state.t += 1;
        let c1 = 1.0 - self.beta1.powi(state.t as i32);
        let c2 = 1.0 - self.beta2.powi(state.t as i32);
        for ((p, g), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(state.m.iter_mut().zip(state.v.iter_mut()))
        {
            let (pd, gd) = (p.data_mut(), g.data());
            let (md, vd) = (m.data_mut(), v.data_mut());
            for i in 0..pd.len() {
                md[i] = self.beta1 * md[i] + (1.0 - self.beta1) * gd[i];
                vd[i] = self.beta2 * vd[i] + (1.0 - self.beta2) * gd[i] * gd[i];
                let mh = md[i] / c1;
                let vh = vd[i] / c2;
                pd[i] -= self.lr * mh / (vh.sqrt() + self.eps);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_lr_against_gradient_sign() {
        let adam = Adam::new(0.1, 0.5, 0.999);
        let mut st = AdamState::new(&[[1, 1, 1, 2]]);
        let mut p = vec![Tensor::new([1, 1, 1, 2], vec![1.0, 1.0])];
        adam.step(&mut st, &mut p, &[Tensor::new([1, 1, 1, 2], vec![3.0, -0.5])]);
        assert!((p[0].data()[0] - 0.9).abs() < 1e-6);
        assert!((p[0].data()[1] - 1.1).abs() < 1e-6);
    }

    #[test]
    fn minimizes_a_quadratic() {
        let adam = Adam::new(0.05, 0.9, 0.999);
        let mut st = AdamState::new(&[[1, 1, 1, 1]]);
        let mut p = vec![Tensor::scalar(4.0)];
        for _ in 0..2000 {
            let g = Tensor::scalar(2.0 * (p[0].item() - 1.5));
            adam.step(&mut st, &mut p, &[g]);
        }
        assert!((p[0].item() - 1.5).abs() < 1e-3);
    }
}
