//! Adam with per-tensor first/second moment state, keyed by the model's
//! canonical tensor names.

use ndarray::Array2;
use std::collections::HashMap;

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPS: f64 = 1e-8;

struct TensorState {
    m: Array2<f64>,
    v: Array2<f64>,
    t: u64,
}

pub struct Adam {
    lr: f64,
    state: HashMap<String, TensorState>,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Adam {
            lr,
            state: HashMap::new(),
        }
    }

    pub fn lr(&self) -> f64 {
        self.lr
    }

    /// One update. Each tensor's step counter advances only when it
    /// actually receives a gradient, keeping bias correction consistent.
    pub fn step(&mut self, name: &str, tensor: &mut Array2<f64>, grad: &Array2<f64>) {
        debug_assert_eq!(tensor.dim(), grad.dim(), "{}: grad shape mismatch", name);
        let s = self.state.entry(name.to_string()).or_insert_with(|| TensorState {
            m: Array2::zeros(grad.dim()),
            v: Array2::zeros(grad.dim()),
            t: 0,
        });
        s.t += 1;
        let bc1 = 1.0 - BETA1.powi(s.t as i32);
        let bc2 = 1.0 - BETA2.powi(s.t as i32);
        ndarray::Zip::from(tensor)
            .and(&mut s.m)
            .and(&mut s.v)
            .and(grad)
            .for_each(|w, m, v, &g| {
                *m = BETA1 * *m + (1.0 - BETA1) * g;
                *v = BETA2 * *v + (1.0 - BETA2) * g * g;
                let m_hat = *m / bc1;
                let v_hat = *v / bc2;
                *w -= self.lr * m_hat / (v_hat.sqrt() + EPS);
            });
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn constant_unit_gradient_moves_lr_per_step() {
        // with g = 1 the bias-corrected moments are exactly 1, so every
        // step shifts the weight by lr / (1 + eps)
        let lr = 0.002;
        let mut adam = Adam::new(lr);
        let mut w = array![[0.0]];
        let g = array![[1.0]];
        for k in 1..=5 {
            adam.step("w", &mut w, &g);
            let expect = -(k as f64) * lr;
            assert!(
                (w[(0, 0)] - expect).abs() < expect.abs() * 1e-7,
                "step {}: {} vs {}",
                k,
                w[(0, 0)],
                expect
            );
        }
    }

    #[test]
    fn first_step_size_is_lr_regardless_of_scale() {
        for g in [1e-4, 1.0, 1e4] {
            let mut adam = Adam::new(0.01);
            let mut w = array![[0.0]];
            adam.step("w", &mut w, &array![[g]]);
            assert!((w[(0, 0)] + 0.01).abs() < 1e-6, "g {}: {}", g, w[(0, 0)]);
        }
    }

    #[test]
    fn minimizes_quadratic() {
        let mut adam = Adam::new(0.1);
        let mut w = array![[10.0]];
        for _ in 0..500 {
            let g = array![[2.0 * (w[(0, 0)] - 3.0)]];
            adam.step("w", &mut w, &g);
        }
        assert!((w[(0, 0)] - 3.0).abs() < 1e-3, "ended at {}", w[(0, 0)]);
    }

    #[test]
    fn tensors_keep_independent_state() {
        let mut adam = Adam::new(0.5);
        let mut a = array![[0.0]];
        let mut b = array![[0.0]];
        for _ in 0..3 {
            adam.step("a", &mut a, &array![[1.0]]);
        }
        adam.step("b", &mut b, &array![[1.0]]);
        // b is on its first step; its update must not see a's moments
        assert!((b[(0, 0)] + 0.5).abs() < 1e-6);
        assert!((a[(0, 0)] + 1.5).abs() < 1e-5);
    }
}
