//! Adam with bias correction, keeping flat moment buffers aligned with the
//! model's fixed parameter visitation order.

use crate::net::SimbaParams;
use crate::tensor::Element;

#[derive(Debug, Clone)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    first_moment: Vec<f64>,
    second_moment: Vec<f64>,
    step_count: u64,
}

impl Adam {
    pub fn new(param_count: usize, beta1: f64, beta2: f64, epsilon: f64) -> Self {
        Adam {
            beta1,
            beta2,
            epsilon,
            first_moment: vec![0.0; param_count],
            second_moment: vec![0.0; param_count],
            step_count: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    /// One update. `grads` must come from the same parameter layout.
    pub fn step<T: Element>(&mut self, params: &mut SimbaParams<T>, grads: &SimbaParams<T>, lr: f64) {
        self.step_count += 1;
        let t = self.step_count as i32;
        let bias1 = 1.0 - self.beta1.powi(t);
        let bias2 = 1.0 - self.beta2.powi(t);
        let flat_grads = grads.flatten();
        debug_assert_eq!(flat_grads.len(), self.first_moment.len());

        let mut offset = 0;
        params.for_each_mut(|_, slice| {
            for (i, p) in slice.iter_mut().enumerate() {
                let g = flat_grads[offset + i].as_f64();
                let m = &mut self.first_moment[offset + i];
                let v = &mut self.second_moment[offset + i];
                *m = self.beta1 * *m + (1.0 - self.beta1) * g;
                *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
                let m_hat = *m / bias1;
                let v_hat = *v / bias2;
                let update = lr * m_hat / (v_hat.sqrt() + self.epsilon);
                *p = T::of_f64(p.as_f64() - update);
            }
            offset += slice.len();
        });
    }
}
