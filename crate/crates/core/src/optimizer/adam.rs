//! Adaptive-moment updates for one block of parameters.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamParams {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamParams {
    fn default() -> Self {
        AdamParams {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-15,
        }
    }
}

/// First and second moments plus a step counter for a flat parameter block.
#[derive(Debug, Clone, PartialEq)]
pub struct Moments {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub steps: u64,
}

impl Moments {
    pub fn zeros(n: usize) -> Self {
        Moments {
            m: vec![0.0; n],
            v: vec![0.0; n],
            steps: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.m.len()
    }

    pub fn is_empty(&self) -> bool {
        self.m.is_empty()
    }

    /// Parameter increments (to be added) for gradient `grad` at learning rate `lr`.
    pub fn step(&mut self, grad: &[f64], lr: f64, p: &AdamParams) -> Vec<f64> {
        assert_eq!(grad.len(), self.m.len(), "gradient length does not match moments");
        self.steps += 1;
        let t = self.steps as i32;
        let c1 = 1.0 - p.beta1.powi(t);
        let c2 = 1.0 - p.beta2.powi(t);
        let mut out = Vec::with_capacity(grad.len());
        for ((m, v), g) in self.m.iter_mut().zip(self.v.iter_mut()).zip(grad) {
            *m = p.beta1 * *m + (1.0 - p.beta1) * g;
            *v = p.beta2 * *v + (1.0 - p.beta2) * g * g;
            let mh = *m / c1;
            let vh = *v / c2;
            out.push(-lr * mh / (vh.sqrt() + p.eps));
        }
        out
    }

    /// Apply [`Moments::step`] to `params` in place.
    pub fn update(&mut self, params: &mut [f64], grad: &[f64], lr: f64, p: &AdamParams) {
        let delta = self.step(grad, lr, p);
        for (x, d) in params.iter_mut().zip(delta) {
            *x += d;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_has_size_lr() {
        let mut m = Moments::zeros(3);
        let d = m.step(&[2.0, -0.5, 1e-3], 0.1, &AdamParams::default());
        for (x, s) in d.iter().zip([-1.0, 1.0, -1.0]) {
            assert!((x - 0.1 * s).abs() < 1e-9);
        }
    }

    #[test]
    fn zero_lr_leaves_parameters() {
        let mut m = Moments::zeros(2);
        let mut x = [1.0, 2.0];
        m.update(&mut x, &[3.0, 4.0], 0.0, &AdamParams::default());
        assert_eq!(x, [1.0, 2.0]);
    }

    #[test]
    fn minimizes_a_quadratic() {
        let mut m = Moments::zeros(2);
        let mut x = [3.0, -2.0];
        for i in 0..2000 {
            let g = [2.0 * x[0], 8.0 * x[1]];
            let lr = 0.05 * 0.998f64.powi(i);
            m.update(&mut x, &g, lr, &AdamParams::default());
        }
        assert!(x[0].abs() < 1e-2 && x[1].abs() < 1e-2, "{x:?}");
    }

    #[test]
    fn matches_hand_computed_second_step() {
        let p = AdamParams::default();
        let mut m = Moments::zeros(1);
        m.step(&[1.0], 1.0, &p);
        let d = m.step(&[3.0], 1.0, &p)[0];
        let m2 = 0.9 * 0.1 + 0.1 * 3.0;
        let v2 = 0.999 * 0.001 + 0.001 * 9.0;
        let want = -(m2 / (1.0 - 0.81)) / ((v2 / (1.0 - 0.999f64.powi(2))).sqrt() + 1e-15);
        assert!((d - want).abs() < 1e-12);
    }
}
