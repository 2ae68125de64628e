use std::f64::consts::PI;

use super::{Gradients, ModelParams};

/// `lr0 * (1 + cos(pi * epoch / total)) / 2`.
pub fn cosine_lr(epoch: usize, total_epochs: usize, lr0: f64) -> f64 {
    if total_epochs == 0 {
        return lr0;
    }
    lr0 * (1.0 + (PI * epoch as f64 / total_epochs as f64).cos()) / 2.0
}

/// Decays by `gamma` at each milestone epoch already reached.
pub fn multistep_lr(epoch: usize, milestones: &[usize], gamma: f64, lr0: f64) -> f64 {
    let passed = milestones.iter().filter(|m| epoch >= **m).count();
    lr0 * gamma.powi(passed as i32)
}

/// Momentum SGD with L2 weight decay folded into the gradient:
/// `v <- m v + (g + wd p)`, `p <- p - lr v`.
#[derive(Debug, Clone)]
pub struct Sgd {
    pub momentum: f64,
    pub weight_decay: f64,
    velocity: Option<Vec<f64>>,
}

impl Sgd {
    pub fn new(momentum: f64, weight_decay: f64) -> Self {
        Self {
            momentum,
            weight_decay,
            velocity: None,
        }
    }

    pub fn reset(&mut self) {
        self.velocity = None;
    }

    pub fn step(&mut self, params: &mut ModelParams, grads: &Gradients, lr: f64) {
        let mut p = params.to_flat();
        let g = grads.to_flat();
        let v = self.velocity.get_or_insert_with(|| vec![0.0; p.len()]);
        for ((pi, gi), vi) in p.iter_mut().zip(&g).zip(v.iter_mut()) {
            let d = gi + self.weight_decay * *pi;
            *vi = self.momentum * *vi + d;
            *pi -= lr * *vi;
        }
        params.load_flat(&p).expect("gradient shape matches parameters");
    }
}

/// Single functional step from zero momentum state.
pub fn sgd_step(params: &ModelParams, grads: &Gradients, lr: f64, momentum: f64, weight_decay: f64) -> ModelParams {
    let mut out = params.clone();
    Sgd::new(momentum, weight_decay).step(&mut out, grads, lr);
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Activation;
    use crate::rng::stage_rng;

    #[test]
    fn cosine_schedule_points() {
        assert_eq!(cosine_lr(0, 50, 0.1), 0.1);
        assert!(cosine_lr(50, 50, 0.1).abs() < 1e-15);
        assert!((cosine_lr(25, 50, 0.1) - 0.05).abs() < 1e-15);
    }

    #[test]
    fn multistep_schedule() {
        assert_eq!(multistep_lr(0, &[10, 20], 0.1, 1.0), 1.0);
        assert!((multistep_lr(15, &[10, 20], 0.1, 1.0) - 0.1).abs() < 1e-15);
        assert!((multistep_lr(20, &[10, 20], 0.1, 1.0) - 0.01).abs() < 1e-15);
    }

    #[test]
    fn zero_lr_is_identity_and_plain_step_is_exact() {
        let p = ModelParams::init(&[3, 4], 2, Activation::Relu, &mut stage_rng(0, "init")).unwrap();
        let mut g = p.zeros_like();
        g.load_flat(&(0..p.n_params()).map(|i| i as f64 * 0.01).collect::<Vec<_>>()).unwrap();
        assert_eq!(sgd_step(&p, &g, 0.0, 0.9, 1e-4), p);
        let q = sgd_step(&p, &g, 0.5, 0.0, 0.0);
        for ((a, b), c) in q.to_flat().iter().zip(p.to_flat()).zip(g.to_flat()) {
            assert_eq!(*a, b - 0.5 * c);
        }
    }

    #[test]
    fn quadratic_bowl_descends() {
        // f(p) = 0.5 * sum c_i p_i^2, gradient c_i p_i
        let mut p = ModelParams::init(&[3, 4], 2, Activation::Relu, &mut stage_rng(1, "init")).unwrap();
        let curv: Vec<f64> = (0..p.n_params()).map(|i| 0.5 + (i % 7) as f64 * 0.25).collect();
        let loss = |p: &ModelParams| -> f64 {
            p.to_flat().iter().zip(&curv).map(|(v, c)| 0.5 * c * v * v).sum()
        };
        let mut opt = Sgd::new(0.5, 0.0);
        let mut prev = loss(&p);
        for _ in 0..100 {
            let mut g = p.zeros_like();
            g.load_flat(&p.to_flat().iter().zip(&curv).map(|(v, c)| c * v).collect::<Vec<_>>())
                .unwrap();
            opt.step(&mut p, &g, 0.01);
            let cur = loss(&p);
            assert!(cur < prev);
            prev = cur;
        }
    }
}
