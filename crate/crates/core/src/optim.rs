//! Gradient-descent optimizers and the polynomial learning-rate schedule.

use serde::{Deserialize, Serialize};

use crate::models::Parameterized;

/// `lr0 · (1 − t/T)^power`, clamped at zero once `t ≥ T`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolySchedule {
    pub initial_lr: f64,
    pub total_steps: usize,
    pub power: f64,
}

impl PolySchedule {
    pub fn lr(&self, step: usize) -> f64 {
        if self.total_steps == 0 || step >= self.total_steps {
            return 0.0;
        }
        self.initial_lr * (1.0 - step as f64 / self.total_steps as f64).powf(self.power)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum OptimizerKind {
    Sgd { momentum: f64, weight_decay: f64 },
    Adam { beta1: f64, beta2: f64, eps: f64, weight_decay: f64 },
}

impl OptimizerKind {
    pub fn adam() -> Self {
        OptimizerKind::Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
        }
    }

    pub fn sgd_momentum() -> Self {
        OptimizerKind::Sgd {
            momentum: 0.9,
            weight_decay: 1e-4,
        }
    }
}

/// Optimizer state keyed by parameter visit order.
#[derive(Clone, Debug)]
pub struct Optimizer {
    kind: OptimizerKind,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
    steps: u64,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind) -> Self {
        Optimizer {
            kind,
            first: Vec::new(),
            second: Vec::new(),
            steps: 0,
        }
    }

    /// Applies one update using the gradients currently accumulated in `model`.
    pub fn step<M: Parameterized>(&mut self, model: &mut M, lr: f64) {
        self.steps += 1;
        let t = self.steps as i32;
        let mut idx = 0usize;
        let kind = self.kind;
        let (first, second) = (&mut self.first, &mut self.second);
        model.visit_params_mut("", &mut |_, p| {
            if first.len() <= idx {
                first.push(vec![0.0; p.len()]);
                second.push(vec![0.0; p.len()]);
            }
            let m = &mut first[idx];
            let v = &mut second[idx];
            match kind {
                OptimizerKind::Sgd { momentum, weight_decay } => {
                    for i in 0..p.len() {
                        let g = p.grad[i] + weight_decay * p.value[i];
                        m[i] = momentum * m[i] + g;
                        p.value[i] -= lr * m[i];
                    }
                }
                OptimizerKind::Adam {
                    beta1,
                    beta2,
                    eps,
                    weight_decay,
                } => {
                    let c1 = 1.0 - beta1.powi(t);
                    let c2 = 1.0 - beta2.powi(t);
                    for i in 0..p.len() {
                        let g = p.grad[i] + weight_decay * p.value[i];
                        m[i] = beta1 * m[i] + (1.0 - beta1) * g;
                        v[i] = beta2 * v[i] + (1.0 - beta2) * g * g;
                        p.value[i] -= lr * (m[i] / c1) / ((v[i] / c2).sqrt() + eps);
                    }
                }
            }
            idx += 1;
        });
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn poly_schedule_endpoints() {
        let s = PolySchedule {
            initial_lr: 0.007,
            total_steps: 100,
            power: 0.9,
        };
        assert_eq!(s.lr(0), 0.007);
        assert!((s.lr(50) - 0.007 * 0.5f64.powf(0.9)).abs() < 1e-15);
        assert_eq!(s.lr(100), 0.0);
        assert!(s.lr(10) > s.lr(11));
    }
}
