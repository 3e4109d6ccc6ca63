//! Parameter update rules. Plain descent is the default; Adam is the
//! moment-based rule used for the desk-scale and large-scale schedules.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum UpdateRule {
    Sgd,
    Adam { beta1: f64, beta2: f64, eps: f64 },
}

impl Default for UpdateRule {
    fn default() -> Self {
        UpdateRule::Sgd
    }
}

impl UpdateRule {
    pub fn adam() -> Self {
        UpdateRule::Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Update rule plus its per-parameter state.
#[derive(Debug, Clone)]
pub struct Optimizer {
    rule: UpdateRule,
    first: Vec<f64>,
    second: Vec<f64>,
    steps: u64,
}

impl Optimizer {
    pub fn new(rule: UpdateRule, n_params: usize) -> Self {
        let n = match rule {
            UpdateRule::Sgd => 0,
            UpdateRule::Adam { .. } => n_params,
        };
        Self {
            rule,
            first: vec![0.0; n],
            second: vec![0.0; n],
            steps: 0,
        }
    }

    pub fn rule(&self) -> UpdateRule {
        self.rule
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    /// Applies one update `params -= lr * direction(grad)`.
    pub fn apply(&mut self, params: &mut [f64], grad: &[f64], lr: f64) {
        debug_assert_eq!(params.len(), grad.len());
        self.steps += 1;
        match self.rule {
            UpdateRule::Sgd => {
                for (p, g) in params.iter_mut().zip(grad) {
                    *p -= lr * g;
                }
            }
            UpdateRule::Adam { beta1, beta2, eps } => {
                let t = self.steps as i32;
                let c1 = 1.0 - beta1.powi(t);
                let c2 = 1.0 - beta2.powi(t);
                for i in 0..params.len() {
                    let g = grad[i];
                    self.first[i] = beta1 * self.first[i] + (1.0 - beta1) * g;
                    self.second[i] = beta2 * self.second[i] + (1.0 - beta2) * g * g;
                    let m = self.first[i] / c1;
                    let v = self.second[i] / c2;
                    params[i] -= lr * m / (v.sqrt() + eps);
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sgd_step_is_exact() {
        let mut opt = Optimizer::new(UpdateRule::Sgd, 2);
        let mut p = [1.0, -2.0];
        opt.apply(&mut p, &[0.5, 1.0], 0.1);
        assert_eq!(p, [1.0 - 0.05, -2.0 - 0.1]);
    }

    #[test]
    fn adam_first_step_moves_by_lr() {
        let mut opt = Optimizer::new(UpdateRule::adam(), 1);
        let mut p = [0.0];
        opt.apply(&mut p, &[3.0], 0.01);
        assert!((p[0] + 0.01).abs() < 1e-9);
    }

    #[test]
    fn zero_gradient_leaves_params_unchanged() {
        for rule in [UpdateRule::Sgd, UpdateRule::adam()] {
            let mut opt = Optimizer::new(rule, 3);
            let mut p = [1.0, 2.0, 3.0];
            opt.apply(&mut p, &[0.0; 3], 0.5);
            assert_eq!(p, [1.0, 2.0, 3.0]);
        }
    }
}
