use serde::{Deserialize, Serialize};

use super::params::ParamStore;

/// Update rule applied after each backward pass.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Optimizer {
    /// `p <- p - lr * (g + wd * p)`; with momentum `mu` the bracket feeds a velocity
    /// `v <- mu * v + (g + wd * p)` and `p <- p - lr * v`.
    Sgd { momentum: Option<f64> },
    Adam { beta1: f64, beta2: f64, eps: f64 },
}

impl Default for Optimizer {
    fn default() -> Self {
        Optimizer::Sgd { momentum: None }
    }
}

impl Optimizer {
    pub fn adam() -> Self {
        Optimizer::Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    /// Applies one update to every parameter and zeroes the gradients.
    pub fn step(&self, params: &mut ParamStore, lr: f64, weight_decay: f64) {
        match *self {
            Optimizer::Sgd { momentum: None } => sgd_step(params, lr, weight_decay),
            Optimizer::Sgd {
                momentum: Some(mu),
            } => {
                let ids: Vec<_> = params.ids().collect();
                for id in ids {
                    let (value, grad, slots) = params.slots_mut(id, 1);
                    let velocity = &mut slots[0];
                    for ((p, g), v) in value
                        .data_mut()
                        .iter_mut()
                        .zip(grad.data())
                        .zip(velocity.data_mut())
                    {
                        *v = mu * *v + (g + weight_decay * *p);
                        *p -= lr * *v;
                    }
                }
                params.zero_grads();
            }
            Optimizer::Adam { beta1, beta2, eps } => {
                params.steps += 1;
                let t = params.steps as i32;
                let c1 = 1.0 - beta1.powi(t);
                let c2 = 1.0 - beta2.powi(t);
                let ids: Vec<_> = params.ids().collect();
                for id in ids {
                    let (value, grad, slots) = params.slots_mut(id, 2);
                    let (first, rest) = slots.split_at_mut(1);
                    let (m, v) = (&mut first[0], &mut rest[0]);
                    for (((p, g), m), v) in value
                        .data_mut()
                        .iter_mut()
                        .zip(grad.data())
                        .zip(m.data_mut())
                        .zip(v.data_mut())
                    {
                        let g = g + weight_decay * *p;
                        *m = beta1 * *m + (1.0 - beta1) * g;
                        *v = beta2 * *v + (1.0 - beta2) * g * g;
                        *p -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
                    }
                }
                params.zero_grads();
            }
        }
    }
}

/// Plain SGD: `p <- p - lr * (g + weight_decay * p)`, then gradients are zeroed.
pub fn sgd_step(params: &mut ParamStore, lr: f64, weight_decay: f64) {
    let ids: Vec<_> = params.ids().collect();
    for id in ids {
        let (value, grad, _) = params.slots_mut(id, 0);
        for (p, g) in value.data_mut().iter_mut().zip(grad.data()) {
            *p -= lr * (g + weight_decay * *p);
        }
    }
    params.zero_grads();
}
