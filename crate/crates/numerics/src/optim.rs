//! AdamW and RAdam with decoupled weight decay, linear warmup/decay and
//! optional layer-wise learning-rate decay.

use serde::{Deserialize, Serialize};

use crate::error::{NumericsError, Result};
use crate::params::ParameterStore;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    AdamW,
    RAdam,
}

impl std::str::FromStr for OptimizerKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "adamw" => Ok(Self::AdamW),
            "radam" => Ok(Self::RAdam),
            other => Err(format!("unknown optimizer `{other}` (expected adamw or radam)")),
        }
    }
}

impl std::fmt::Display for OptimizerKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::AdamW => "adamw",
            Self::RAdam => "radam",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub warmup_steps: u64,
    /// Step at which the linear decay reaches zero; 0 keeps the rate constant.
    pub total_steps: u64,
    /// Multiplier applied once per level of depth from the top; `None` disables it.
    pub layer_decay: Option<f64>,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            kind: OptimizerKind::AdamW,
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
            warmup_steps: 0,
            total_steps: 0,
            layer_decay: None,
        }
    }
}

impl OptimizerConfig {
    /// Learning rate used for the update that follows `completed` steps.
    pub fn lr_at(&self, completed: u64) -> f64 {
        let t = completed as f64;
        if self.warmup_steps > 0 && completed < self.warmup_steps {
            return self.lr * (t + 1.0) / self.warmup_steps as f64;
        }
        if self.total_steps == 0 {
            return self.lr;
        }
        let span = self.total_steps.saturating_sub(self.warmup_steps).max(1) as f64;
        let remaining = self.total_steps.saturating_sub(completed) as f64;
        self.lr * (remaining / span).clamp(0.0, 1.0)
    }
}

/// Applies one update to every parameter using its stored gradient.
pub fn optimizer_step(store: &mut ParameterStore, cfg: &OptimizerConfig) -> Result<()> {
    if let Some(id) = store.ids().find(|&id| store.grad(id).is_none()) {
        return Err(NumericsError::Contract(format!(
            "parameter `{}` has no gradient",
            store.name(id)
        )));
    }
    let base_lr = cfg.lr_at(store.step);
    store.step += 1;
    let t = store.step as f64;
    let bc1 = 1.0 - cfg.beta1.powf(t);
    let bc2 = 1.0 - cfg.beta2.powf(t);

    // RAdam rectification terms, shared by all parameters at this step.
    let rho_inf = 2.0 / (1.0 - cfg.beta2) - 1.0;
    let rho_t = rho_inf - 2.0 * t * cfg.beta2.powf(t) / bc2;
    let rect = if rho_t > 4.0 {
        Some(((rho_t - 4.0) * (rho_t - 2.0) * rho_inf / ((rho_inf - 4.0) * (rho_inf - 2.0) * rho_t)).sqrt())
    } else {
        None
    };

    let ids: Vec<_> = store.ids().collect();
    for id in ids {
        let lr = match cfg.layer_decay {
            Some(d) => base_lr * d.powi(store.depth(id) as i32),
            None => base_lr,
        };
        let (values, grad, state) = store.parts_mut(id);
        let grad = grad.expect("checked above").to_vec();
        for (i, (w, g)) in values.iter_mut().zip(&grad).enumerate() {
            *w -= lr * cfg.weight_decay * *w;
            let m = &mut state.m[i];
            let v = &mut state.v[i];
            *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
            *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
            let m_hat = *m / bc1;
            let update = match cfg.kind {
                OptimizerKind::AdamW => m_hat / ((*v / bc2).sqrt() + cfg.eps),
                OptimizerKind::RAdam => match rect {
                    Some(r) => r * m_hat / ((*v / bc2).sqrt() + cfg.eps),
                    None => m_hat,
                },
            };
            *w -= lr * update;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::Graph;
    use crate::tensor::Tensor;

    fn one_param(w: f64) -> (ParameterStore, crate::params::ParamId) {
        let mut s = ParameterStore::new();
        let id = s.insert("w", Tensor::vector(vec![w]), 0).unwrap();
        (s, id)
    }

    #[test]
    fn adamw_step_descends() {
        let (mut s, id) = one_param(1.0);
        let mut g = crate::params::Gradients::new(1);
        g.add_into(id, &[1.0]);
        s.accumulate(&g);
        let cfg = OptimizerConfig {
            lr: 0.1,
            weight_decay: 0.0,
            ..Default::default()
        };
        optimizer_step(&mut s, &cfg).unwrap();
        assert!(s.value(id).item() < 1.0);
    }

    #[test]
    fn weight_decay_alone_shrinks() {
        for kind in [OptimizerKind::AdamW, OptimizerKind::RAdam] {
            let (mut s, id) = one_param(-2.0);
            s.accumulate(&crate::params::Gradients::new(1));
            let cfg = OptimizerConfig {
                kind,
                lr: 0.1,
                weight_decay: 0.5,
                ..Default::default()
            };
            optimizer_step(&mut s, &cfg).unwrap();
            assert!(s.value(id).item().abs() < 2.0);
        }
    }

    #[test]
    fn missing_gradient_is_an_error() {
        let (mut s, _) = one_param(1.0);
        assert!(matches!(
            optimizer_step(&mut s, &OptimizerConfig::default()),
            Err(NumericsError::Contract(_))
        ));
    }

    fn bowl_loss(s: &ParameterStore) -> (f64, crate::params::Gradients) {
        let mut g = Graph::new(s);
        let w = g.param_named("w").unwrap();
        let sq = g.mul(w, w).unwrap();
        let l = g.sum(sq).unwrap();
        (g.value(l).item(), g.backward(l).unwrap())
    }

    #[test]
    fn quadratic_bowl_descends_monotonically() {
        for kind in [OptimizerKind::AdamW, OptimizerKind::RAdam] {
            let mut s = ParameterStore::new();
            s.insert("w", Tensor::vector(vec![1.5, -2.0, 0.7]), 0).unwrap();
            let cfg = OptimizerConfig {
                kind,
                lr: 0.05,
                weight_decay: 0.0,
                ..Default::default()
            };
            let mut prev = f64::INFINITY;
            for _ in 0..10 {
                let (loss, grads) = bowl_loss(&s);
                assert!(loss < prev, "{kind}: {loss} !< {prev}");
                prev = loss;
                s.zero_grad();
                s.accumulate(&grads);
                optimizer_step(&mut s, &cfg).unwrap();
            }
        }
    }

    #[test]
    fn schedule_warmup_then_linear_decay() {
        let cfg = OptimizerConfig {
            lr: 1.0,
            warmup_steps: 4,
            total_steps: 12,
            ..Default::default()
        };
        assert_eq!(cfg.lr_at(0), 0.25);
        assert_eq!(cfg.lr_at(3), 1.0);
        assert_eq!(cfg.lr_at(4), 1.0);
        assert_eq!(cfg.lr_at(8), 0.5);
        assert_eq!(cfg.lr_at(12), 0.0);
        assert_eq!(cfg.lr_at(20), 0.0);
    }

    #[test]
    fn layer_decay_scales_deeper_parameters() {
        let mut s = ParameterStore::new();
        let top = s.insert("top", Tensor::vector(vec![0.0]), 0).unwrap();
        let deep = s.insert("deep", Tensor::vector(vec![0.0]), 2).unwrap();
        let mut g = crate::params::Gradients::new(2);
        g.add_into(top, &[1.0]);
        g.add_into(deep, &[1.0]);
        s.accumulate(&g);
        let cfg = OptimizerConfig {
            lr: 0.1,
            weight_decay: 0.0,
            layer_decay: Some(0.5),
            ..Default::default()
        };
        optimizer_step(&mut s, &cfg).unwrap();
        let (a, b) = (s.value(top).item(), s.value(deep).item());
        approx::assert_relative_eq!(b / a, 0.25, epsilon = 1e-9);
    }

    #[test]
    fn radam_is_sgd_with_momentum_early() {
        let (mut s, id) = one_param(0.0);
        let mut g = crate::params::Gradients::new(1);
        g.add_into(id, &[2.0]);
        s.accumulate(&g);
        let cfg = OptimizerConfig {
            kind: OptimizerKind::RAdam,
            lr: 0.1,
            weight_decay: 0.0,
            ..Default::default()
        };
        optimizer_step(&mut s, &cfg).unwrap();
        // first step: rho_1 = 1 < 4, update = lr * m_hat = 0.1 * 2
        approx::assert_abs_diff_eq!(s.value(id).item(), -0.2, epsilon = 1e-12);
    }
}
