//! AdamW optimizer with decoupled weight decay.

use super::Tensor;
use crate::error::{Error, Result};

/// Serialized per-parameter moments: (name, first moment, second moment).
pub type MomentEntry = (String, Vec<f64>, Vec<f64>);

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize, PartialEq)]
pub struct OptimConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Decay applied to parameters in the decayed group.
    pub weight_decay: f64,
}

impl Default for OptimConfig {
    fn default() -> Self {
        OptimConfig {
            lr: 0.002,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 5e-4,
        }
    }
}

/// Weight-decay grouping: biases (and any future normalization parameters)
/// are left undecayed, everything else uses the configured decay.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamGroup {
    Decayed,
    NoDecay,
}

impl ParamGroup {
    /// Group by parameter name suffix.
    pub fn for_name(name: &str) -> ParamGroup {
        if name.ends_with(".bias") || name.ends_with(".b") {
            ParamGroup::NoDecay
        } else {
            ParamGroup::Decayed
        }
    }
}

struct ParamState {
    name: String,
    tensor: Tensor,
    group: ParamGroup,
    lr_scale: f64,
    m: Vec<f64>,
    v: Vec<f64>,
}

/// AdamW: Adam moment updates with bias correction plus decoupled weight
/// decay (`p -= lr * wd * p`, independent of the gradient path).
pub struct AdamW {
    cfg: OptimConfig,
    states: Vec<ParamState>,
    step_count: u64,
}

impl AdamW {
    pub fn new(named_params: &[(String, Tensor)], cfg: OptimConfig) -> AdamW {
        Self::with_lr_scales(named_params, cfg, |_| 1.0)
    }

    /// Per-parameter learning-rate factors keyed by name (sub-networks
    /// that need a gentler step, like the warp regressor).
    pub fn with_lr_scales(
        named_params: &[(String, Tensor)],
        cfg: OptimConfig,
        scale_of: impl Fn(&str) -> f64,
    ) -> AdamW {
        let states = named_params
            .iter()
            .map(|(name, t)| ParamState {
                name: name.clone(),
                tensor: t.clone(),
                group: ParamGroup::for_name(name),
                lr_scale: scale_of(name),
                m: vec![0.0; t.numel()],
                v: vec![0.0; t.numel()],
            })
            .collect();
        AdamW {
            cfg,
            states,
            step_count: 0,
        }
    }

    pub fn config(&self) -> &OptimConfig {
        &self.cfg
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    pub fn zero_grad(&self) {
        for s in &self.states {
            s.tensor.zero_grad();
        }
    }

    /// One optimizer step. Every parameter must have a populated gradient.
    /// Gradient buffers are left untouched.
    pub fn step(&mut self) -> Result<()> {
        self.step_count += 1;
        let t = self.step_count as i32;
        let bc1 = 1.0 - self.cfg.beta1.powi(t);
        let bc2 = 1.0 - self.cfg.beta2.powi(t);
        for s in &mut self.states {
            let grad = s.tensor.grad().ok_or_else(|| {
                Error::value(format!("missing gradient for parameter '{}'", s.name))
            })?;
            let wd = match s.group {
                ParamGroup::Decayed => self.cfg.weight_decay,
                ParamGroup::NoDecay => 0.0,
            };
            let lr = self.cfg.lr * s.lr_scale;
            let mut data = s.tensor.to_vec();
            for i in 0..data.len() {
                let g = grad[i];
                s.m[i] = self.cfg.beta1 * s.m[i] + (1.0 - self.cfg.beta1) * g;
                s.v[i] = self.cfg.beta2 * s.v[i] + (1.0 - self.cfg.beta2) * g * g;
                let m_hat = s.m[i] / bc1;
                let v_hat = s.v[i] / bc2;
                data[i] -= lr * (m_hat / (v_hat.sqrt() + self.cfg.eps) + wd * data[i]);
            }
            s.tensor.set_data(&data)?;
        }
        Ok(())
    }

    /// Moment buffers and step count for checkpointing, keyed by parameter
    /// name. Restoring them reproduces the optimizer trajectory exactly.
    pub fn export_state(&self) -> (u64, Vec<MomentEntry>) {
        (
            self.step_count,
            self.states
                .iter()
                .map(|s| (s.name.clone(), s.m.clone(), s.v.clone()))
                .collect(),
        )
    }

    pub fn import_state(&mut self, step_count: u64, moments: &[MomentEntry]) -> Result<()> {
        self.step_count = step_count;
        for (name, m, v) in moments {
            let s = self
                .states
                .iter_mut()
                .find(|s| &s.name == name)
                .ok_or_else(|| Error::value(format!("unknown optimizer state entry '{name}'")))?;
            if m.len() != s.m.len() || v.len() != s.v.len() {
                return Err(Error::shape(format!(
                    "optimizer state size mismatch for '{name}'"
                )));
            }
            s.m.copy_from_slice(m);
            s.v.copy_from_slice(v);
        }
        Ok(())
    }
}
