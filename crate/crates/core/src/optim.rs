//! SGD with classical momentum and Adam, plus the step-decay learning-rate schedule.

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::params::ParameterVector;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    pub momentum: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            kind: OptimizerKind::Adam,
            momentum: 0.9,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Per-parameter optimizer memory (velocity for SGD, both moments for Adam).
#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState {
    first: Vec<f64>,
    second: Vec<f64>,
    steps: u64,
}

impl OptimizerState {
    pub fn new(params: &ParameterVector) -> Self {
        let n = params.total_len();
        Self {
            first: vec![0.0; n],
            second: vec![0.0; n],
            steps: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }
}

/// Applies one update in place.
pub fn optimizer_step(
    params: &mut ParameterVector,
    grads: &ParameterVector,
    state: &mut OptimizerState,
    config: &OptimizerConfig,
    learning_rate: f64,
) -> Result<()> {
    params.check_structure(grads)?;
    state.steps += 1;
    let t = state.steps as i32;
    let (bias1, bias2) = (1.0 - config.beta1.powi(t), 1.0 - config.beta2.powi(t));
    let mut offset = 0;
    for (group, grad) in params.groups_mut().iter_mut().zip(grads.groups()) {
        let n = group.len();
        let m = &mut state.first[offset..offset + n];
        let v = &mut state.second[offset..offset + n];
        for (i, (p, g)) in group.data_mut().iter_mut().zip(grad.data()).enumerate() {
            match config.kind {
                OptimizerKind::Sgd => {
                    m[i] = config.momentum * m[i] + g;
                    *p -= learning_rate * m[i];
                }
                OptimizerKind::Adam => {
                    m[i] = config.beta1 * m[i] + (1.0 - config.beta1) * g;
                    v[i] = config.beta2 * v[i] + (1.0 - config.beta2) * g * g;
                    let m_hat = m[i] / bias1;
                    let v_hat = v[i] / bias2;
                    *p -= learning_rate * m_hat / (v_hat.sqrt() + config.eps);
                }
            }
        }
        offset += n;
    }
    Ok(())
}

/// `base · factor^(number of decay epochs <= epoch)`; epochs are 0-based.
pub fn learning_rate_at(base: f64, decay_epochs: &[usize], factor: f64, epoch: usize) -> f64 {
    let drops = decay_epochs.iter().filter(|&&e| e <= epoch).count();
    base * factor.powi(drops as i32)
}
