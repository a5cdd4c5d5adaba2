use crate::error::{Result, SpineError};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            learning_rate: 1e-2,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
}

impl AdamState {
    pub fn new(len: usize) -> Self {
        AdamState {
            m: vec![0.0; len],
            v: vec![0.0; len],
            t: 0,
        }
    }

    /// Extends the moment buffers for newly appended parameters.
    pub fn grow(&mut self, len: usize) {
        self.m.resize(len, 0.0);
        self.v.resize(len, 0.0);
    }
}

/// One bias-corrected Adam update. A non-finite gradient aborts without
/// touching `theta` or `state`.
pub fn adam_step(theta: &mut [f64], grad: &[f64], state: &mut AdamState, cfg: &AdamConfig) -> Result<()> {
    if let Some(i) = grad.iter().position(|g| !g.is_finite()) {
        return Err(SpineError::NonFiniteGradient {
            index: i,
            value: grad[i],
        });
    }
    if theta.len() != grad.len() || state.m.len() != theta.len() {
        return Err(SpineError::Input(format!(
            "adam: {} parameters, {} gradients, {} moments",
            theta.len(),
            grad.len(),
            state.m.len()
        )));
    }
    state.t += 1;
    let t = state.t as i32;
    let c1 = 1.0 - cfg.beta1.powi(t);
    let c2 = 1.0 - cfg.beta2.powi(t);
    for (((p, &g), m), v) in theta.iter_mut().zip(grad).zip(&mut state.m).zip(&mut state.v) {
        *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
        *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
        *p -= cfg.learning_rate * (*m / c1) / ((*v / c2).sqrt() + cfg.eps);
    }
    Ok(())
}
