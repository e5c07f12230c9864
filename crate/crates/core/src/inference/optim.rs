//! Adam and MAP training.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::models::clamp_in_place;
use crate::sparsify::{l0_training_loss, DataLoss, GateState, Penalty, RegularizerSpec};

use super::{InferenceError, LogDensity};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamConfig {
    pub lr: f64,
    #[serde(default = "default_beta1")]
    pub beta1: f64,
    #[serde(default = "default_beta2")]
    pub beta2: f64,
    #[serde(default = "default_eps")]
    pub eps: f64,
    /// Step `t` uses `lr · decay^t`.
    #[serde(default = "default_decay")]
    pub decay: f64,
}

fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.999
}
fn default_eps() -> f64 {
    1e-8
}
fn default_decay() -> f64 {
    1.0
}

impl AdamConfig {
    pub fn new(lr: f64) -> Self {
        Self {
            lr,
            beta1: default_beta1(),
            beta2: default_beta2(),
            eps: default_eps(),
            decay: default_decay(),
        }
    }

    pub fn with_decay(self, decay: f64) -> Self {
        Self { decay, ..self }
    }

    pub fn validate(&self) -> Result<(), InferenceError> {
        let ok = self.lr > 0.0
            && self.lr.is_finite()
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.eps > 0.0
            && self.decay > 0.0
            && self.decay <= 1.0;
        if ok {
            Ok(())
        } else {
            Err(InferenceError::Invalid(format!("invalid Adam settings {self:?}")))
        }
    }

    pub fn lr_at(&self, step: usize) -> f64 {
        self.lr * self.decay.powi(step as i32)
    }
}

/// Adam moment state for one parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub cfg: AdamConfig,
    m: Vec<f64>,
    v: Vec<f64>,
    t: usize,
}

impl Adam {
    pub fn new(cfg: AdamConfig, dim: usize) -> Self {
        Self {
            cfg,
            m: vec![0.0; dim],
            v: vec![0.0; dim],
            t: 0,
        }
    }

    pub fn steps(&self) -> usize {
        self.t
    }

    /// Updates the moments with `g` and returns the bias-corrected direction
    /// `m̂ / (√v̂ + ε)`.
    pub fn transform(&mut self, g: &[f64]) -> Vec<f64> {
        let AdamConfig { beta1, beta2, eps, .. } = self.cfg;
        self.t += 1;
        let c1 = 1.0 - beta1.powi(self.t as i32);
        let c2 = 1.0 - beta2.powi(self.t as i32);
        g.iter()
            .enumerate()
            .map(|(i, &gi)| {
                self.m[i] = beta1 * self.m[i] + (1.0 - beta1) * gi;
                self.v[i] = beta2 * self.v[i] + (1.0 - beta2) * gi * gi;
                (self.m[i] / c1) / ((self.v[i] / c2).sqrt() + eps)
            })
            .collect()
    }

    /// `θ ← θ + lr_t · transform(g)`: one ascent step along `g`.
    pub fn ascend(&mut self, theta: &mut [f64], g: &[f64]) {
        let lr = self.cfg.lr_at(self.t);
        for (t, d) in theta.iter_mut().zip(self.transform(g)) {
            *t += lr * d;
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MapResult {
    pub theta: Vec<f64>,
    /// `log π` before each step.
    pub trace: Vec<f64>,
}

/// Adam ascent on `log π`, projecting after every step.
pub fn train_map<D: LogDensity + ?Sized>(
    density: &D,
    init: &[f64],
    cfg: AdamConfig,
    epochs: usize,
) -> Result<MapResult, InferenceError> {
    cfg.validate()?;
    if init.len() != density.dim() {
        return Err(InferenceError::Invalid(format!(
            "initial point has {} entries, density has {}",
            init.len(),
            density.dim()
        )));
    }
    let mut theta = init.to_vec();
    density.constrain(&mut theta);
    let mut adam = Adam::new(cfg, theta.len());
    let mut trace = Vec::with_capacity(epochs);
    for _ in 0..epochs {
        let (value, grad) = density.value_and_grad(&theta)?;
        if !value.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(InferenceError::NonFinite("MAP objective".into()));
        }
        trace.push(value);
        adam.ascend(&mut theta, &grad);
        density.constrain(&mut theta);
    }
    if theta.iter().any(|t| !t.is_finite()) {
        return Err(InferenceError::NonFinite("MAP parameters".into()));
    }
    Ok(MapResult { theta, trace })
}

#[derive(Debug, Clone, PartialEq)]
pub struct L0Training {
    pub theta_bar: Vec<f64>,
    pub gates: GateState,
    /// Monte Carlo L0 objective per epoch.
    pub trace: Vec<f64>,
}

/// Joint Adam descent on `(θ̄, log α)` for the hard-concrete objective.
/// `constrained` marks entries of `θ̄` clamped at zero after every step.
pub fn train_map_l0<L: DataLoss + ?Sized, R: Rng + ?Sized>(
    data: &L,
    constrained: &[bool],
    theta_bar: &[f64],
    gates: GateState,
    reg: &RegularizerSpec,
    cfg: AdamConfig,
    epochs: usize,
    rng: &mut R,
) -> Result<L0Training, InferenceError> {
    cfg.validate()?;
    reg.validate()?;
    if reg.penalty != Penalty::L0 {
        return Err(InferenceError::Invalid("L0 training needs an L0 regularizer".into()));
    }
    let n = theta_bar.len();
    if data.num_params() != n || gates.len() != n || constrained.len() != n {
        return Err(InferenceError::Invalid("parameter, gate and mask lengths differ".into()));
    }
    let mut theta = theta_bar.to_vec();
    clamp_in_place(&mut theta, constrained);
    let mut gates = gates;
    let mut adam = Adam::new(cfg, 2 * n);
    let mut trace = Vec::with_capacity(epochs);
    let mut joint = vec![0.0; 2 * n];
    for _ in 0..epochs {
        let loss = l0_training_loss(data, &theta, &gates, reg, rng)?;
        if !loss.value.is_finite() {
            return Err(InferenceError::NonFinite("L0 objective".into()));
        }
        trace.push(loss.value);
        let descent: Vec<f64> = loss.grad_theta.iter().chain(&loss.grad_log_alpha).map(|g| -g).collect();
        joint[..n].copy_from_slice(&theta);
        joint[n..].copy_from_slice(&gates.log_alpha);
        adam.ascend(&mut joint, &descent);
        theta.copy_from_slice(&joint[..n]);
        gates.log_alpha.copy_from_slice(&joint[n..]);
        clamp_in_place(&mut theta, constrained);
    }
    if theta.iter().chain(&gates.log_alpha).any(|t| !t.is_finite()) {
        return Err(InferenceError::NonFinite("L0 parameters".into()));
    }
    Ok(L0Training {
        theta_bar: theta,
        gates,
        trace,
    })
}
