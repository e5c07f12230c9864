//! Hard-concrete L0 gates, Lp penalties and pruning.
//!
//! Every scalar parameter `θ̄ᵢ` carries a gate `zᵢ ∈ [0, 1]` with a learned
//! location `log αᵢ`. During training the effective parameters are
//! `θ = θ̄ ⊙ z` with stochastic gates; at test time the deterministic gates
//! `ẑ` decide which parameters survive.

use std::collections::BTreeMap;
use std::sync::OnceLock;

use rand::Rng;
use rand_distr::{Distribution, Normal, Open01};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::diffengine::{Expr, GraphBuilder};
use crate::models::{ModelError, ModelFile, ModelSpec, ParamLayout, MODEL_SCHEMA};

pub const GAMMA: f64 = -0.1;
pub const ZETA: f64 = 1.1;
pub const BETA: f64 = 2.0 / 3.0;
pub const INIT_STDEV: f64 = 0.01;

#[derive(Debug, Error)]
pub enum SparsifyError {
    #[error("uniform draw {0} is not strictly inside (0, 1)")]
    InvalidUniform(f64),
    #[error("every parameter was pruned")]
    AllPruned,
    #[error("invalid regularizer: {0}")]
    InvalidRegularizer(String),
    #[error("expected {expected} gates, got {got}")]
    GateCount { expected: usize, got: usize },
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Gate locations plus the stretch/temperature hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GateState {
    pub log_alpha: Vec<f64>,
    pub gamma: f64,
    pub zeta: f64,
    pub beta: f64,
}

impl GateState {
    /// `n` gates with `log α ~ N(0, 0.01²)`.
    pub fn init<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Self {
        let normal = Normal::new(0.0, INIT_STDEV).expect("valid stdev");
        Self::from_log_alpha((0..n).map(|_| normal.sample(rng)).collect())
    }

    pub fn from_log_alpha(log_alpha: Vec<f64>) -> Self {
        Self {
            log_alpha,
            gamma: GAMMA,
            zeta: ZETA,
            beta: BETA,
        }
    }

    pub fn len(&self) -> usize {
        self.log_alpha.len()
    }

    pub fn is_empty(&self) -> bool {
        self.log_alpha.is_empty()
    }

    fn stretch(&self, s: f64) -> f64 {
        (s * (self.zeta - self.gamma) + self.gamma).clamp(0.0, 1.0)
    }

    fn is_default(&self) -> bool {
        self.gamma == GAMMA && self.zeta == ZETA && self.beta == BETA
    }
}

/// Logistic noise `log u − log(1 − u)`.
pub fn logistic_noise(u: f64) -> Result<f64, SparsifyError> {
    if !(u > 0.0 && u < 1.0) {
        return Err(SparsifyError::InvalidUniform(u));
    }
    Ok(u.ln() - (-u).ln_1p())
}

/// The stochastic gate `z(ℓ; log α)` as a graph: input 0 is the logistic
/// noise `ℓ`, parameter 0 is `log α`.
pub fn gate_expr() -> &'static Expr {
    static EXPR: OnceLock<Expr> = OnceLock::new();
    EXPR.get_or_init(|| build_gate_expr(GAMMA, ZETA, BETA))
}

fn build_gate_expr(gamma: f64, zeta: f64, beta: f64) -> Expr {
    let mut b = GraphBuilder::new();
    let l = b.input(0);
    let la = b.param(0);
    let pre = b.add(l, la);
    let scaled = b.scale(1.0 / beta, pre);
    let s = b.sigmoid(scaled);
    let st = b.scale(zeta - gamma, s);
    let g = b.constant(gamma);
    let sbar = b.add(st, g);
    let (zero, one) = (b.zero(), b.constant(1.0));
    let lo = b.max(zero, sbar);
    let z = b.min(one, lo);
    b.into_expr(z)
}

/// Sampled gates and their derivatives with respect to `log α`.
#[derive(Debug, Clone, PartialEq)]
pub struct GateSample {
    pub z: Vec<f64>,
    pub dz: Vec<f64>,
}

/// Gates for explicit uniforms `u`, with `∂z/∂log α`.
pub fn sample_gates_with_grad(g: &GateState, u: &[f64]) -> Result<GateSample, SparsifyError> {
    if u.len() != g.len() {
        return Err(SparsifyError::GateCount {
            expected: g.len(),
            got: u.len(),
        });
    }
    let custom;
    let expr = if g.is_default() {
        gate_expr()
    } else {
        custom = build_gate_expr(g.gamma, g.zeta, g.beta);
        &custom
    };
    let graph = expr.graph();
    let (mut values, mut adjoint) = (Vec::new(), Vec::new());
    let mut out = GateSample {
        z: Vec::with_capacity(u.len()),
        dz: Vec::with_capacity(u.len()),
    };
    for (&ui, &la) in u.iter().zip(&g.log_alpha) {
        let l = logistic_noise(ui)?;
        graph
            .forward(&[l], &[la], &mut values)
            .map_err(|e| SparsifyError::Model(e.into()))?;
        let mut d = [0.0];
        graph.backward(&values, &[1.0], &mut adjoint, &mut d, None);
        out.z.push(graph.output_value(&values, 0));
        out.dz.push(d[0]);
    }
    Ok(out)
}

pub fn sample_gates(g: &GateState, u: &[f64]) -> Result<Vec<f64>, SparsifyError> {
    Ok(sample_gates_with_grad(g, u)?.z)
}

/// Draws strictly-interior uniforms.
pub fn draw_uniforms<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<f64> {
    (0..n).map(|_| Open01.sample(rng)).collect()
}

/// Test-time gates `ẑ = clamp(sigmoid(log α)(ζ − γ) + γ, 0, 1)`.
pub fn deterministic_gates(g: &GateState) -> Vec<f64> {
    g.log_alpha.iter().map(|&la| g.stretch(sigmoid(la))).collect()
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Expected number of active gates, `Σ sigmoid(log αⱼ − β log(−γ/ζ))`.
pub fn l0_penalty(g: &GateState) -> f64 {
    let shift = -g.beta * (-g.gamma / g.zeta).ln();
    g.log_alpha.iter().map(|&la| sigmoid(la + shift)).sum()
}

/// `∂ l0_penalty / ∂ log α`.
pub fn l0_penalty_grad(g: &GateState) -> Vec<f64> {
    let shift = -g.beta * (-g.gamma / g.zeta).ln();
    g.log_alpha
        .iter()
        .map(|&la| {
            let s = sigmoid(la + shift);
            s * (1.0 - s)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Penalty {
    L0,
    L1,
    L2,
}

impl Penalty {
    pub fn from_p(p: u32) -> Result<Self, SparsifyError> {
        match p {
            0 => Ok(Penalty::L0),
            1 => Ok(Penalty::L1),
            2 => Ok(Penalty::L2),
            _ => Err(SparsifyError::InvalidRegularizer(format!("p must be 0, 1 or 2, got {p}"))),
        }
    }

    pub fn p(self) -> u32 {
        match self {
            Penalty::L0 => 0,
            Penalty::L1 => 1,
            Penalty::L2 => 2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegularizerSpec {
    pub penalty: Penalty,
    pub lambda: f64,
    pub mc_samples: usize,
}

impl RegularizerSpec {
    pub fn new(penalty: Penalty, lambda: f64) -> Self {
        Self {
            penalty,
            lambda,
            mc_samples: 1,
        }
    }

    pub fn validate(&self) -> Result<(), SparsifyError> {
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(SparsifyError::InvalidRegularizer(format!("lambda must be >= 0, got {}", self.lambda)));
        }
        if self.mc_samples == 0 {
            return Err(SparsifyError::InvalidRegularizer("mc_samples must be >= 1".into()));
        }
        Ok(())
    }
}

/// `λ Σ|θᵢ|` for p = 1, `λ Σθᵢ²` for p = 2.
pub fn lp_penalty(theta: &[f64], p: u32, lambda: f64) -> Result<f64, SparsifyError> {
    match p {
        1 => Ok(lambda * theta.iter().map(|t| t.abs()).sum::<f64>()),
        2 => Ok(lambda * theta.iter().map(|t| t * t).sum::<f64>()),
        _ => Err(SparsifyError::InvalidRegularizer(format!("Lp penalty needs p = 1 or 2, got {p}"))),
    }
}

/// Subgradient of [`lp_penalty`], with `sign(0) = 0`.
pub fn lp_penalty_grad(theta: &[f64], p: u32, lambda: f64) -> Result<Vec<f64>, SparsifyError> {
    match p {
        1 => Ok(theta
            .iter()
            .map(|&t| if t == 0.0 { 0.0 } else { lambda * t.signum() })
            .collect()),
        2 => Ok(theta.iter().map(|&t| 2.0 * lambda * t).collect()),
        _ => Err(SparsifyError::InvalidRegularizer(format!("Lp penalty needs p = 1 or 2, got {p}"))),
    }
}

/// A differentiable data loss over full-length parameters.
pub trait DataLoss: Sync {
    fn num_params(&self) -> usize;
    fn loss_and_grad(&self, theta: &[f64]) -> Result<(f64, Vec<f64>), ModelError>;
}

/// Value and gradients of the L0 objective.
#[derive(Debug, Clone, PartialEq)]
pub struct L0Loss {
    pub value: f64,
    pub grad_theta: Vec<f64>,
    pub grad_log_alpha: Vec<f64>,
}

/// Monte Carlo L0 objective for given uniforms (one row of `u` per sample):
/// `(1/M) Σₘ L(θ̄ ⊙ z(uₘ)) + λ · l0_penalty`.
pub fn l0_loss_with_uniforms<L: DataLoss + ?Sized>(
    data: &L,
    theta_bar: &[f64],
    g: &GateState,
    lambda: f64,
    u: &[Vec<f64>],
) -> Result<L0Loss, SparsifyError> {
    let n = theta_bar.len();
    if g.len() != n {
        return Err(SparsifyError::GateCount { expected: n, got: g.len() });
    }
    let m = u.len().max(1) as f64;
    let mut out = L0Loss {
        value: 0.0,
        grad_theta: vec![0.0; n],
        grad_log_alpha: vec![0.0; n],
    };
    for row in u {
        let gs = sample_gates_with_grad(g, row)?;
        let theta: Vec<f64> = theta_bar.iter().zip(&gs.z).map(|(t, z)| t * z).collect();
        let (loss, grad) = data.loss_and_grad(&theta)?;
        out.value += loss / m;
        for i in 0..n {
            out.grad_theta[i] += grad[i] * gs.z[i] / m;
            out.grad_log_alpha[i] += grad[i] * theta_bar[i] * gs.dz[i] / m;
        }
    }
    out.value += lambda * l0_penalty(g);
    for (ga, d) in out.grad_log_alpha.iter_mut().zip(l0_penalty_grad(g)) {
        *ga += lambda * d;
    }
    Ok(out)
}

/// [`l0_loss_with_uniforms`] with `reg.mc_samples` rows of uniforms drawn from `rng`.
pub fn l0_training_loss<L: DataLoss + ?Sized, R: Rng + ?Sized>(
    data: &L,
    theta_bar: &[f64],
    g: &GateState,
    reg: &RegularizerSpec,
    rng: &mut R,
) -> Result<L0Loss, SparsifyError> {
    reg.validate()?;
    if reg.penalty != Penalty::L0 {
        return Err(SparsifyError::InvalidRegularizer("L0 loss needs p = 0".into()));
    }
    let u: Vec<Vec<f64>> = (0..reg.mc_samples).map(|_| draw_uniforms(g.len(), rng)).collect();
    l0_loss_with_uniforms(data, theta_bar, g, reg.lambda, &u)
}

/// A pruned model: surviving parameters and the test-time gates.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseModel {
    pub active: Vec<bool>,
    pub compact: Vec<f64>,
    pub gates: Vec<f64>,
}

impl SparseModel {
    pub fn active_indices(&self) -> Vec<usize> {
        self.active.iter().enumerate().filter(|(_, &a)| a).map(|(i, _)| i).collect()
    }

    pub fn active_count(&self) -> usize {
        self.compact.len()
    }

    pub fn layout(&self) -> ParamLayout {
        ParamLayout::from_active(&self.active)
    }

    pub fn materialize(&self) -> Vec<f64> {
        self.layout().expand(&self.compact, self.active.len())
    }

    pub fn to_model_file(&self, model: ModelSpec, provenance: BTreeMap<String, toml::Value>) -> ModelFile {
        ModelFile {
            schema: MODEL_SCHEMA,
            active: self.active.iter().map(|&a| if a { '1' } else { '0' }).collect(),
            params: self.compact.clone(),
            gates: Some(self.gates.clone()),
            model,
            provenance,
        }
    }
}

/// Keeps the parameters with `ẑᵢ > 0`, folding the gate into the value.
pub fn prune(theta_bar: &[f64], g: &GateState) -> Result<SparseModel, SparsifyError> {
    prune_with_gates(theta_bar, &deterministic_gates(g))
}

pub fn prune_with_gates(theta_bar: &[f64], z: &[f64]) -> Result<SparseModel, SparsifyError> {
    if z.len() != theta_bar.len() {
        return Err(SparsifyError::GateCount {
            expected: theta_bar.len(),
            got: z.len(),
        });
    }
    let active: Vec<bool> = z.iter().map(|&zi| zi > 0.0).collect();
    let compact: Vec<f64> = theta_bar
        .iter()
        .zip(z)
        .filter(|(_, &zi)| zi > 0.0)
        .map(|(&t, &zi)| t * zi)
        .collect();
    if compact.is_empty() {
        return Err(SparsifyError::AllPruned);
    }
    Ok(SparseModel {
        active,
        compact,
        gates: z.to_vec(),
    })
}
