//! Stein variational gradient descent with an RBF kernel.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::optim::{Adam, AdamConfig};
use super::posterior::{GaussianL1, LogDensity};
use super::{InferenceError, PosteriorSamples};

pub const BANDWIDTH_FLOOR: f64 = 1e-8;

/// RBF kernel with the median heuristic unless a bandwidth is fixed.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelSpec {
    #[serde(default)]
    pub bandwidth: Option<f64>,
}

impl KernelSpec {
    pub fn median() -> Self {
        Self { bandwidth: None }
    }

    pub fn fixed(h: f64) -> Self {
        Self { bandwidth: Some(h) }
    }

    pub fn validate(&self) -> Result<(), InferenceError> {
        match self.bandwidth {
            Some(h) if !(h > 0.0 && h.is_finite()) => {
                Err(InferenceError::Invalid(format!("kernel bandwidth must be positive, got {h}")))
            }
            _ => Ok(()),
        }
    }

    pub fn resolve(&self, particles: &[Vec<f64>]) -> f64 {
        self.bandwidth.unwrap_or_else(|| median_bandwidth(particles))
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// `κ = exp(−‖a − b‖²/h)` and `∇ₐκ = −(2/h)(a − b)κ`.
pub fn rbf_kernel(a: &[f64], b: &[f64], h: f64) -> (f64, Vec<f64>) {
    let k = (-sq_dist(a, b) / h).exp();
    let grad = a.iter().zip(b).map(|(x, y)| -(2.0 / h) * (x - y) * k).collect();
    (k, grad)
}

/// `med² / ln(S + 1)` over pairwise distances, floored.
pub fn median_bandwidth(particles: &[Vec<f64>]) -> f64 {
    let s = particles.len();
    if s < 2 {
        return BANDWIDTH_FLOOR;
    }
    let mut d: Vec<f64> = Vec::with_capacity(s * (s - 1) / 2);
    for i in 0..s {
        for j in i + 1..s {
            d.push(sq_dist(&particles[i], &particles[j]).sqrt());
        }
    }
    d.sort_by(f64::total_cmp);
    let n = d.len();
    let med = if n % 2 == 1 { d[n / 2] } else { 0.5 * (d[n / 2 - 1] + d[n / 2]) };
    (med * med / ((s + 1) as f64).ln()).max(BANDWIDTH_FLOOR)
}

pub fn kernel_matrix(particles: &[Vec<f64>], h: f64) -> Vec<Vec<f64>> {
    let s = particles.len();
    let mut k = vec![vec![0.0; s]; s];
    for i in 0..s {
        k[i][i] = 1.0;
        for j in i + 1..s {
            let v = (-sq_dist(&particles[i], &particles[j]) / h).exp();
            k[i][j] = v;
            k[j][i] = v;
        }
    }
    k
}

/// `φ(θᵢ) = (1/S) Σⱼ [κ(θⱼ, θᵢ) ∇log π(θⱼ) + ∇_{θⱼ} κ(θⱼ, θᵢ)]`.
pub fn svgd_phi(particles: &[Vec<f64>], grads: &[Vec<f64>], h: f64) -> Vec<Vec<f64>> {
    let s = particles.len();
    let inv = s as f64;
    particles
        .iter()
        .map(|ti| {
            let mut acc = vec![0.0; ti.len()];
            for (tj, gj) in particles.iter().zip(grads) {
                let k = (-sq_dist(tj, ti) / h).exp();
                for d in 0..acc.len() {
                    acc[d] += k * gj[d] + -(2.0 / h) * (tj[d] - ti[d]) * k;
                }
            }
            acc.iter_mut().for_each(|a| *a /= inv);
            acc
        })
        .collect()
}

/// How `φ` moves a particle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "lowercase")]
pub enum StepRule {
    Adam(AdamConfig),
    Plain { lr: f64 },
}

impl StepRule {
    pub fn validate(&self) -> Result<(), InferenceError> {
        match self {
            StepRule::Adam(cfg) => cfg.validate(),
            StepRule::Plain { lr } if *lr > 0.0 && lr.is_finite() => Ok(()),
            StepRule::Plain { lr } => Err(InferenceError::Invalid(format!("step size must be positive, got {lr}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParticleEnsemble {
    pub particles: Vec<Vec<f64>>,
    pub iteration: usize,
    pub seed: u64,
    optim: Vec<Adam>,
}

impl ParticleEnsemble {
    pub fn new(particles: Vec<Vec<f64>>, seed: u64) -> Result<Self, InferenceError> {
        let Some(first) = particles.first() else {
            return Err(InferenceError::Invalid("ensemble needs at least one particle".into()));
        };
        let dim = first.len();
        if particles.iter().any(|p| p.len() != dim) {
            return Err(InferenceError::Invalid("particles differ in dimension".into()));
        }
        if particles.iter().flatten().any(|v| !v.is_finite()) {
            return Err(InferenceError::NonFinite("initial particles".into()));
        }
        Ok(Self {
            particles,
            iteration: 0,
            seed,
            optim: Vec::new(),
        })
    }

    /// `count` particles `center + sd·ξ`, `ξ ~ N(0, I)`.
    pub fn around(center: &[f64], count: usize, sd: f64, seed: u64) -> Result<Self, InferenceError> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let particles = (0..count)
            .map(|_| {
                center
                    .iter()
                    .map(|c| {
                        let z: f64 = StandardNormal.sample(&mut rng);
                        c + sd * z
                    })
                    .collect()
            })
            .collect();
        Self::new(particles, seed)
    }

    pub fn len(&self) -> usize {
        self.particles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.particles.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.particles[0].len()
    }

    /// Smallest pairwise Euclidean distance (infinite for one particle).
    pub fn min_pairwise_distance(&self) -> f64 {
        let mut best = f64::INFINITY;
        for i in 0..self.len() {
            for j in i + 1..self.len() {
                best = best.min(sq_dist(&self.particles[i], &self.particles[j]).sqrt());
            }
        }
        best
    }
}

/// One synchronous SVGD update. Returns the mean `‖φ‖`.
pub fn svgd_step<D: LogDensity + ?Sized>(
    ens: &mut ParticleEnsemble,
    density: &D,
    kernel: &KernelSpec,
    rule: &StepRule,
) -> Result<f64, InferenceError> {
    if ens.dim() != density.dim() {
        return Err(InferenceError::Invalid(format!(
            "particles have {} entries, density has {}",
            ens.dim(),
            density.dim()
        )));
    }
    let grads = ens
        .particles
        .par_iter()
        .map(|t| density.value_and_grad(t).map(|(_, g)| g))
        .collect::<Result<Vec<_>, _>>()?;
    let h = kernel.resolve(&ens.particles);
    let phi = svgd_phi(&ens.particles, &grads, h);
    if let StepRule::Adam(cfg) = rule {
        if ens.optim.len() != ens.len() || ens.optim[0].cfg != *cfg {
            ens.optim = (0..ens.len()).map(|_| Adam::new(*cfg, ens.dim())).collect();
        }
    }
    for (i, (theta, f)) in ens.particles.iter_mut().zip(&phi).enumerate() {
        match rule {
            StepRule::Adam(_) => ens.optim[i].ascend(theta, f),
            StepRule::Plain { lr } => theta.iter_mut().zip(f).for_each(|(t, d)| *t += lr * d),
        }
        density.constrain(theta);
        if theta.iter().any(|v| !v.is_finite()) {
            return Err(InferenceError::NonFinite(format!("SVGD particle {i}")));
        }
    }
    ens.iteration += 1;
    let norm: f64 = phi.iter().map(|f| f.iter().map(|v| v * v).sum::<f64>().sqrt()).sum();
    Ok(norm / ens.len() as f64)
}

/// `iterations` SVGD steps; the trace holds the mean `‖φ‖` of each.
pub fn svgd_run<D: LogDensity + ?Sized>(
    ens: &mut ParticleEnsemble,
    density: &D,
    kernel: &KernelSpec,
    rule: &StepRule,
    iterations: usize,
) -> Result<PosteriorSamples, InferenceError> {
    kernel.validate()?;
    rule.validate()?;
    let mut trace = Vec::with_capacity(iterations);
    for _ in 0..iterations {
        trace.push(svgd_step(ens, density, kernel, rule)?);
    }
    Ok(PosteriorSamples {
        method: "svgd".into(),
        seed: ens.seed,
        iterations: ens.iteration,
        samples: ens.particles.clone(),
        trace,
        acceptance: None,
    })
}

/// SVGD against `−½(θ − m)ᵀΛ(θ − m) − λ₁‖θ‖₁`.
pub fn sparsifying_prior_svgd(
    target: &GaussianL1,
    ens: &mut ParticleEnsemble,
    kernel: &KernelSpec,
    rule: &StepRule,
    iterations: usize,
) -> Result<PosteriorSamples, InferenceError> {
    let mut out = svgd_run(ens, target, kernel, rule, iterations)?;
    out.method = "svgd-l1".into();
    Ok(out)
}
