//! Hamiltonian Monte Carlo with identity mass.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::posterior::LogDensity;
use super::{InferenceError, PosteriorSamples};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HmcConfig {
    pub step_size: f64,
    pub leapfrog_steps: usize,
    /// Transitions after burn-in.
    pub chain_length: usize,
    pub burn_in: usize,
    pub thin: usize,
}

impl HmcConfig {
    pub fn validate(&self) -> Result<(), InferenceError> {
        if !(self.step_size >= 0.0 && self.step_size.is_finite()) {
            return Err(InferenceError::Invalid(format!("HMC step size must be >= 0, got {}", self.step_size)));
        }
        if self.leapfrog_steps == 0 || self.thin == 0 || self.chain_length == 0 {
            return Err(InferenceError::Invalid(
                "HMC needs leapfrog_steps, thin and chain_length >= 1".into(),
            ));
        }
        Ok(())
    }
}

/// `L` leapfrog steps from `(q, p)` given the gradient at `q`. Returns the
/// end state and the gradient there.
pub fn leapfrog<D: LogDensity + ?Sized>(
    density: &D,
    q: &[f64],
    p: &[f64],
    grad: &[f64],
    step: f64,
    steps: usize,
) -> Result<(Vec<f64>, Vec<f64>, f64, Vec<f64>), InferenceError> {
    let mut q = q.to_vec();
    let mut p = p.to_vec();
    let mut g = grad.to_vec();
    let mut value = f64::NAN;
    for _ in 0..steps {
        for (pi, gi) in p.iter_mut().zip(&g) {
            *pi += 0.5 * step * gi;
        }
        for (qi, pi) in q.iter_mut().zip(&p) {
            *qi += step * pi;
        }
        let (v, ng) = density.value_and_grad(&q)?;
        value = v;
        g = ng;
        for (pi, gi) in p.iter_mut().zip(&g) {
            *pi += 0.5 * step * gi;
        }
    }
    Ok((q, p, value, g))
}

fn kinetic(p: &[f64]) -> f64 {
    0.5 * p.iter().map(|v| v * v).sum::<f64>()
}

/// Metropolis-corrected HMC. Proposals that leave the feasible set or hit
/// a non-finite energy are rejected.
pub fn hmc_run<D: LogDensity + ?Sized>(
    density: &D,
    init: &[f64],
    cfg: &HmcConfig,
    seed: u64,
) -> Result<PosteriorSamples, InferenceError> {
    cfg.validate()?;
    if init.len() != density.dim() {
        return Err(InferenceError::Invalid("initial state dimension differs from the density".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut q = init.to_vec();
    density.constrain(&mut q);
    let (mut value, mut grad) = density.value_and_grad(&q)?;
    if !value.is_finite() {
        return Err(InferenceError::NonFinite("HMC initial state".into()));
    }
    let mut samples = Vec::with_capacity(cfg.chain_length / cfg.thin);
    let mut accepted = 0usize;
    for it in 0..cfg.burn_in + cfg.chain_length {
        let p: Vec<f64> = (0..q.len()).map(|_| StandardNormal.sample(&mut rng)).collect();
        let h0 = -value + kinetic(&p);
        let u: f64 = rng.gen();
        let proposal = leapfrog(density, &q, &p, &grad, cfg.step_size, cfg.leapfrog_steps);
        let mut accept = false;
        if let Ok((nq, np, nv, ng)) = proposal {
            let mut projected = nq.clone();
            density.constrain(&mut projected);
            let h1 = -nv + kinetic(&np);
            let finite = h1.is_finite() && ng.iter().all(|g| g.is_finite());
            if finite && projected == nq && u.ln() < h0 - h1 {
                q = nq;
                value = nv;
                grad = ng;
                accept = true;
            }
        }
        if it >= cfg.burn_in {
            accepted += usize::from(accept);
            if (it - cfg.burn_in).is_multiple_of(cfg.thin) {
                samples.push(q.clone());
            }
        }
    }
    Ok(PosteriorSamples {
        method: "hmc".into(),
        seed,
        iterations: cfg.burn_in + cfg.chain_length,
        samples,
        trace: Vec::new(),
        acceptance: Some(accepted as f64 / cfg.chain_length as f64),
    })
}
