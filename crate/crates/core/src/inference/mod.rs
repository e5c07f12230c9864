//! Posterior inference: MAP training, SVGD, projected SVGD and HMC.

mod hmc;
mod optim;
mod posterior;
mod psvgd;
mod svgd;

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::models::ModelError;
use crate::sparsify::SparsifyError;

pub use hmc::{hmc_run, leapfrog, HmcConfig};
pub use optim::{train_map, train_map_l0, Adam, AdamConfig, L0Training, MapResult};
pub use posterior::{likelihood_sigma, Clamped, GaussianL1, LogDensity, LogPosteriorModel, Prior};
pub use psvgd::{
    active_subspace, active_subspace_from_factor, gauss_newton_hessian, gauss_newton_factor, jacobi_eigen,
    psvgd_run, Reduced, SubspaceProjector,
};
pub use svgd::{
    kernel_matrix, median_bandwidth, rbf_kernel, sparsifying_prior_svgd, svgd_phi, svgd_run, svgd_step, KernelSpec,
    ParticleEnsemble, StepRule, BANDWIDTH_FLOOR,
};

#[derive(Debug, Error)]
pub enum InferenceError {
    #[error("invalid configuration: {0}")]
    Invalid(String),
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("every eigenvalue is zero; no informative subspace")]
    DegenerateSpectrum,
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Sparsify(#[from] SparsifyError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

/// Final particles or retained chain states.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorSamples {
    pub method: String,
    pub seed: u64,
    pub iterations: usize,
    pub samples: Vec<Vec<f64>>,
    /// Mean `‖φ‖` per SVGD iteration; empty for HMC.
    pub trace: Vec<f64>,
    pub acceptance: Option<f64>,
}

impl PosteriorSamples {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.samples.first().map_or(0, Vec::len)
    }

    /// Per-coordinate sample mean.
    pub fn mean(&self) -> Vec<f64> {
        let n = self.samples.len() as f64;
        let mut m = vec![0.0; self.dim()];
        for s in &self.samples {
            for (a, b) in m.iter_mut().zip(s) {
                *a += b / n;
            }
        }
        m
    }

    /// Values of coordinate `k` across samples.
    pub fn marginal(&self, k: usize) -> Vec<f64> {
        self.samples.iter().map(|s| s[k]).collect()
    }
}

#[derive(Serialize, Deserialize)]
struct SampleRecord {
    method: String,
    seed: u64,
    iteration: usize,
    index: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    acceptance: Option<f64>,
    params: Vec<f64>,
}

/// One JSON object per sample, one sample per line.
pub fn format_samples(s: &PosteriorSamples) -> String {
    let mut out = String::new();
    for (index, params) in s.samples.iter().enumerate() {
        let rec = SampleRecord {
            method: s.method.clone(),
            seed: s.seed,
            iteration: s.iterations,
            index,
            acceptance: s.acceptance,
            params: params.clone(),
        };
        writeln!(out, "{}", serde_json::to_string(&rec).expect("plain data serializes")).unwrap();
    }
    out
}

pub fn parse_samples(text: &str) -> Result<PosteriorSamples, InferenceError> {
    let mut out: Option<PosteriorSamples> = None;
    for (idx, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let err = |message: String| InferenceError::Parse { line: idx + 1, message };
        let rec: SampleRecord = serde_json::from_str(line).map_err(|e| err(e.to_string()))?;
        let s = out.get_or_insert_with(|| PosteriorSamples {
            method: rec.method.clone(),
            seed: rec.seed,
            iterations: rec.iteration,
            samples: Vec::new(),
            trace: Vec::new(),
            acceptance: rec.acceptance,
        });
        if rec.index != s.samples.len() {
            return Err(err(format!("expected sample index {}, found {}", s.samples.len(), rec.index)));
        }
        if s.dim() != 0 && rec.params.len() != s.dim() {
            return Err(err(format!("expected {} parameters, found {}", s.dim(), rec.params.len())));
        }
        s.samples.push(rec.params);
    }
    out.ok_or_else(|| InferenceError::Parse {
        line: 0,
        message: "no samples".into(),
    })
}

pub fn write_samples(path: &Path, s: &PosteriorSamples) -> Result<(), InferenceError> {
    std::fs::write(path, format_samples(s))?;
    Ok(())
}

pub fn read_samples(path: &Path) -> Result<PosteriorSamples, InferenceError> {
    parse_samples(&std::fs::read_to_string(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn samples_roundtrip() {
        let s = PosteriorSamples {
            method: "svgd".into(),
            seed: 9,
            iterations: 12,
            samples: vec![vec![0.1, -2.5e-17], vec![3.0, 1e300]],
            trace: vec![],
            acceptance: None,
        };
        let text = format_samples(&s);
        assert_eq!(text.lines().count(), 2);
        assert_eq!(parse_samples(&text).unwrap(), s);
        assert!(parse_samples("").is_err());
        let bad = text.replace("\"index\":1", "\"index\":5");
        assert!(matches!(parse_samples(&bad), Err(InferenceError::Parse { line: 2, .. })));
    }
}
